//! Atomic models and the PDB fixed-column format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const SYMBOLS: [&str; 92] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce",
    "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir",
    "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",
];

/// A chemical element, stored as its atomic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const S: Element = Element(16);

    pub fn from_atomic_number(z: u8) -> Option<Self> {
        (1..=SYMBOLS.len() as u8).contains(&z).then_some(Element(z))
    }

    /// Case-insensitive symbol lookup (`"FE"`, `"Fe"`, `"fe"`). Deuterium maps to hydrogen.
    pub fn from_symbol(symbol: &str) -> Option<Self> {
        let s = symbol.trim();
        if s.eq_ignore_ascii_case("D") {
            return Some(Element::H);
        }
        SYMBOLS.iter().position(|sym| sym.eq_ignore_ascii_case(s)).map(|i| Element(i as u8 + 1))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize - 1]
    }

    pub fn is_hydrogen(self) -> bool {
        self.0 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    pub pos: Vec3,
    pub chain_id: char,
    pub res_index: i32,
    pub res_name: String,
    pub atom_name: String,
}

impl Atom {
    pub fn new(element: Element, pos: Vec3, chain_id: char, res_index: i32, res_name: &str, atom_name: &str) -> Self {
        Atom { element, pos, chain_id, res_index, res_name: res_name.to_string(), atom_name: atom_name.to_string() }
    }
}

/// Ordered heavy-atom model. Atom order defines the sampler's coordinate layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomicModel {
    pub atoms: Vec<Atom>,
    pub provenance: String,
}

impl AtomicModel {
    pub fn new(atoms: Vec<Atom>) -> Self {
        AtomicModel { atoms, provenance: String::new() }
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn coords(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.pos).collect()
    }

    /// Same metadata, new coordinates.
    pub fn with_coords(&self, coords: &[Vec3]) -> AtomicModel {
        assert_eq!(coords.len(), self.atoms.len(), "coordinate count mismatch");
        let atoms = self.atoms.iter().zip(coords).map(|(a, p)| Atom { pos: *p, ..a.clone() }).collect();
        AtomicModel { atoms, provenance: self.provenance.clone() }
    }

    fn filtered(&self, keep: impl Fn(&Atom) -> bool) -> AtomicModel {
        AtomicModel {
            atoms: self.atoms.iter().filter(|a| keep(a)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}

pub fn ca_subset(model: &AtomicModel) -> AtomicModel {
    model.filtered(|a| a.atom_name == "CA")
}

pub fn residue_range_subset(model: &AtomicModel, chain: char, lo: i32, hi: i32) -> AtomicModel {
    model.filtered(|a| a.chain_id == chain && (lo..=hi).contains(&a.res_index))
}

fn column(line: &str, start: usize, end: usize) -> &str {
    // 1-based inclusive PDB columns; short lines yield empty fields
    let len = line.len();
    if start > len {
        return "";
    }
    line.get(start - 1..end.min(len)).unwrap_or("")
}

fn infer_element(raw_name: &str) -> Option<Element> {
    let first = raw_name.chars().next().unwrap_or(' ');
    if first == ' ' || first.is_ascii_digit() {
        let c = raw_name.chars().find(|c| c.is_ascii_alphabetic())?;
        Element::from_symbol(&c.to_string())
    } else {
        let two: String = raw_name.chars().take(2).collect();
        Element::from_symbol(&two).or_else(|| Element::from_symbol(&first.to_string()))
    }
}

pub fn read_pdb(path: impl AsRef<Path>) -> Result<AtomicModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    Ok(parse_pdb(&text)?.with_provenance(path.display().to_string()))
}

/// Parses ATOM records of the first model. HETATM, hydrogens, zero-occupancy
/// atoms and alternate locations other than ' '/'A' are dropped.
pub fn parse_pdb(text: &str) -> Result<AtomicModel> {
    let mut atoms = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let record = column(line, 1, 6);
        if record.starts_with("ENDMDL") {
            break;
        }
        if record != "ATOM  " && record.trim_end() != "ATOM" {
            continue;
        }
        let altloc = column(line, 17, 17);
        if !(altloc.is_empty() || altloc == " " || altloc == "A") {
            continue;
        }
        let occupancy = column(line, 55, 60).trim();
        if !occupancy.is_empty() {
            let occ: f64 = occupancy
                .parse()
                .map_err(|_| Error::FormatAt { line: line_no, msg: format!("bad occupancy {occupancy:?}") })?;
            if occ <= 0.0 {
                continue;
            }
        }
        let mut pos = [0f64; 3];
        for (a, (s, e)) in [(31, 38), (39, 46), (47, 54)].into_iter().enumerate() {
            let field = column(line, s, e).trim();
            pos[a] = field.parse().map_err(|_| Error::FormatAt {
                line: line_no,
                msg: format!("bad coordinate field {field:?} in columns {s}-{e}"),
            })?;
            if !pos[a].is_finite() {
                return Err(Error::FormatAt { line: line_no, msg: "non-finite coordinate".into() });
            }
        }
        let raw_name = column(line, 13, 16);
        let symbol = column(line, 77, 78).trim();
        let element =
            if symbol.is_empty() { infer_element(raw_name) } else { Element::from_symbol(symbol) }.ok_or_else(
                || Error::FormatAt { line: line_no, msg: format!("cannot determine element of atom {raw_name:?}") },
            )?;
        if element.is_hydrogen() {
            continue;
        }
        let res_field = column(line, 23, 26).trim();
        let res_index: i32 = res_field
            .parse()
            .map_err(|_| Error::FormatAt { line: line_no, msg: format!("bad residue number {res_field:?}") })?;
        atoms.push(Atom {
            element,
            pos: Vec3::new(pos[0], pos[1], pos[2]),
            chain_id: column(line, 22, 22).chars().next().unwrap_or(' '),
            res_index,
            res_name: column(line, 18, 20).trim().to_string(),
            atom_name: raw_name.trim().to_string(),
        });
    }
    if atoms.is_empty() {
        return Err(Error::EmptyModel);
    }
    Ok(AtomicModel::new(atoms))
}

pub fn write_pdb(model: &AtomicModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_pdb(model)?;
    fs::write(path, text).map_err(|e| Error::io_at(path, e))
}

fn coord_field(v: f64) -> Result<String> {
    let s = format!("{v:8.3}");
    if s.len() > 8 || !v.is_finite() {
        return Err(Error::CoordinateOverflow(v));
    }
    Ok(s)
}

fn padded_atom_name(atom: &Atom) -> String {
    let name = &atom.atom_name;
    if name.len() < 4 && atom.element.symbol().len() == 1 {
        format!(" {name:<3}")
    } else {
        format!("{name:<4}")
    }
}

pub fn format_pdb(model: &AtomicModel) -> Result<String> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut out = String::new();
    let mut serial = 1;
    for (i, atom) in model.atoms.iter().enumerate() {
        let x = coord_field(atom.pos.x)?;
        let y = coord_field(atom.pos.y)?;
        let z = coord_field(atom.pos.z)?;
        writeln!(
            out,
            "ATOM  {:>5} {} {:>3} {}{:>4}    {}{}{}  1.00  0.00          {:>2}",
            serial % 100_000,
            padded_atom_name(atom),
            atom.res_name,
            atom.chain_id,
            atom.res_index,
            x,
            y,
            z,
            atom.element.symbol().to_ascii_uppercase(),
        )
        .unwrap();
        serial += 1;
        let chain_ends = model.atoms.get(i + 1).is_none_or(|next| next.chain_id != atom.chain_id);
        if chain_ends {
            writeln!(
                out,
                "TER   {:>5}      {:>3} {}{:>4}",
                serial % 100_000,
                atom.res_name,
                atom.chain_id,
                atom.res_index
            )
            .unwrap();
            serial += 1;
        }
    }
    out.push_str("END\n");
    Ok(out)
}
