//! Model-to-reference and model-to-map scores.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::alignment::{kabsch, RigidTransform};
use crate::error::{Error, Result};
use crate::forward::simulate_map;
use crate::geometry::{rmsd, Vec3};
use crate::structure::AtomicModel;
use crate::volume::DensityMap;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmsd_all: f64,
    pub rmsd_ca: f64,
    pub rmsd_local: Option<f64>,
    pub tm_score: f64,
    pub rscc: Option<f64>,
    pub paired_ca: usize,
    pub paired_atoms: usize,
    /// Sample atoms without a partner in the reference.
    pub unpaired_atoms: usize,
    /// Superposition of the sample onto the reference.
    pub superposition: RigidTransform,
}

impl EvalReport {
    /// `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        format!(
            "rmsd_all={:.6}\nrmsd_ca={:.6}\nrmsd_local={}\ntm_score={:.6}\nrscc={}\npaired_ca={}\npaired_atoms={}\nunpaired_atoms={}\n",
            self.rmsd_all,
            self.rmsd_ca,
            opt(self.rmsd_local),
            self.tm_score,
            opt(self.rscc),
            self.paired_ca,
            self.paired_atoms,
            self.unpaired_atoms
        )
    }
}

/// TM-score distance scale.
pub fn d0(l: usize) -> f64 {
    (1.24 * (l as f64 - 15.0).cbrt() - 1.8).max(0.5)
}

/// TM-score of already superposed paired Cα, normalized by `l_ref`.
pub fn tm_score_aligned(sample: &[Vec3], reference: &[Vec3], l_ref: usize) -> f64 {
    assert_eq!(sample.len(), reference.len());
    if l_ref == 0 {
        return 0.0;
    }
    let d0 = d0(l_ref);
    let sum: f64 = sample
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            let r = (a - b).norm() / d0;
            1.0 / (1.0 + r * r)
        })
        .sum();
    sum / l_ref as f64
}

pub fn tm_score(sample: &[Vec3], reference: &[Vec3]) -> Result<f64> {
    let (t, _) = kabsch(sample, reference)?;
    Ok(tm_score_aligned(&t.apply_all(sample), reference, reference.len()))
}

/// Pearson correlation between `map` and the map simulated from `model`.
pub fn rscc(model: &AtomicModel, map: &DensityMap, resolution: f64) -> Result<f64> {
    if !(map.variance() > 0.0) {
        return Err(Error::ZeroVariance("experimental map"));
    }
    let sim = simulate_map(model, &map.grid, resolution)?;
    match map.correlation(&sim) {
        Err(Error::ZeroVariance(_)) => Err(Error::ZeroVariance("simulated map")),
        other => other,
    }
}

type CaKey = (char, i32);
type AtomKey = (char, i32, String);

fn ca_pairs(sample: &AtomicModel, reference: &AtomicModel) -> (Vec<Vec3>, Vec<Vec3>, usize) {
    let is_ca = |name: &str| name.trim() == "CA";
    let reference_ca: HashMap<CaKey, Vec3> =
        reference.atoms.iter().filter(|a| is_ca(&a.atom_name)).map(|a| ((a.chain_id, a.res_index), a.pos)).collect();
    let l_ref = reference.atoms.iter().filter(|a| is_ca(&a.atom_name)).count();
    let (mut s, mut r) = (Vec::new(), Vec::new());
    for a in sample.atoms.iter().filter(|a| is_ca(&a.atom_name)) {
        if let Some(p) = reference_ca.get(&(a.chain_id, a.res_index)) {
            s.push(a.pos);
            r.push(*p);
        }
    }
    (s, r, l_ref)
}

/// Superpose `sample` onto `reference` on paired Cα and score it.
///
/// `map` is the experimental map with its resolution; the sample is scored
/// against it as given, without superposition.
pub fn evaluate(
    sample: &AtomicModel,
    reference: &AtomicModel,
    map: Option<(&DensityMap, f64)>,
    local_range: Option<(char, i32, i32)>,
) -> Result<EvalReport> {
    let (s_ca, r_ca, l_ref) = ca_pairs(sample, reference);
    if s_ca.len() < 3 {
        return Err(Error::Pairing(format!("only {} paired CA atoms, need at least 3", s_ca.len())));
    }
    let (superposition, rmsd_ca) = kabsch(&s_ca, &r_ca)?;
    let tm_score = tm_score_aligned(&superposition.apply_all(&s_ca), &r_ca, l_ref);

    let reference_atoms: HashMap<AtomKey, Vec3> =
        reference.atoms.iter().map(|a| ((a.chain_id, a.res_index, a.atom_name.trim().to_string()), a.pos)).collect();
    let mut pairs: Vec<(&crate::structure::Atom, Vec3)> = Vec::new();
    for a in &sample.atoms {
        if let Some(p) = reference_atoms.get(&(a.chain_id, a.res_index, a.atom_name.trim().to_string())) {
            pairs.push((a, *p));
        }
    }
    let unpaired_atoms = sample.len() - pairs.len();
    if unpaired_atoms > 0 {
        log::debug!("{unpaired_atoms} sample atoms have no reference partner");
    }
    let moved: Vec<Vec3> = pairs.iter().map(|(a, _)| superposition.apply(&a.pos)).collect();
    let targets: Vec<Vec3> = pairs.iter().map(|(_, p)| *p).collect();
    let rmsd_all = rmsd(&moved, &targets);

    let rmsd_local = match local_range {
        None => None,
        Some((chain, lo, hi)) => {
            let idx: Vec<usize> = pairs
                .iter()
                .enumerate()
                .filter(|(_, (a, _))| a.chain_id == chain && (lo..=hi).contains(&a.res_index))
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(Error::Pairing(format!("no paired atoms in chain {chain} residues {lo}..={hi}")));
            }
            let a: Vec<Vec3> = idx.iter().map(|&i| moved[i]).collect();
            let b: Vec<Vec3> = idx.iter().map(|&i| targets[i]).collect();
            Some(rmsd(&a, &b))
        }
    };
    let rscc = map.map(|(m, res)| rscc(sample, m, res)).transpose()?;
    Ok(EvalReport {
        rmsd_all,
        rmsd_ca,
        rmsd_local,
        tm_score,
        rscc,
        paired_ca: s_ca.len(),
        paired_atoms: pairs.len(),
        unpaired_atoms,
        superposition,
    })
}

/// Sample indices by descending RSCC, ties by index. Samples that fail to
/// score are left out.
pub fn rank_samples(samples: &[AtomicModel], map: &DensityMap, resolution: f64) -> Vec<usize> {
    let scores: Vec<Option<f64>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| match rscc(s, map, resolution) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("sample {i} skipped in ranking: {e}");
                None
            }
        })
        .collect();
    let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| scores[i].is_some()).collect();
    idx.sort_by(|&a, &b| scores[b].unwrap().total_cmp(&scores[a].unwrap()).then(a.cmp(&b)));
    idx
}

/// Sample indices by ascending all-atom RMSD to `reference`, ties by index.
pub fn rank_samples_by_rmsd(samples: &[AtomicModel], reference: &AtomicModel) -> Result<Vec<usize>> {
    let scores: Vec<f64> =
        samples.par_iter().map(|s| evaluate(s, reference, None, None).map(|r| r.rmsd_all)).collect::<Result<_>>()?;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    Ok(idx)
}
