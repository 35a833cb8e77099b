//! MRC2014 reader and writer.
//!
//! Reads modes 0 (int8), 1 (int16) and 2 (float32); always writes mode 2.
//! Non-standard axis orders (MAPC/MAPR/MAPS) are transposed to x-fastest on
//! read. The nominal resolution, when present, travels in a header label.

use std::fs;
use std::io;
use std::path::Path;

use super::{DensityMap, Grid};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const MRC_HEADER_LEN: usize = 1024;

const LABEL_LEN: usize = 80;
const RESOLUTION_KEY: &str = "resolution=";

fn word_i32(buf: &[u8], word: usize) -> i32 {
    let o = 4 * word;
    i32::from_le_bytes([buf[o], buf[o + 1], buf[o + 2], buf[o + 3]])
}

fn word_f32(buf: &[u8], word: usize) -> f32 {
    let o = 4 * word;
    f32::from_le_bytes([buf[o], buf[o + 1], buf[o + 2], buf[o + 3]])
}

fn put_i32(buf: &mut [u8], word: usize, v: i32) {
    buf[4 * word..4 * word + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], word: usize, v: f32) {
    buf[4 * word..4 * word + 4].copy_from_slice(&v.to_le_bytes());
}

pub fn read_mrc(path: impl AsRef<Path>) -> Result<DensityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    read_mrc_bytes(&bytes)
}

pub fn read_mrc_bytes(bytes: &[u8]) -> Result<DensityMap> {
    if bytes.len() < MRC_HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {MRC_HEADER_LEN}-byte MRC header",
            bytes.len()
        )));
    }
    let h = &bytes[..MRC_HEADER_LEN];
    if &h[208..211] != b"MAP" {
        return Err(Error::Format("missing MAP magic at byte 208".into()));
    }
    if h[212] == 0x11 {
        return Err(Error::Unsupported("big-endian MRC files".into()));
    }

    let ncrs = [word_i32(h, 0), word_i32(h, 1), word_i32(h, 2)];
    if ncrs.iter().any(|&n| n < 1) {
        return Err(Error::Format(format!("invalid dimensions {ncrs:?}")));
    }
    let ncrs = ncrs.map(|n| n as usize);
    let mode = word_i32(h, 3);
    let bytes_per_voxel = match mode {
        0 => 1,
        1 => 2,
        2 => 4,
        other => return Err(Error::Unsupported(format!("MRC mode {other}"))),
    };
    let nstart_crs = [word_i32(h, 4), word_i32(h, 5), word_i32(h, 6)];
    let sampling = [word_i32(h, 7), word_i32(h, 8), word_i32(h, 9)];
    let cella = [word_f32(h, 10), word_f32(h, 11), word_f32(h, 12)];

    let mut axes = [word_i32(h, 16), word_i32(h, 17), word_i32(h, 18)];
    if axes == [0, 0, 0] {
        axes = [1, 2, 3];
    }
    let mut sorted = axes;
    sorted.sort_unstable();
    if sorted != [1, 2, 3] {
        return Err(Error::Format(format!("MAPC/MAPR/MAPS {axes:?} is not a permutation of 1,2,3")));
    }
    // axis[c] is the xyz axis stored along file dimension c (columns, rows, sections)
    let axis = axes.map(|a| (a - 1) as usize);

    let mut dims = [0usize; 3];
    let mut nstart = [0i32; 3];
    for c in 0..3 {
        dims[axis[c]] = ncrs[c];
        nstart[axis[c]] = nstart_crs[c];
    }

    let mut spacing = [0f64; 3];
    for a in 0..3 {
        let m = if sampling[a] > 0 { sampling[a] as usize } else { dims[a] };
        spacing[a] = cella[a] as f64 / m as f64;
    }
    if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Format(format!("invalid cell dimensions {cella:?}")));
    }
    let voxel_size = spacing[0];
    if spacing.iter().any(|s| (s - voxel_size).abs() > 1e-4 * voxel_size) {
        return Err(Error::Unsupported(format!("anisotropic voxel size {spacing:?}")));
    }

    let header_origin = Vec3::new(word_f32(h, 49) as f64, word_f32(h, 50) as f64, word_f32(h, 51) as f64);
    let origin = if header_origin != Vec3::zeros() {
        header_origin
    } else {
        Vec3::new(nstart[0] as f64, nstart[1] as f64, nstart[2] as f64) * voxel_size
    };

    let nsymbt = word_i32(h, 23);
    if nsymbt < 0 {
        return Err(Error::Format(format!("negative extended header size {nsymbt}")));
    }
    let offset = MRC_HEADER_LEN + nsymbt as usize;
    let n = ncrs[0] * ncrs[1] * ncrs[2];
    let need = n * bytes_per_voxel;
    let available = bytes.len().saturating_sub(offset);
    if available < need {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("truncated MRC payload: expected {need} bytes, found {available}"),
        )));
    }
    let payload = &bytes[offset..offset + need];

    let value = |idx: usize| -> f64 {
        match mode {
            0 => payload[idx] as i8 as f64,
            1 => i16::from_le_bytes([payload[2 * idx], payload[2 * idx + 1]]) as f64,
            _ => {
                f32::from_le_bytes([payload[4 * idx], payload[4 * idx + 1], payload[4 * idx + 2], payload[4 * idx + 3]])
                    as f64
            }
        }
    };

    let grid = Grid::new(dims, voxel_size, origin)?;
    let mut data = vec![0.0; n];
    if axis == [0, 1, 2] {
        for (idx, slot) in data.iter_mut().enumerate() {
            *slot = value(idx);
        }
    } else {
        let mut file_idx = 0;
        for s in 0..ncrs[2] {
            for r in 0..ncrs[1] {
                for c in 0..ncrs[0] {
                    let mut xyz = [0usize; 3];
                    xyz[axis[0]] = c;
                    xyz[axis[1]] = r;
                    xyz[axis[2]] = s;
                    data[grid.index(xyz[0], xyz[1], xyz[2])] = value(file_idx);
                    file_idx += 1;
                }
            }
        }
    }

    let nlabl = word_i32(h, 55).clamp(0, 10) as usize;
    let resolution = (0..nlabl).find_map(|l| {
        let start = 224 + l * LABEL_LEN;
        let label = String::from_utf8_lossy(&h[start..start + LABEL_LEN]);
        let pos = label.find(RESOLUTION_KEY)?;
        label[pos + RESOLUTION_KEY.len()..].split_whitespace().next()?.parse::<f64>().ok()
    });

    Ok(DensityMap { grid, data, resolution })
}

/// Writes a mode-2 MRC2014 file. Intensities are stored as `f32`.
pub fn write_mrc(map: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_mrc_bytes(map)).map_err(|e| Error::io_at(path, e))
}

pub fn write_mrc_bytes(map: &DensityMap) -> Vec<u8> {
    let g = &map.grid;
    let n = g.len();
    let mut out = vec![0u8; MRC_HEADER_LEN + 4 * n];
    let h = &mut out[..MRC_HEADER_LEN];
    for a in 0..3 {
        put_i32(h, a, g.dims[a] as i32);
        put_i32(h, 7 + a, g.dims[a] as i32);
        put_f32(h, 10 + a, (g.dims[a] as f64 * g.voxel_size) as f32);
        put_f32(h, 13 + a, 90.0);
        put_i32(h, 16 + a, a as i32 + 1);
        put_f32(h, 49 + a, g.origin[a] as f32);
    }
    put_i32(h, 3, 2);

    let values: Vec<f32> = map.data.iter().map(|&v| v as f32).collect();
    let (mut lo, mut hi, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0f64);
    for &v in &values {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v as f64;
    }
    let mean = sum / n as f64;
    let rms = (values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    put_f32(h, 19, lo);
    put_f32(h, 20, hi);
    put_f32(h, 21, mean as f32);
    put_i32(h, 22, 1);
    put_i32(h, 23, 0);
    h[104..108].copy_from_slice(b"MRCO");
    put_i32(h, 27, 20140);
    h[208..212].copy_from_slice(b"MAP ");
    h[212..216].copy_from_slice(&[0x44, 0x44, 0x00, 0x00]);
    put_f32(h, 54, rms as f32);

    let mut labels = vec![String::from("cryoguide")];
    if let Some(res) = map.resolution {
        labels[0].push_str(&format!(" {RESOLUTION_KEY}{res}"));
    }
    put_i32(h, 55, labels.len() as i32);
    for (l, text) in labels.iter().enumerate() {
        let bytes = text.as_bytes();
        let len = bytes.len().min(LABEL_LEN);
        let start = 224 + l * LABEL_LEN;
        h[start..start + len].copy_from_slice(&bytes[..len]);
        h[start + len..start + LABEL_LEN].fill(b' ');
    }

    for (slot, v) in out[MRC_HEADER_LEN..].chunks_exact_mut(4).zip(&values) {
        slot.copy_from_slice(&v.to_le_bytes());
    }
    out
}
