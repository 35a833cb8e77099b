//! Map preparation: thresholding, dusting, cropping/padding and masking.
//!
//! None of these change the world position of a retained voxel.

use std::collections::VecDeque;

use super::{DensityMap, Grid};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::structure::AtomicModel;

/// Zeroes every voxel strictly below `level`.
pub fn threshold(map: &DensityMap, level: f64) -> DensityMap {
    let mut out = map.clone();
    for v in &mut out.data {
        if *v < level {
            *v = 0.0;
        }
    }
    out
}

/// Removes 26-connected components of nonzero voxels smaller than `min_size`.
pub fn dust(map: &DensityMap, min_size: usize) -> DensityMap {
    let g = &map.grid;
    let [nx, ny, nz] = g.dims;
    let mut out = map.clone();
    let mut label = vec![usize::MAX; g.len()];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();

    for start in 0..g.len() {
        if map.data[start] == 0.0 || label[start] != usize::MAX {
            continue;
        }
        component.clear();
        label[start] = start;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            component.push(idx);
            let [i, j, k] = g.coords_of(idx);
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                            continue;
                        }
                        let n = g.index(a as usize, b as usize, c as usize);
                        if map.data[n] != 0.0 && label[n] == usize::MAX {
                            label[n] = start;
                            queue.push_back(n);
                        }
                    }
                }
            }
        }
        if component.len() < min_size {
            for &idx in &component {
                out.data[idx] = 0.0;
            }
        }
    }
    out
}

/// Crops to the bounding box of voxels `>= level`, then adds `pad` voxels on
/// every side. Voxels of the new box lying outside the input are zero.
pub fn crop_pad(map: &DensityMap, level: f64, pad: usize) -> Result<DensityMap> {
    let g = &map.grid;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (idx, &v) in map.data.iter().enumerate() {
        if v >= level {
            any = true;
            let c = g.coords_of(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if !any {
        return Err(Error::EmptySelection(level));
    }
    let start: [i64; 3] = std::array::from_fn(|a| lo[a] as i64 - pad as i64);
    let dims: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 1 + 2 * pad);
    Ok(reframe(map, start, dims))
}

/// Pads (centered) to at least `shape` voxels per axis. Axes already at least
/// that large are left untouched.
pub fn pad_to_shape(map: &DensityMap, shape: [usize; 3]) -> DensityMap {
    let d = map.grid.dims;
    let dims: [usize; 3] = std::array::from_fn(|a| d[a].max(shape[a]));
    let start: [i64; 3] = std::array::from_fn(|a| -(((dims[a] - d[a]) / 2) as i64));
    reframe(map, start, dims)
}

/// Copies `map` into a box whose voxel (0,0,0) is input voxel `start`.
fn reframe(map: &DensityMap, start: [i64; 3], dims: [usize; 3]) -> DensityMap {
    let g = &map.grid;
    let origin = g.origin + Vec3::new(start[0] as f64, start[1] as f64, start[2] as f64) * g.voxel_size;
    let grid = Grid { dims, voxel_size: g.voxel_size, origin };
    let mut out = DensityMap::zeros(grid).with_resolution(map.resolution);
    for k in 0..dims[2] {
        let sk = start[2] + k as i64;
        if sk < 0 || sk >= g.dims[2] as i64 {
            continue;
        }
        for j in 0..dims[1] {
            let sj = start[1] + j as i64;
            if sj < 0 || sj >= g.dims[1] as i64 {
                continue;
            }
            for i in 0..dims[0] {
                let si = start[0] + i as i64;
                if si < 0 || si >= g.dims[0] as i64 {
                    continue;
                }
                out.set(i, j, k, map.get(si as usize, sj as usize, sk as usize));
            }
        }
    }
    out
}

/// Zeroes voxels farther than `radius` (Å) from every atom of `model`.
pub fn mask_near_model(map: &DensityMap, model: &AtomicModel, radius: f64) -> DensityMap {
    let g = &map.grid;
    let mut keep = vec![false; g.len()];
    let r2 = radius * radius;
    for atom in &model.atoms {
        let Some(b) = g.box_around(&atom.pos, radius) else {
            continue;
        };
        for k in b[2].0..=b[2].1 {
            for j in b[1].0..=b[1].1 {
                for i in b[0].0..=b[0].1 {
                    if (g.world(i, j, k) - atom.pos).norm_squared() <= r2 {
                        keep[g.index(i, j, k)] = true;
                    }
                }
            }
        }
    }
    let mut out = map.clone();
    for (v, &k) in out.data.iter_mut().zip(&keep) {
        if !k {
            *v = 0.0;
        }
    }
    out
}
