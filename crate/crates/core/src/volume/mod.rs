//! Density maps: grid geometry, MRC I/O and map preparation.

mod mrc;
mod prep;

pub use mrc::{read_mrc, read_mrc_bytes, write_mrc, write_mrc_bytes, MRC_HEADER_LEN};
pub use prep::{crop_pad, dust, mask_near_model, pad_to_shape, threshold};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Geometry of a regular, isotropic voxel grid.
///
/// Voxel `(i, j, k)` sits at world position `origin + voxel_size * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: Vec3,
}

impl Grid {
    pub fn new(dims: [usize; 3], voxel_size: f64, origin: Vec3) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("voxel size must be > 0, got {voxel_size}")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("origin must be finite".into()));
        }
        Ok(Grid { dims, voxel_size, origin })
    }

    /// Smallest grid with the given voxel size that covers `points` plus `pad`
    /// voxels on each side.
    pub fn enclosing(points: &[Vec3], voxel_size: f64, pad: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyModel);
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            dims[a] = ((hi[a] - lo[a]) / voxel_size).ceil() as usize + 1 + 2 * pad;
        }
        let origin = lo - Vec3::repeat(pad as f64 * voxel_size);
        Grid::new(dims, voxel_size, origin)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords_of(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    pub fn world_of(&self, index: usize) -> Vec3 {
        let [i, j, k] = self.coords_of(index);
        self.world(i, j, k)
    }

    /// Continuous voxel coordinates of a world position.
    pub fn to_voxel(&self, p: &Vec3) -> Vec3 {
        (p - self.origin) / self.voxel_size
    }

    /// Inclusive voxel index range along each axis within `radius` of `p`,
    /// or `None` when the box misses the grid entirely.
    pub fn box_around(&self, p: &Vec3, radius: f64) -> Option<[(usize, usize); 3]> {
        let v = self.to_voxel(p);
        let r = radius / self.voxel_size;
        let mut out = [(0usize, 0usize); 3];
        for a in 0..3 {
            let lo = (v[a] - r).ceil();
            let hi = (v[a] + r).floor();
            let max = (self.dims[a] - 1) as f64;
            if hi < 0.0 || lo > max || lo > hi {
                return None;
            }
            out[a] = (lo.max(0.0) as usize, hi.min(max) as usize);
        }
        Some(out)
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && (self.voxel_size - other.voxel_size).abs() <= 1e-9 * self.voxel_size
            && (self.origin - other.origin).norm() <= 1e-9 * self.voxel_size.max(1.0)
    }
}

/// A 3D density map on a [`Grid`]; x is the fastest-varying axis in `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub grid: Grid,
    pub data: Vec<f64>,
    /// Nominal resolution in Å, when known.
    pub resolution: Option<f64>,
}

impl DensityMap {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match grid {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(DensityMap { grid, data, resolution: None })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        DensityMap { grid, data: vec![0.0; n], resolution: None }
    }

    pub fn with_resolution(mut self, resolution: Option<f64>) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.grid.voxel_size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Trilinear interpolation at a world position; zero outside the grid.
    pub fn interpolate(&self, p: &Vec3) -> f64 {
        let v = self.grid.to_voxel(p);
        let d = self.grid.dims;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            if v[a] < 0.0 || v[a] > (d[a] - 1) as f64 {
                return 0.0;
            }
            let f = v[a].floor();
            base[a] = (f as usize).min(d[a].saturating_sub(2));
            frac[a] = v[a] - base[a] as f64;
            if d[a] == 1 {
                base[a] = 0;
                frac[a] = 0.0;
            }
        }
        let mut acc = 0.0;
        for (dk, wk) in [(0, 1.0 - frac[2]), (1, frac[2])] {
            for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
                    let w = wi * wj * wk;
                    if w == 0.0 {
                        continue;
                    }
                    acc += w * self.get(base[0] + di, base[1] + dj, base[2] + dk);
                }
            }
        }
        acc
    }

    /// Pearson correlation of voxel values against `other` on the same grid.
    pub fn correlation(&self, other: &DensityMap) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::GridMismatch(format!("{} vs {} voxels", self.data.len(), other.data.len())));
        }
        pearson(&self.data, &other.data)
    }

    /// Intensity-weighted centroid of the positive voxels.
    pub fn weighted_centroid(&self) -> Option<Vec3> {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for (idx, &v) in self.data.iter().enumerate() {
            if v > 0.0 {
                acc += self.grid.world_of(idx) * v;
                total += v;
            }
        }
        (total > 0.0).then(|| acc / total)
    }
}

/// Pearson correlation; `ZeroVariance` if either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0) {
        return Err(Error::ZeroVariance("first map"));
    }
    if !(sbb > 0.0) {
        return Err(Error::ZeroVariance("second map"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
