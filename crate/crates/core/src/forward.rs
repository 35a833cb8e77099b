//! Cryo-EM forward model: Gaussian splatting of atoms, an isotropic blur, and
//! the squared-residual density loss with its analytic gradient.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::structure::{AtomicModel, Element};
use crate::volume::{DensityMap, Grid};

/// Splats are evaluated out to this many widths.
pub const TRUNCATION_WIDTHS: f64 = 4.0;

/// Per-element Gaussian amplitudes and the resolution-to-width rule.
#[derive(Debug, Clone)]
pub struct FormFactorTable {
    /// σ = sigma_factor · resolution.
    pub sigma_factor: f64,
    overrides: Vec<(Element, f64)>,
}

impl Default for FormFactorTable {
    fn default() -> Self {
        FormFactorTable { sigma_factor: 0.225, overrides: Vec::new() }
    }
}

impl FormFactorTable {
    pub fn with_sigma_factor(sigma_factor: f64) -> Self {
        FormFactorTable { sigma_factor, overrides: Vec::new() }
    }

    pub fn set_amplitude(&mut self, element: Element, amplitude: f64) {
        assert!(amplitude > 0.0, "amplitudes must be positive");
        self.overrides.retain(|(e, _)| *e != element);
        self.overrides.push((element, amplitude));
    }

    /// Atomic number unless overridden.
    pub fn amplitude(&self, element: Element) -> f64 {
        self.overrides.iter().find(|(e, _)| *e == element).map(|(_, a)| *a).unwrap_or(element.atomic_number() as f64)
    }

    pub fn sigma(&self, resolution: f64) -> f64 {
        self.sigma_factor * resolution
    }
}

/// Spatially uniform Gaussian blur of width `sigma_b` Å. Zero is the identity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlurOperator {
    pub sigma_b: f64,
}

impl BlurOperator {
    pub fn new(sigma_b: f64) -> Self {
        assert!(sigma_b >= 0.0, "blur width must be nonnegative");
        BlurOperator { sigma_b }
    }

    pub fn is_identity(&self) -> bool {
        self.sigma_b == 0.0
    }

    /// Normalized 1D kernel in voxel units, truncated at 4σ. Index `r` of the
    /// returned vector is offset `r - radius`.
    pub fn kernel(&self, voxel_size: f64) -> Vec<f64> {
        if self.is_identity() {
            return vec![1.0];
        }
        let s = self.sigma_b / voxel_size;
        let radius = (TRUNCATION_WIDTHS * s).ceil() as i64;
        let mut k: Vec<f64> = (-radius..=radius).map(|t| (-(t * t) as f64 / (2.0 * s * s)).exp()).collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    }
}

fn check_inputs(model: &AtomicModel, resolution: f64) -> Result<()> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidArgument(format!("resolution must be > 0, got {resolution}")));
    }
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    Ok(())
}

/// Visits every voxel within the truncation radius of `pos`, passing the
/// voxel index, the voxel-minus-atom offset and the unit Gaussian value.
pub(crate) fn for_each_splat_voxel(grid: &Grid, pos: &Vec3, sigma: f64, mut f: impl FnMut(usize, Vec3, f64)) {
    let cutoff = TRUNCATION_WIDTHS * sigma;
    let Some(b) = grid.box_around(pos, cutoff) else {
        return;
    };
    let cutoff2 = cutoff * cutoff;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for k in b[2].0..=b[2].1 {
        for j in b[1].0..=b[1].1 {
            for i in b[0].0..=b[0].1 {
                let d = grid.world(i, j, k) - pos;
                let d2 = d.norm_squared();
                if d2 <= cutoff2 {
                    f(grid.index(i, j, k), d, (-d2 * inv).exp());
                }
            }
        }
    }
}

/// Sum of per-atom Gaussians on `grid`; atoms are accumulated in model order.
pub fn simulate_map(model: &AtomicModel, grid: &Grid, resolution: f64) -> Result<DensityMap> {
    simulate_map_with(model, grid, resolution, &FormFactorTable::default())
}

pub fn simulate_map_with(
    model: &AtomicModel,
    grid: &Grid,
    resolution: f64,
    table: &FormFactorTable,
) -> Result<DensityMap> {
    check_inputs(model, resolution)?;
    let sigma = table.sigma(resolution);
    let mut map = DensityMap::zeros(grid.clone()).with_resolution(Some(resolution));
    for atom in &model.atoms {
        let amp = table.amplitude(atom.element);
        for_each_splat_voxel(grid, &atom.pos, sigma, |idx, _, g| map.data[idx] += amp * g);
    }
    Ok(map)
}

/// Applies one 1D pass along `axis`, edge-clamped. With `adjoint` the
/// transposed operator is applied instead (scatter rather than gather).
fn blur_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64], adjoint: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let n = dims[axis] as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; data.len()];
    let lines: Vec<usize> = (0..data.len()).filter(|&idx| (idx / stride) % dims[axis] == 0).collect();
    for base in lines {
        for p in 0..n {
            let v = data[base + p as usize * stride];
            for (t, &w) in kernel.iter().enumerate() {
                let q = (p + t as i64 - radius).clamp(0, n - 1) as usize;
                if adjoint {
                    out[base + q * stride] += w * v;
                } else {
                    out[base + p as usize * stride] += w * data[base + q * stride];
                }
            }
        }
    }
    out
}

fn blur_data(data: &[f64], grid: &Grid, blur: &BlurOperator, adjoint: bool) -> Vec<f64> {
    if blur.is_identity() {
        return data.to_vec();
    }
    let kernel = blur.kernel(grid.voxel_size);
    let mut cur = data.to_vec();
    for axis in 0..3 {
        cur = blur_axis(&cur, grid.dims, axis, &kernel, adjoint);
    }
    cur
}

/// Separable Gaussian blur with edge clamping.
pub fn apply_blur(map: &DensityMap, blur: &BlurOperator) -> DensityMap {
    DensityMap {
        grid: map.grid.clone(),
        data: blur_data(&map.data, &map.grid, blur, false),
        resolution: map.resolution,
    }
}

/// Transpose of [`apply_blur`].
pub fn apply_blur_adjoint(map: &DensityMap, blur: &BlurOperator) -> DensityMap {
    DensityMap { grid: map.grid.clone(), data: blur_data(&map.data, &map.grid, blur, true), resolution: map.resolution }
}

/// Settings shared by the density loss and its gradient.
#[derive(Debug, Clone, Default)]
pub struct ForwardModel {
    pub table: FormFactorTable,
    pub blur: BlurOperator,
}

impl ForwardModel {
    pub fn new(blur: BlurOperator) -> Self {
        ForwardModel { table: FormFactorTable::default(), blur }
    }

    /// B(Γ(x)) on the target's grid.
    pub fn render(&self, model: &AtomicModel, grid: &Grid, resolution: f64) -> Result<DensityMap> {
        let sim = simulate_map_with(model, grid, resolution, &self.table)?;
        Ok(apply_blur(&sim, &self.blur))
    }

    /// ‖target − B(Γ(x))‖².
    pub fn loss(&self, model: &AtomicModel, target: &DensityMap, resolution: f64) -> Result<f64> {
        let rendered = self.render(model, &target.grid, resolution)?;
        Ok(rendered.data.iter().zip(&target.data).map(|(r, t)| (t - r) * (t - r)).sum())
    }

    /// Loss and its gradient with respect to every atom position.
    pub fn loss_and_grad(&self, model: &AtomicModel, target: &DensityMap, resolution: f64) -> Result<(f64, Vec<Vec3>)> {
        check_inputs(model, resolution)?;
        let rendered = self.render(model, &target.grid, resolution)?;
        let residual: Vec<f64> = rendered.data.iter().zip(&target.data).map(|(r, t)| r - t).collect();
        let loss = residual.iter().map(|r| r * r).sum();
        // dL/dΓ = 2 Bᵀ r
        let back = blur_data(&residual, &target.grid, &self.blur, true);
        let sigma = self.table.sigma(resolution);
        let inv_s2 = 1.0 / (sigma * sigma);
        let grad = model
            .atoms
            .iter()
            .map(|atom| {
                let amp = self.table.amplitude(atom.element);
                let mut g = Vec3::zeros();
                for_each_splat_voxel(&target.grid, &atom.pos, sigma, |idx, d, e| {
                    g += d * (back[idx] * e);
                });
                g * (2.0 * amp * inv_s2)
            })
            .collect();
        Ok((loss, grad))
    }
}

fn check_grid(target: &DensityMap) -> Result<()> {
    if target.data.len() != target.grid.len() {
        return Err(Error::GridMismatch("target data does not fill its grid".into()));
    }
    Ok(())
}

pub fn density_loss(model: &AtomicModel, target: &DensityMap, resolution: f64, blur: &BlurOperator) -> Result<f64> {
    check_grid(target)?;
    ForwardModel::new(*blur).loss(model, target, resolution)
}

pub fn density_loss_grad(
    model: &AtomicModel,
    target: &DensityMap,
    resolution: f64,
    blur: &BlurOperator,
) -> Result<Vec<Vec3>> {
    check_grid(target)?;
    Ok(ForwardModel::new(*blur).loss_and_grad(model, target, resolution)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::Atom;

    fn grid(n: usize) -> Grid {
        Grid::new([n, n, n], 1.0, Vec3::zeros()).unwrap()
    }

    fn carbon(p: Vec3) -> Atom {
        Atom::new(Element::C, p, 'A', 1, "GLY", "CA")
    }

    #[test]
    fn single_carbon_peak_and_neighbor() {
        let m = AtomicModel::new(vec![carbon(Vec3::repeat(4.0))]);
        let map = simulate_map(&m, &grid(9), 2.0).unwrap();
        let sigma: f64 = 0.225 * 2.0;
        assert!((map.get(4, 4, 4) - 6.0).abs() < 1e-12);
        let expect = 6.0 * (-1.0 / (2.0 * sigma * sigma)).exp();
        assert!((map.get(5, 4, 4) - expect).abs() < 1e-15);
        // outside 4σ = 1.8 Å nothing is deposited
        assert_eq!(map.get(6, 4, 4), 0.0);
        assert_eq!(map.get(0, 0, 0), 0.0);
    }

    #[test]
    fn simulation_is_additive() {
        let a = AtomicModel::new(vec![carbon(Vec3::new(2.3, 3.1, 4.4))]);
        let mut b = AtomicModel::new(vec![carbon(Vec3::new(3.0, 3.7, 4.0))]);
        b.atoms[0].element = Element::O;
        let mut ab = a.clone();
        ab.atoms.extend(b.atoms.clone());
        let g = grid(8);
        let sa = simulate_map(&a, &g, 3.0).unwrap();
        let sb = simulate_map(&b, &g, 3.0).unwrap();
        let sab = simulate_map(&ab, &g, 3.0).unwrap();
        for i in 0..g.len() {
            assert!((sab.data[i] - sa.data[i] - sb.data[i]).abs() <= 1e-10 * sab.data[i].abs().max(1e-300));
        }
    }

    #[test]
    fn rejects_bad_resolution_and_unknown_grid() {
        let m = AtomicModel::new(vec![carbon(Vec3::zeros())]);
        assert!(simulate_map(&m, &grid(3), 0.0).is_err());
        assert!(matches!(simulate_map(&AtomicModel::default(), &grid(3), 2.0), Err(Error::EmptyModel)));
    }

    #[test]
    fn on_grid_translation_shifts_map() {
        let m = AtomicModel::new(vec![carbon(Vec3::new(4.2, 4.7, 3.9)), carbon(Vec3::new(5.1, 4.0, 4.3))]);
        let shifted = m.with_coords(&m.coords().iter().map(|p| p + Vec3::new(1.0, 0.0, 0.0)).collect::<Vec<_>>());
        let g = grid(10);
        let a = simulate_map(&m, &g, 3.0).unwrap();
        let b = simulate_map(&shifted, &g, 3.0).unwrap();
        for k in 0..10 {
            for j in 0..10 {
                for i in 1..10 {
                    assert!((b.get(i, j, k) - a.get(i - 1, j, k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blur_identity_and_constant() {
        let g = Grid::new([5, 4, 3], 1.5, Vec3::zeros()).unwrap();
        let m = DensityMap::new(g.clone(), (0..60).map(|v| (v as f64).sin()).collect()).unwrap();
        assert_eq!(apply_blur(&m, &BlurOperator::new(0.0)), m);
        let c = DensityMap::new(g, vec![2.5; 60]).unwrap();
        let b = apply_blur(&c, &BlurOperator::new(2.0));
        assert!(b.data.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn blurred_delta_center_is_kernel_cubed() {
        let mut m = DensityMap::zeros(grid(11));
        m.set(5, 5, 5, 1.0);
        let b = apply_blur(&m, &BlurOperator::new(1.0));
        // direct kernel arithmetic: σ = 1 voxel, radius 4
        let raw: Vec<f64> = (-4i32..=4).map(|t| (-(t * t) as f64 / 2.0).exp()).collect();
        let center = 1.0 / raw.iter().sum::<f64>();
        assert!((b.get(5, 5, 5) - center.powi(3)).abs() < 1e-15);
        assert!((b.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_adjoint_is_transpose() {
        let g = Grid::new([6, 5, 4], 1.0, Vec3::zeros()).unwrap();
        let u = DensityMap::new(g.clone(), (0..120).map(|v| ((v * 7 % 13) as f64).cos()).collect()).unwrap();
        let v = DensityMap::new(g, (0..120).map(|v| ((v * 3 % 11) as f64).sin()).collect()).unwrap();
        let blur = BlurOperator::new(1.3);
        let bu = apply_blur(&u, &blur);
        let btv = apply_blur_adjoint(&v, &blur);
        let lhs: f64 = bu.data.iter().zip(&v.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.data.iter().zip(&btv.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn loss_zero_on_own_map_and_norm_against_zero() {
        let m = AtomicModel::new(vec![carbon(Vec3::new(2.2, 2.6, 2.4)), carbon(Vec3::new(3.1, 2.0, 2.5))]);
        let g = grid(6);
        let blur = BlurOperator::new(0.7);
        let fm = ForwardModel::new(blur);
        let own = fm.render(&m, &g, 2.0).unwrap();
        assert_eq!(density_loss(&m, &own, 2.0, &blur).unwrap(), 0.0);
        let grad = density_loss_grad(&m, &own, 2.0, &blur).unwrap();
        assert!(grad.iter().all(|g| g.amax() == 0.0));
        let zero = DensityMap::zeros(g);
        let l = density_loss(&m, &zero, 2.0, &blur).unwrap();
        let norm: f64 = own.data.iter().map(|v| v * v).sum();
        assert!((l - norm).abs() < 1e-12 * norm);
    }

    #[test]
    fn loss_matches_double_loop_oracle() {
        let g = grid(5);
        let target_atom = Vec3::new(2.0, 2.0, 2.0);
        let model_atom = Vec3::new(2.4, 1.8, 2.1);
        let sigma: f64 = 0.225 * 2.5;
        let a = 6.0;
        let mut oracle = 0.0;
        for k in 0..5 {
            for j in 0..5 {
                for i in 0..5 {
                    let v = Vec3::new(i as f64, j as f64, k as f64);
                    let splat = |p: Vec3| {
                        let d2 = (v - p).norm_squared();
                        if d2 <= (4.0 * sigma).powi(2) {
                            a * (-d2 / (2.0 * sigma * sigma)).exp()
                        } else {
                            0.0
                        }
                    };
                    oracle += (splat(target_atom) - splat(model_atom)).powi(2);
                }
            }
        }
        let target = simulate_map(&AtomicModel::new(vec![carbon(target_atom)]), &g, 2.5).unwrap();
        let l =
            density_loss(&AtomicModel::new(vec![carbon(model_atom)]), &target, 2.5, &BlurOperator::default()).unwrap();
        assert!((l - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn moving_away_gives_positive_gradient() {
        let g = grid(12);
        let centered = AtomicModel::new(vec![carbon(Vec3::new(5.5, 5.5, 5.5)), carbon(Vec3::new(6.2, 5.0, 5.4))]);
        let target = simulate_map(&centered, &g, 3.0).unwrap();
        let blur = BlurOperator::default();
        let mut previous = 0.0;
        for step in 1..=4 {
            let dx = 0.25 * step as f64;
            let moved = centered
                .with_coords(&centered.coords().iter().map(|p| p + Vec3::new(dx, 0.0, 0.0)).collect::<Vec<_>>());
            let loss = density_loss(&moved, &target, 3.0, &blur).unwrap();
            assert!(loss > previous);
            previous = loss;
            let grad = density_loss_grad(&moved, &target, 3.0, &blur).unwrap();
            assert!(grad.iter().map(|g| g.x).sum::<f64>() > 0.0);
        }
    }
}
