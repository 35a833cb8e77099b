//! Rigid registration: Kabsch superposition and docking into a density map.

use nalgebra::{Matrix3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{apply_blur, for_each_splat_voxel, simulate_map_with, BlurOperator, FormFactorTable};
use crate::geometry::{centroid, quasi_uniform_rotations, rotation_from_vector, Vec3};
use crate::structure::AtomicModel;
use crate::volume::DensityMap;

/// `p ↦ rotation·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn apply_model(&self, model: &AtomicModel) -> AtomicModel {
        model.with_coords(&self.apply_all(&model.coords()))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax() < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
    }
}

/// Least-squares proper superposition of `mobile` onto `target`.
///
/// Returns the transform and the RMSD after applying it.
pub fn kabsch(mobile: &[Vec3], target: &[Vec3]) -> Result<(RigidTransform, f64)> {
    if mobile.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "kabsch needs paired points, got {} and {}",
            mobile.len(),
            target.len()
        )));
    }
    if mobile.len() < 3 {
        return Err(Error::InvalidArgument(format!("kabsch needs at least 3 points, got {}", mobile.len())));
    }
    let cm = centroid(mobile);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (p, q) in mobile.iter().zip(target) {
        let dp = p - cm;
        h += dp * (q - ct).transpose();
        spread += dp * dp.transpose();
    }
    let ev = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = ev.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-12 * ev[0].max(1e-300) {
        return Err(Error::InvalidArgument("kabsch points are collinear".into()));
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = if (v_t.transpose() * u.transpose()).determinant() < 0.0 { -1.0 } else { 1.0 };
    // singular values come out sorted, so the last column is the smallest
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v_t.transpose() * correction * u.transpose();
    let transform = RigidTransform { rotation, translation: ct - rotation * cm };
    let rmsd = crate::geometry::rmsd(&transform.apply_all(mobile), target);
    Ok((transform, rmsd))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DockConfig {
    pub n_rotations: usize,
    /// Coarse translation lattice spacing (Å). The lattice spans the box of
    /// voxels above `density_fraction` of the map maximum.
    pub translation_step: f64,
    pub density_fraction: f64,
    /// Gaussian width (Å) applied to both maps during the coarse search and
    /// the first refinement pass.
    pub coarse_blur: f64,
    /// Distinct coarse poses polished with the cheap interpolation score.
    pub screen_top: usize,
    /// Screened poses carried into correlation refinement.
    pub refine_top: usize,
    pub min_improvement: f64,
    pub max_refine_iters: usize,
    pub seed: u64,
}

impl Default for DockConfig {
    fn default() -> Self {
        DockConfig {
            n_rotations: 576,
            translation_step: 2.0,
            density_fraction: 0.2,
            coarse_blur: 1.5,
            screen_top: 64,
            refine_top: 8,
            min_improvement: 1e-6,
            max_refine_iters: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DockResult {
    pub transform: RigidTransform,
    pub score: f64,
    /// Every refined pose with its correlation, in selection order. Poses
    /// are ranked by correlation against the blurred map, which tolerates
    /// small coordinate errors better than the sharp map.
    pub candidates: Vec<(RigidTransform, f64)>,
}

/// Pearson correlation between the simulated map of `model` after
/// `transform` and `map`.
pub fn pose_score(model: &AtomicModel, map: &DensityMap, resolution: f64, transform: &RigidTransform) -> Result<f64> {
    let posed = transform.apply_model(model);
    let sim = simulate_map_with(&posed, &map.grid, resolution, &FormFactorTable::default())?;
    correlation_or_zero(map, &sim)
}

/// A model simulated entirely off the map correlates as 0.
fn correlation_or_zero(map: &DensityMap, sim: &DensityMap) -> Result<f64> {
    match map.correlation(sim) {
        Err(Error::ZeroVariance(_)) if map.variance() > 0.0 => Ok(0.0),
        other => other,
    }
}

/// Rigid fit of `model` into `map`.
pub fn dock_to_map(
    model: &AtomicModel,
    map: &DensityMap,
    resolution: f64,
    n_rotations: usize,
    seed: u64,
) -> Result<(RigidTransform, f64)> {
    let cfg = DockConfig { n_rotations, seed, ..Default::default() };
    let r = dock_to_map_with(model, map, resolution, &cfg)?;
    Ok((r.transform, r.score))
}

pub fn dock_to_map_with(
    model: &AtomicModel,
    map: &DensityMap,
    resolution: f64,
    cfg: &DockConfig,
) -> Result<DockResult> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    if map.data.is_empty() {
        return Err(Error::InvalidArgument("empty map".into()));
    }
    if !(map.variance() > 0.0) {
        return Err(Error::ZeroVariance("target map"));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument(format!("resolution must be > 0, got {resolution}")));
    }
    let table = FormFactorTable::default();
    let amps: Vec<f64> = model.atoms.iter().map(|a| table.amplitude(a.element)).collect();
    let total: f64 = amps.iter().sum();
    let center = model.atoms.iter().zip(&amps).map(|(a, w)| a.pos * *w).sum::<Vec3>() / total;
    let local: Vec<Vec3> = model.atoms.iter().map(|a| a.pos - center).collect();
    let map_center = map.weighted_centroid().unwrap_or_else(|| map.grid.world_of(map.grid.len() / 2));

    let mut rotations = quasi_uniform_rotations(cfg.n_rotations.max(1));
    if cfg.seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let offset: UnitQuaternion<f64> = random_rotation(&mut rng);
        for r in rotations.iter_mut().skip(1) {
            *r = offset.to_rotation_matrix().into_inner() * *r;
        }
    }

    let blur = BlurOperator::new(cfg.coarse_blur.max(0.0));
    let soft = apply_blur(map, &blur);
    let centers = translation_lattice(map, cfg.translation_step, cfg.density_fraction);
    let coarse_score = |placed: &[Vec3], t: &Vec3| -> f64 {
        placed.iter().zip(&amps).map(|(p, w)| w * soft.interpolate(&(p + t))).sum()
    };
    let mut coarse: Vec<(usize, Vec3, f64)> = rotations
        .par_iter()
        .enumerate()
        .map(|(ri, rot)| {
            let placed: Vec<Vec3> = local.iter().map(|p| rot * p).collect();
            let mut ranked: Vec<(f64, usize)> =
                centers.iter().enumerate().map(|(i, t)| (coarse_score(&placed, t), i)).collect();
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if ranked.len() > COARSE_SEEDS {
                ranked.select_nth_unstable_by(COARSE_SEEDS, order);
                ranked.truncate(COARSE_SEEDS);
            }
            ranked.sort_by(order);
            let mut best = (map_center, f64::NEG_INFINITY);
            for &(s0, i) in ranked.iter().take(COARSE_SEEDS) {
                let (t, s) = polish_translation(|t| coarse_score(&placed, t), centers[i], s0, cfg.translation_step);
                if s > best.1 {
                    best = (t, s);
                }
            }
            (ri, best.0, best.1)
        })
        .collect();
    coarse.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut picked: Vec<(usize, Vec3, f64)> = Vec::new();
    for cand in coarse {
        if picked.len() >= cfg.screen_top.max(cfg.refine_top).max(1) {
            break;
        }
        let duplicate = picked.iter().any(|(ri, t, _)| {
            let rel = rotations[*ri].transpose() * rotations[cand.0];
            let ang = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            ang < DUPLICATE_ANGLE.to_radians() && (t - cand.1).norm() < cfg.translation_step * 1.5
        });
        if !duplicate {
            picked.push(cand);
        }
    }
    let interp_score = |grid_map: &DensityMap, rot: &Matrix3<f64>, t: &Vec3| -> f64 {
        local.iter().zip(&amps).map(|(p, w)| w * grid_map.interpolate(&(rot * p + t))).sum()
    };
    let mut screened: Vec<(usize, Matrix3<f64>, Vec3, f64)> = picked
        .par_iter()
        .map(|(ri, t, _)| {
            let steps = [8f64.to_radians(), cfg.translation_step, 0.5f64.to_radians(), 0.05];
            let (rot, trans, s) = refine(|r, t| interp_score(&soft, r, t), rotations[*ri], *t, steps, cfg);
            (*ri, rot, trans, s)
        })
        .collect();
    screened.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)));
    screened.truncate(cfg.refine_top.max(1));

    let to_world = |rot: &Matrix3<f64>, t: &Vec3| RigidTransform { rotation: *rot, translation: t - rot * center };
    let sigma = table.sigma(resolution);
    let soft_sigma = (sigma * sigma + cfg.coarse_blur * cfg.coarse_blur).sqrt();
    let soft_stats = MapStats::new(&soft);
    let sharp_stats = MapStats::new(map);
    // (rotation index, pose, sharp correlation, soft correlation)
    let mut refined: Vec<(usize, RigidTransform, f64, f64)> = screened
        .par_iter()
        .map(|(ri, rot, t, _)| {
            let mut scorer = SparseScorer::new(&soft, &soft_stats, &amps, soft_sigma);
            let soft_score = |rot: &Matrix3<f64>, t: &Vec3| scorer.score(&to_world(rot, t).apply_all(&model.coords()));
            let (rot, trans, soft_corr) =
                refine(soft_score, *rot, *t, [2f64.to_radians(), 0.5, 0.05f64.to_radians(), 0.01], cfg);
            let mut scorer = SparseScorer::new(map, &sharp_stats, &amps, sigma);
            let sharp_score = |rot: &Matrix3<f64>, t: &Vec3| scorer.score(&to_world(rot, t).apply_all(&model.coords()));
            let (rot, trans, score) =
                refine(sharp_score, rot, trans, [1f64.to_radians(), 0.25, 0.01f64.to_radians(), 1e-3], cfg);
            (*ri, to_world(&rot, &trans), score, soft_corr)
        })
        .collect();
    refined.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)));
    let (_, transform, score, _) = refined[0];
    Ok(DockResult { transform, score, candidates: refined.into_iter().map(|(_, t, s, _)| (t, s)).collect() })
}

const COARSE_SEEDS: usize = 4;
const DUPLICATE_ANGLE: f64 = 20.0;

/// Coordinate pattern search on translation only, down to a quarter of `step`.
fn polish_translation(mut eval: impl FnMut(&Vec3) -> f64, mut t: Vec3, mut score: f64, step: f64) -> (Vec3, f64) {
    let mut h = step / 2.0;
    while h >= step / 8.0 {
        let mut moved = true;
        while moved {
            moved = false;
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let mut cand = t;
                    cand[axis] += sign * h;
                    let s = eval(&cand);
                    if s > score {
                        (t, score, moved) = (cand, s, true);
                    }
                }
            }
        }
        h /= 2.0;
    }
    (t, score)
}

/// Lattice points covering the box of voxels above `fraction · max`.
fn translation_lattice(map: &DensityMap, step: f64, fraction: f64) -> Vec<Vec3> {
    let max = map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (idx, &v) in map.data.iter().enumerate() {
        if v > fraction * max {
            let p = map.grid.world_of(idx);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    if !(lo.x <= hi.x) {
        return vec![map.weighted_centroid().unwrap_or_else(|| map.grid.world_of(map.grid.len() / 2))];
    }
    let step = step.max(1e-3);
    let counts: Vec<usize> = (0..3).map(|a| ((hi[a] - lo[a]) / step).floor() as usize + 1).collect();
    let mid = (lo + hi) / 2.0;
    let start: Vec3 = Vec3::from_fn(|a, _| mid[a] - (counts[a] - 1) as f64 * step / 2.0);
    let mut out = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                out.push(start + Vec3::new(i as f64, j as f64, k as f64) * step);
            }
        }
    }
    out
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
}

struct MapStats {
    n: f64,
    sum: f64,
    /// Σ (m − m̄)²
    ss: f64,
}

impl MapStats {
    fn new(map: &DensityMap) -> Self {
        let n = map.data.len() as f64;
        let sum: f64 = map.data.iter().sum();
        let mean = sum / n;
        MapStats { n, sum, ss: map.data.iter().map(|v| (v - mean) * (v - mean)).sum() }
    }
}

/// Pearson correlation of a simulated map against a fixed target, summed
/// over the voxels the atoms actually touch.
struct SparseScorer<'a> {
    map: &'a DensityMap,
    stats: &'a MapStats,
    amps: &'a [f64],
    sigma: f64,
    buffer: Vec<f64>,
    touched: Vec<usize>,
}

impl<'a> SparseScorer<'a> {
    fn new(map: &'a DensityMap, stats: &'a MapStats, amps: &'a [f64], sigma: f64) -> Self {
        SparseScorer { map, stats, amps, sigma, buffer: vec![0.0; map.data.len()], touched: Vec::new() }
    }

    fn score(&mut self, coords: &[Vec3]) -> f64 {
        for (p, amp) in coords.iter().zip(self.amps) {
            let (buffer, touched) = (&mut self.buffer, &mut self.touched);
            for_each_splat_voxel(&self.map.grid, p, self.sigma, |idx, _, g| {
                if buffer[idx] == 0.0 {
                    touched.push(idx);
                }
                buffer[idx] += amp * g;
            });
        }
        let (mut s, mut s2, mut sm) = (0.0, 0.0, 0.0);
        for &idx in &self.touched {
            let v = self.buffer[idx];
            s += v;
            s2 += v * v;
            sm += v * self.map.data[idx];
            self.buffer[idx] = 0.0;
        }
        self.touched.clear();
        let n = self.stats.n;
        let cov = sm - s * self.stats.sum / n;
        let var = s2 - s * s / n;
        if !(var > 0.0) || !(self.stats.ss > 0.0) {
            return 0.0;
        }
        (cov / (var.sqrt() * self.stats.ss.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Pattern search over (rotation vector, translation) with shrinking steps.
fn refine(
    mut eval: impl FnMut(&Matrix3<f64>, &Vec3) -> f64,
    rot0: Matrix3<f64>,
    t0: Vec3,
    steps: [f64; 4],
    cfg: &DockConfig,
) -> (Matrix3<f64>, Vec3, f64) {
    let [angle_step, shift_step, min_ang, min_shift] = steps;
    let mut rot = rot0;
    let mut t = t0;
    let mut best = eval(&rot, &t);
    let mut ang = angle_step;
    let mut shift = shift_step;
    let mut iters = 0;
    while iters < cfg.max_refine_iters {
        iters += 1;
        let mut improved = false;
        for axis in 0..6 {
            for sign in [1.0, -1.0] {
                let (cand_rot, cand_t) = if axis < 3 {
                    let mut v = Vec3::zeros();
                    v[axis] = sign * ang;
                    (rotation_from_vector(&v) * rot, t)
                } else {
                    let mut d = Vec3::zeros();
                    d[axis - 3] = sign * shift;
                    (rot, t + d)
                };
                let s = eval(&cand_rot, &cand_t);
                if s > best + cfg.min_improvement {
                    best = s;
                    rot = cand_rot;
                    t = cand_t;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            if ang <= min_ang && shift <= min_shift {
                break;
            }
            ang = (ang * 0.5).max(min_ang);
            shift = (shift * 0.5).max(min_shift);
        }
    }
    (rot, t, best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::simulate_map;
    use crate::structure::{Atom, Element};
    use crate::volume::Grid;
    use proptest::prelude::*;
    use rand::Rng;

    fn pts(v: &[[f64; 3]]) -> Vec<Vec3> {
        v.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()
    }

    fn chiral() -> Vec<Vec3> {
        pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
    }

    #[test]
    fn recovers_rotation_and_translation() {
        let mobile = pts(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0], [0.0, -2.0, 1.0], [3.0, 1.0, -1.0], [2.0, 2.0, 2.0]]);
        let rz = rotation_from_vector(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let truth = RigidTransform::new(rz, Vec3::new(5.0, 0.0, 0.0));
        let target = truth.apply_all(&mobile);
        let (t, rmsd) = kabsch(&mobile, &target).unwrap();
        assert!(rmsd < 1e-10);
        assert!((t.rotation - rz).amax() < 1e-10);
        assert!((t.translation - truth.translation).amax() < 1e-10);
        let back = t.inverse().apply_all(&target);
        assert!(crate::geometry::rmsd(&back, &mobile) < 1e-10);
        assert!(t.is_proper(1e-10));
    }

    #[test]
    fn identity_case() {
        let p = chiral();
        let (t, rmsd) = kabsch(&p, &p).unwrap();
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation.amax() < 1e-12);
        assert!(rmsd < 1e-12);
    }

    #[test]
    fn mirror_image_has_positive_floor() {
        let p = chiral();
        let mirrored: Vec<Vec3> = p.iter().map(|v| Vec3::new(-v.x, v.y, v.z)).collect();
        let (t, rmsd) = kabsch(&p, &mirrored).unwrap();
        assert!(t.is_proper(1e-10));
        assert!(rmsd > 0.1);
        // no sampled proper rotation does better than the closed form
        let ct = centroid(&mirrored);
        let cm = centroid(&p);
        let mut floor = f64::INFINITY;
        for r in quasi_uniform_rotations(20_000) {
            let moved: Vec<Vec3> = p.iter().map(|v| r * (v - cm) + ct).collect();
            floor = floor.min(crate::geometry::rmsd(&moved, &mirrored));
        }
        assert!(floor > 0.1);
        assert!(rmsd <= floor + 1e-9);
        assert!(floor - rmsd < 0.05);
    }

    #[test]
    fn input_errors() {
        let p = chiral();
        assert!(kabsch(&p, &p[..3]).is_err());
        assert!(kabsch(&p[..2], &p[..2]).is_err());
        let line = pts(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]);
        assert!(kabsch(&line, &line).is_err());
    }

    fn arb_points() -> impl Strategy<Value = (Vec<Vec3>, Vec<Vec3>)> {
        (3usize..12)
            .prop_flat_map(|n| {
                let v = prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), n);
                (v.clone(), v)
            })
            .prop_map(|(a, b)| (a.iter().map(|p| Vec3::from(*p)).collect(), b.iter().map(|p| Vec3::from(*p)).collect()))
    }

    proptest! {
        #[test]
        fn rmsd_invariant_under_common_motion(
            (a, b) in arb_points(),
            rv in prop::array::uniform3(-3.0f64..3.0),
            tv in prop::array::uniform3(-20.0f64..20.0),
        ) {
            let m = RigidTransform::new(rotation_from_vector(&Vec3::from(rv)), Vec3::from(tv));
            let (_, r1) = kabsch(&a, &b).unwrap();
            let (_, r2) = kabsch(&m.apply_all(&a), &m.apply_all(&b)).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }

        #[test]
        fn aligned_never_worse_than_raw((a, b) in arb_points()) {
            let (t, r) = kabsch(&a, &b).unwrap();
            prop_assert!(r <= crate::geometry::rmsd(&a, &b) + 1e-9);
            prop_assert!(t.is_proper(1e-10));
        }
    }

    /// A small asymmetric heavy-atom blob.
    fn blob() -> AtomicModel {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let elems = [Element::C, Element::N, Element::O, Element::S];
        let atoms = (0..24)
            .map(|i| {
                let p =
                    Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-3.5..3.5), rng.random_range(-2.5..2.5));
                Atom::new(elems[i % 4], p + Vec3::new(12.0, 12.0, 12.0), 'A', i as i32 + 1, "ALA", "CA")
            })
            .collect();
        AtomicModel::new(atoms)
    }

    fn map_of(model: &AtomicModel) -> DensityMap {
        let grid = Grid::new([24, 24, 24], 1.0, Vec3::zeros()).unwrap();
        simulate_map(model, &grid, 3.0).unwrap()
    }

    fn quick() -> DockConfig {
        DockConfig { n_rotations: 300, ..Default::default() }
    }

    #[test]
    fn self_docking_returns_identity() {
        let m = blob();
        let map = map_of(&m);
        let r = dock_to_map_with(&m, &map, 3.0, &quick()).unwrap();
        assert!(r.score > 0.99, "score {}", r.score);
        assert!(r.transform.rotation_angle().to_degrees() < 2.0);
        let c = centroid(&m.coords());
        assert!((r.transform.apply(&c) - c).norm() < 0.5);
        let truth = pose_score(&m, &map, 3.0, &RigidTransform::identity()).unwrap();
        for (_, s) in &r.candidates {
            assert!(truth >= *s - 1e-12);
        }
    }

    #[test]
    fn docking_finds_half_turn() {
        let m = blob();
        let c = centroid(&m.coords());
        let rz = rotation_from_vector(&Vec3::new(0.0, 0.0, std::f64::consts::PI));
        let turn = RigidTransform::new(rz, c - rz * c);
        let map = map_of(&turn.apply_model(&m));
        let r = dock_to_map_with(&m, &map, 3.0, &quick()).unwrap();
        assert!(r.score > 0.99, "score {}", r.score);
        assert!(crate::geometry::rotation_angle_between(&r.transform.rotation, &rz).to_degrees() < 2.0);
    }

    #[test]
    fn flat_map_is_rejected() {
        let m = blob();
        let grid = Grid::new([8, 8, 8], 1.0, Vec3::zeros()).unwrap();
        let err = dock_to_map(&m, &DensityMap::zeros(grid), 3.0, 10, 0).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(_)));
    }
}
