//! Density map → weighted point cloud via weighted k-means.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::volume::DensityMap;

/// Weighted 3D points. Weights are normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidArgument("points and weights differ in length".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument("point cloud is empty".into()));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(PointCloud { points, weights })
    }

    pub fn uniform(points: Vec<Vec3>) -> Result<Self> {
        let n = points.len();
        PointCloud::new(points, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points, uniform weights.
    pub fn to_uniform(&self) -> PointCloud {
        let n = self.len();
        PointCloud { points: self.points.clone(), weights: vec![1.0 / n as f64; n] }
    }

    /// `x y z w` per line.
    pub fn to_text(&self) -> String {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| format!("{:.4} {:.4} {:.4} {:.8}\n", p.x, p.y, p.z, w))
            .collect()
    }
}

/// Number of clusters for a system of `n_atoms` atoms on a map with the given
/// voxel size: ⌊N / (4 r³)⌋, at least one.
pub fn cluster_count(n_atoms: usize, voxel_size: f64) -> usize {
    let k = (n_atoms as f64 / (4.0 * voxel_size.powi(3))).floor();
    (k as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Å).
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { restarts: 10, max_iters: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec3>,
    pub assignment: Vec<usize>,
    /// Σ_v w_v ‖v − c(v)‖²
    pub objective: f64,
    /// Objective after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
    pub cluster_mass: Vec<f64>,
}

fn nearest(p: &Vec3, centroids: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec3], weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let mut centroids = Vec::with_capacity(k);
    let first = WeightedIndex::new(weights).expect("positive weights").sample(rng);
    centroids.push(points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let pick = match WeightedIndex::new(&scores) {
            Ok(dist) => dist.sample(rng),
            // every point already coincides with a centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[pick];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    centroids
}

fn assign(points: &[Vec3], centroids: &[Vec3]) -> (Vec<usize>, Vec<f64>) {
    points.par_iter().map(|p| nearest(p, centroids)).unzip()
}

fn objective(weights: &[f64], d2: &[f64]) -> f64 {
    weights.iter().zip(d2).map(|(w, d)| w * d).sum()
}

fn update(points: &[Vec3], weights: &[f64], assignment: &[usize], k: usize) -> (Vec<Vec3>, Vec<f64>) {
    let mut sums = vec![Vec3::zeros(); k];
    let mut mass = vec![0.0; k];
    for ((p, w), &c) in points.iter().zip(weights).zip(assignment) {
        sums[c] += p * *w;
        mass[c] += w;
    }
    let centroids = sums.iter().zip(&mass).map(|(s, m)| if *m > 0.0 { s / *m } else { Vec3::zeros() }).collect();
    (centroids, mass)
}

fn lloyd(points: &[Vec3], weights: &[f64], k: usize, cfg: &KMeansConfig, rng: &mut impl Rng) -> KMeansResult {
    let mut centroids = seed_plus_plus(points, weights, k, rng);
    let mut history = Vec::new();
    let (mut assignment, mut d2) = assign(points, &centroids);
    for _ in 0..cfg.max_iters {
        let (mut next, mut mass) = update(points, weights, &assignment, k);
        // repair empty clusters with the worst-fit voxel
        while let Some(empty) = mass.iter().position(|&m| m == 0.0) {
            let worst = (0..points.len())
                .filter(|&i| mass[assignment[i]] > weights[i])
                .max_by(|&a, &b| (weights[a] * d2[a]).total_cmp(&(weights[b] * d2[b])).then(b.cmp(&a)));
            let Some(worst) = worst else { break };
            assignment[worst] = empty;
            d2[worst] = 0.0;
            let refreshed = update(points, weights, &assignment, k);
            next = refreshed.0;
            mass = refreshed.1;
        }
        let shift = centroids.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        centroids = next;
        let (a, d) = assign(points, &centroids);
        assignment = a;
        d2 = d;
        history.push(objective(weights, &d2));
        if shift < cfg.tol {
            break;
        }
    }
    hartigan_refine(points, weights, &mut assignment, k, cfg.max_iters, &mut history);
    let (centroids, cluster_mass) = {
        let (c, m) = update(points, weights, &assignment, k);
        // keep the previous centroid for a cluster that ended up empty
        let c = c
            .into_iter()
            .zip(&m)
            .zip(&centroids)
            .map(|((n, m), old)| if *m > 0.0 { n } else { *old })
            .collect::<Vec<_>>();
        (c, m)
    };
    let d2: Vec<f64> = points.iter().zip(&assignment).map(|(p, &c)| (p - centroids[c]).norm_squared()).collect();
    let objective = objective(weights, &d2);
    history.push(objective);
    KMeansResult { centroids, assignment, objective, history, cluster_mass }
}

/// Single-point transfers (Hartigan) that strictly lower the objective,
/// applied after Lloyd converges. Clusters are never emptied.
fn hartigan_refine(
    points: &[Vec3],
    weights: &[f64],
    assignment: &mut [usize],
    k: usize,
    max_sweeps: usize,
    history: &mut Vec<f64>,
) {
    if k < 2 {
        return;
    }
    let (mut centroids, mut mass) = update(points, weights, assignment, k);
    for _ in 0..max_sweeps {
        let mut moved = false;
        for i in 0..points.len() {
            let (a, w, p) = (assignment[i], weights[i], points[i]);
            if mass[a] - w <= 1e-12 * mass[a] {
                continue;
            }
            let removal = w * mass[a] / (mass[a] - w) * (p - centroids[a]).norm_squared();
            let mut best = (a, 0.0);
            for b in (0..k).filter(|&b| b != a) {
                let gain = removal - w * mass[b] / (mass[b] + w) * (p - centroids[b]).norm_squared();
                if gain > best.1 + 1e-12 * removal {
                    best = (b, gain);
                }
            }
            let b = best.0;
            if b != a {
                centroids[a] = (centroids[a] * mass[a] - p * w) / (mass[a] - w);
                mass[a] -= w;
                centroids[b] = (centroids[b] * mass[b] + p * w) / (mass[b] + w);
                mass[b] += w;
                assignment[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        let d2: Vec<f64> =
            points.iter().zip(assignment.iter()).map(|(p, &c)| (p - centroids[c]).norm_squared()).collect();
        history.push(objective(weights, &d2));
    }
}

/// Weighted k-means with k-means++ seeding and restarts; deterministic in `seed`.
pub fn weighted_kmeans(
    points: &[Vec3],
    weights: &[f64],
    k: usize,
    cfg: &KMeansConfig,
    seed: u64,
) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive < k {
        return Err(Error::InvalidArgument(format!("{positive} positive voxels for {k} clusters")));
    }
    let runs: Vec<KMeansResult> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(points, weights, k, cfg, &mut rng)
        })
        .collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.objective.total_cmp(&b.objective).then(ia.cmp(ib)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    Ok(best)
}

/// Voxels with intensity > 0 as (world position, intensity) pairs.
pub fn positive_voxels(map: &DensityMap) -> (Vec<Vec3>, Vec<f64>) {
    map.data.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, &v)| (map.grid.world_of(i), v)).unzip()
}

pub fn extract_pointcloud(map: &DensityMap, k: usize, seed: u64) -> Result<PointCloud> {
    extract_pointcloud_with(map, k, seed, &KMeansConfig::default())
}

pub fn extract_pointcloud_with(map: &DensityMap, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<PointCloud> {
    let (points, weights) = positive_voxels(map);
    if points.len() < k {
        return Err(Error::InvalidArgument(format!("map has {} positive voxels, fewer than k = {k}", points.len())));
    }
    let result = weighted_kmeans(&points, &weights, k, cfg, seed)?;
    PointCloud::new(result.centroids, result.cluster_mass)
}
