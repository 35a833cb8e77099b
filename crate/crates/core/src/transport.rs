//! Entropy-regularized optimal transport between point clouds and the
//! debiased Sinkhorn divergence.
//!
//! Transport cost is `C_ij = ½‖x_i − y_j‖²`. The regularizer is
//! `ε·KL(γ ‖ a⊗b)`, which differs from `ε·Σ γ log γ` by a constant that
//! cancels in the divergence. A finite `reach` relaxes both marginals with
//! `ρ·KL` penalties, `ρ = reach²`, so mass much farther than `reach` is
//! left untransported instead of dragged across.
//!
//! Iterations run in the log domain on dual potentials `f`, `g`; reported
//! costs are the dual objective at the final potentials, and gradients hold
//! the plan fixed (envelope theorem).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization strength (Å²).
    pub epsilon: f64,
    /// Marginal relaxation scale (Å); `None` is balanced transport.
    pub reach: Option<f64>,
    pub max_iters: usize,
    /// Balanced: L1 marginal violation. Unbalanced: largest potential update.
    pub tol: f64,
    /// Use the clouds' own weights as masses instead of uniform ones.
    pub weighted: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { epsilon: 1.0, reach: Some(10.0), max_iters: 500, tol: 1e-6, weighted: false }
    }
}

impl SinkhornConfig {
    pub fn balanced(epsilon: f64) -> Self {
        SinkhornConfig { epsilon, reach: None, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if let Some(r) = self.reach {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("reach must be > 0, got {r}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// ρ = reach², infinite when balanced.
    fn rho(&self) -> f64 {
        self.reach.map_or(f64::INFINITY, |r| r * r)
    }

    /// Damping of the softmin updates, ρ / (ρ + ε).
    fn damping(&self) -> f64 {
        let rho = self.rho();
        if rho.is_infinite() {
            1.0
        } else {
            rho / (rho + self.epsilon)
        }
    }

    fn masses(&self, cloud: &PointCloud) -> Vec<f64> {
        if self.weighted {
            cloud.weights.clone()
        } else {
            vec![1.0 / cloud.len() as f64; cloud.len()]
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub n: usize,
    pub m: usize,
    /// Row-major N×M.
    pub gamma: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.m + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.gamma.chunks_exact(self.m).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for row in self.gamma.chunks_exact(self.m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OtResult {
    pub cost: f64,
    pub plan: TransportPlan,
    pub converged: bool,
    pub iterations: usize,
    /// Convergence measure after each iteration.
    pub violations: Vec<f64>,
}

fn half_sq_cost(x: &[Vec3], y: &[Vec3]) -> Vec<f64> {
    x.par_iter().flat_map_iter(|p| y.iter().map(move |q| 0.5 * (p - q).norm_squared())).collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `out_i = −τ ε LSE_j(log b_j + (g_j − C_ij)/ε)` over rows of an N×M cost.
fn softmin_rows(cost: &[f64], m: usize, log_b: &[f64], g: &[f64], eps: f64, tau: f64) -> Vec<f64> {
    cost.par_chunks_exact(m)
        .map(|row| {
            let lse = log_sum_exp(row.iter().zip(log_b).zip(g).map(|((c, lb), gj)| lb + (gj - c) / eps));
            -tau * eps * lse
        })
        .collect()
}

fn softmin_cols(cost: &[f64], m: usize, log_a: &[f64], f: &[f64], eps: f64, tau: f64) -> Vec<f64> {
    let n = f.len();
    (0..m)
        .into_par_iter()
        .map(|j| {
            let lse = log_sum_exp((0..n).map(|i| log_a[i] + (f[i] - cost[i * m + j]) / eps));
            -tau * eps * lse
        })
        .collect()
}

/// −ρ (e^{−f/ρ} − 1), or `f` itself when ρ = ∞.
fn dual_phi(f: f64, rho: f64) -> f64 {
    if rho.is_infinite() {
        f
    } else {
        -rho * (-f / rho).exp_m1()
    }
}

fn plan_from(cost: &[f64], a: &[f64], b: &[f64], f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let m = b.len();
    cost.par_chunks_exact(m)
        .enumerate()
        .flat_map_iter(|(i, row)| {
            row.iter().enumerate().map(move |(j, c)| a[i] * b[j] * ((f[i] + g[j] - c) / eps).exp())
        })
        .collect()
}

fn dual_value(a: &[f64], b: &[f64], f: &[f64], g: &[f64], gamma: &[f64], cfg: &SinkhornConfig) -> f64 {
    let rho = cfg.rho();
    let fa: f64 = a.iter().zip(f).map(|(ai, fi)| ai * dual_phi(*fi, rho)).sum();
    let gb: f64 = b.iter().zip(g).map(|(bj, gj)| bj * dual_phi(*gj, rho)).sum();
    let mass: f64 = gamma.iter().sum();
    let product = a.iter().sum::<f64>() * b.iter().sum::<f64>();
    fa + gb - cfg.epsilon * (mass - product)
}

fn solve(x: &[Vec3], a: &[f64], y: &[Vec3], b: &[f64], cfg: &SinkhornConfig) -> OtResult {
    let (n, m) = (x.len(), y.len());
    let eps = cfg.epsilon;
    let tau = cfg.damping();
    let cost = half_sq_cost(x, y);
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = softmin_cols(&cost, m, &log_a, &f, eps, tau);
    let mut violations = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let f_new = softmin_rows(&cost, m, &log_b, &g, eps, tau);
        // with g fresh, row marginals are a_i·exp((f_i − f_new_i)/(τε))
        let err = if tau == 1.0 {
            a.iter().zip(&f).zip(&f_new).map(|((ai, fo), fn_)| ai * ((fo - fn_) / eps).exp_m1().abs()).sum()
        } else {
            f.iter().zip(&f_new).map(|(fo, fn_)| (fo - fn_).abs()).fold(0.0, f64::max)
        };
        f = f_new;
        g = softmin_cols(&cost, m, &log_a, &f, eps, tau);
        violations.push(err);
        if err < cfg.tol {
            converged = true;
            break;
        }
    }
    let gamma = plan_from(&cost, a, b, &f, &g, eps);
    let cost_value = dual_value(a, b, &f, &g, &gamma, cfg);
    OtResult { cost: cost_value, plan: TransportPlan { n, m, gamma, f, g }, converged, iterations, violations }
}

/// Symmetric problem OT(X, X) with averaged updates; f = g at the optimum.
fn solve_symmetric(x: &[Vec3], a: &[f64], cfg: &SinkhornConfig) -> OtResult {
    let n = x.len();
    let eps = cfg.epsilon;
    let tau = cfg.damping();
    let cost = half_sq_cost(x, x);
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let mut f = softmin_rows(&cost, n, &log_a, &vec![0.0; n], eps, tau);
    let mut violations = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let t = softmin_rows(&cost, n, &log_a, &f, eps, tau);
        let err = f.iter().zip(&t).map(|(fo, tn)| (fo - tn).abs()).fold(0.0, f64::max);
        f = f.iter().zip(&t).map(|(fo, tn)| 0.5 * (fo + tn)).collect();
        violations.push(err);
        if err < cfg.tol {
            converged = true;
            break;
        }
    }
    let gamma = plan_from(&cost, a, a, &f, &f, eps);
    let cost_value = dual_value(a, a, &f, &f, &gamma, cfg);
    OtResult {
        cost: cost_value,
        plan: TransportPlan { n, m: n, gamma, f: f.clone(), g: f },
        converged,
        iterations,
        violations,
    }
}

fn check_clouds(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<()> {
    cfg.validate()?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("point clouds must be nonempty".into()));
    }
    Ok(())
}

/// Entropic OT cost between `x` and `y` and the transport plan.
pub fn ot_epsilon(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<OtResult> {
    check_clouds(x, y, cfg)?;
    Ok(solve(&x.points, &cfg.masses(x), &y.points, &cfg.masses(y), cfg))
}

/// Divergence value, gradient on `x`, and whether all three solves converged.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub value: f64,
    pub grad: Vec<Vec3>,
    pub converged: bool,
}

pub fn divergence_with_grad(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<Divergence> {
    check_clouds(x, y, cfg)?;
    let a = cfg.masses(x);
    let b = cfg.masses(y);
    let xy = solve(&x.points, &a, &y.points, &b, cfg);
    let xx = solve_symmetric(&x.points, &a, cfg);
    let yy = solve_symmetric(&y.points, &b, cfg);
    let value = xy.cost - 0.5 * xx.cost - 0.5 * yy.cost;

    let grad = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.points[i];
            let mut g = Vec3::zeros();
            for (j, yj) in y.points.iter().enumerate() {
                g += (xi - yj) * xy.plan.get(i, j);
            }
            for (j, xj) in x.points.iter().enumerate() {
                g -= (xi - xj) * xx.plan.get(i, j);
            }
            g
        })
        .collect();
    if !(xy.converged && xx.converged && yy.converged) {
        log::debug!(
            "sinkhorn not converged after {} iterations (violation {:.3e})",
            cfg.max_iters,
            xy.violations.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(Divergence { value, grad, converged: xy.converged && xx.converged && yy.converged })
}

/// D(X,Y) = OT(X,Y) − ½OT(X,X) − ½OT(Y,Y).
pub fn sinkhorn_divergence(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<f64> {
    check_clouds(x, y, cfg)?;
    let a = cfg.masses(x);
    let b = cfg.masses(y);
    let xy = solve(&x.points, &a, &y.points, &b, cfg);
    let xx = solve_symmetric(&x.points, &a, cfg);
    let yy = solve_symmetric(&y.points, &b, cfg);
    Ok(xy.cost - 0.5 * xx.cost - 0.5 * yy.cost)
}

pub fn divergence_grad(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<Vec<Vec3>> {
    Ok(divergence_with_grad(x, y, cfg)?.grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::uniform(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    fn random_cloud(rng: &mut impl Rng, n: usize, scale: f64) -> PointCloud {
        PointCloud::uniform(
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-scale..scale),
                        rng.random_range(-scale..scale),
                        rng.random_range(-scale..scale),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn tight(mut cfg: SinkhornConfig) -> SinkhornConfig {
        cfg.tol = 1e-13;
        cfg.max_iters = 100_000;
        cfg
    }

    #[test]
    fn coincident_singletons_cost_nothing() {
        let x = cloud(&[[1.0, 2.0, 3.0]]);
        for eps in [1.0, 1e-2, 1e-3] {
            let r = ot_epsilon(&x, &x, &SinkhornConfig::balanced(eps)).unwrap();
            assert!(r.cost.abs() < 1e-12);
        }
    }

    #[test]
    fn singletons_one_angstrom_apart() {
        let r = ot_epsilon(&cloud(&[[0.0; 3]]), &cloud(&[[1.0, 0.0, 0.0]]), &SinkhornConfig::balanced(1e-3)).unwrap();
        assert!((r.cost - 0.5).abs() < 1e-2);
        assert!(r.converged);
    }

    #[test]
    fn two_by_two_matches_cheaper_permutation() {
        let x = cloud(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let y = cloud(&[[0.5, 1.0, 0.0], [2.0, -1.0, 0.5]]);
        let c = |p: &Vec3, q: &Vec3| 0.5 * (p - q).norm_squared();
        let identity = 0.5 * (c(&x.points[0], &y.points[0]) + c(&x.points[1], &y.points[1]));
        let swap = 0.5 * (c(&x.points[0], &y.points[1]) + c(&x.points[1], &y.points[0]));
        let best = identity.min(swap);
        let r = ot_epsilon(&x, &y, &tight(SinkhornConfig::balanced(1e-3))).unwrap();
        assert!((r.cost - best).abs() < 0.01 * best, "{} vs {best}", r.cost);
    }

    #[test]
    fn balanced_marginals_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 6, 3.0);
        let y = random_cloud(&mut rng, 9, 3.0);
        let cfg = SinkhornConfig { tol: 1e-9, max_iters: 10_000, ..SinkhornConfig::balanced(0.5) };
        let r = ot_epsilon(&x, &y, &cfg).unwrap();
        assert!(r.converged);
        for s in r.plan.row_sums() {
            assert!((s - 1.0 / 6.0).abs() < 1e-9);
        }
        for s in r.plan.col_sums() {
            assert!((s - 1.0 / 9.0).abs() < 1e-9);
        }
        assert!(r.plan.gamma.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn marginal_violation_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let x = random_cloud(&mut rng, 7, 4.0);
            let y = random_cloud(&mut rng, 5, 4.0);
            let r = ot_epsilon(&x, &y, &SinkhornConfig { max_iters: 200, ..SinkhornConfig::balanced(0.3) }).unwrap();
            for w in r.violations.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{:?}", w);
            }
        }
    }

    #[test]
    fn small_epsilon_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cloud(&mut rng, 8, 20.0);
        let y = random_cloud(&mut rng, 8, 20.0);
        let r = ot_epsilon(&x, &y, &SinkhornConfig { max_iters: 50, ..SinkhornConfig::balanced(1e-3) }).unwrap();
        assert!(r.cost.is_finite());
        assert!(r.plan.gamma.iter().all(|g| g.is_finite()));
        assert!(r.plan.f.iter().chain(&r.plan.g).all(|v| v.is_finite()));
    }

    #[test]
    fn divergence_self_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x = random_cloud(&mut rng, 10, 5.0);
            let y = random_cloud(&mut rng, 10, 5.0);
            let cfg = SinkhornConfig::balanced(4.0);
            assert!(sinkhorn_divergence(&x, &x, &cfg).unwrap().abs() < 1e-6);
            let tcfg = tight(cfg);
            let dxy = sinkhorn_divergence(&x, &y, &tcfg).unwrap();
            let dyx = sinkhorn_divergence(&y, &x, &tcfg).unwrap();
            assert!((dxy - dyx).abs() < 1e-8, "{dxy} vs {dyx}");
            assert!(dxy >= -1e-6);
        }
    }

    #[test]
    fn divergence_grows_with_separation() {
        let cfg = SinkhornConfig::balanced(1.0);
        let y = cloud(&[[0.0; 3]]);
        let d1 = sinkhorn_divergence(&cloud(&[[1.0, 0.0, 0.0]]), &y, &cfg).unwrap();
        let d2 = sinkhorn_divergence(&cloud(&[[2.0, 0.0, 0.0]]), &y, &cfg).unwrap();
        assert!((d1 - 0.5).abs() < 1e-12 && (d2 - 2.0).abs() < 1e-12);
        assert!(d2 > d1);
    }

    #[test]
    fn gradient_at_minimum_and_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_cloud(&mut rng, 6, 3.0);
        let g = divergence_grad(&x, &x, &SinkhornConfig::default()).unwrap();
        assert!(g.iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-5);

        let g = divergence_grad(&cloud(&[[1.0, 0.0, 0.0]]), &cloud(&[[0.0; 3]]), &SinkhornConfig::default()).unwrap();
        assert!(g[0].x > 0.0 && g[0].y.abs() < 1e-12 && g[0].z.abs() < 1e-12);
    }

    #[test]
    fn reach_forgives_distant_mass() {
        let x = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let near = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]);
        let mut far_pts = near.points.clone();
        far_pts.push(Vec3::new(200.0, 0.0, 0.0));
        let far = PointCloud::uniform(far_pts).unwrap();
        let cfg = tight(SinkhornConfig { reach: Some(2.0), ..Default::default() });
        let plan = ot_epsilon(&x, &far, &cfg).unwrap().plan;
        // the outlier column receives almost nothing
        assert!(plan.col_sums()[3] < 1e-6);
        let balanced = tight(SinkhornConfig::balanced(1.0));
        let d_reach = sinkhorn_divergence(&x, &far, &cfg).unwrap();
        let d_bal = sinkhorn_divergence(&x, &far, &balanced).unwrap();
        assert!(d_reach < 0.05 * d_bal, "{d_reach} vs {d_bal}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = tight(SinkhornConfig { epsilon: 0.5, reach: Some(10.0), ..Default::default() });
        for _ in 0..5 {
            let x = random_cloud(&mut rng, 5, 3.0);
            let y = random_cloud(&mut rng, 7, 3.0);
            let grad = divergence_grad(&x, &y, &cfg).unwrap();
            let scale = grad.iter().map(|g| g.amax()).fold(0.0, f64::max);
            let h = 1e-4;
            for i in 0..5 {
                for a in 0..3 {
                    let mut plus = x.clone();
                    plus.points[i][a] += h;
                    let mut minus = x.clone();
                    minus.points[i][a] -= h;
                    let fd = (sinkhorn_divergence(&plus, &y, &cfg).unwrap()
                        - sinkhorn_divergence(&minus, &y, &cfg).unwrap())
                        / (2.0 * h);
                    let err = (grad[i][a] - fd).abs() / fd.abs().max(1e-2 * scale);
                    assert!(err < 1e-3, "component ({i},{a}): {} vs {fd}", grad[i][a]);
                }
            }
        }
    }
}
