use std::fmt;

use crate::error::{Error, Result};

/// What the score is conditioned on. Analytic priors answer only to their own label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Condition(pub String);

impl Condition {
    pub fn new(label: impl Into<String>) -> Self {
        Condition(label.into())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Score of the noised data distribution, `∇ log p_σ(x)`, on flat `[x0, y0, z0, x1, ...]` coordinates.
pub trait ScoreModel: Sync {
    fn n_atoms(&self) -> usize;

    fn score(&self, x: &[f64], condition: &Condition, sigma: f64) -> Result<Vec<f64>>;

    /// `Jᵀv` for the denoiser Jacobian `J = ∂x̂/∂x`, if the model can supply it.
    fn denoiser_vjp(&self, _x: &[f64], _condition: &Condition, _sigma: f64, _v: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Per-coordinate variance of x₀ given x, `σ²·tr(J)/d`, if available.
    fn posterior_variance(&self, _x: &[f64], _condition: &Condition, _sigma: f64) -> Option<Result<f64>> {
        None
    }
}

fn check_dims(x: &[f64], n_atoms: usize) -> Result<()> {
    if x.len() != 3 * n_atoms {
        return Err(Error::InvalidArgument(format!("expected {} coordinates, got {}", 3 * n_atoms, x.len())));
    }
    Ok(())
}

/// Score of zero everywhere; the denoiser is the identity.
#[derive(Debug, Clone)]
pub struct ZeroScore {
    pub n_atoms: usize,
}

impl ScoreModel for ZeroScore {
    fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    fn score(&self, x: &[f64], _condition: &Condition, _sigma: f64) -> Result<Vec<f64>> {
        check_dims(x, self.n_atoms)?;
        Ok(vec![0.0; x.len()])
    }

    fn denoiser_vjp(&self, _x: &[f64], _c: &Condition, _s: f64, v: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(Ok(v.to_vec()))
    }

    fn posterior_variance(&self, _x: &[f64], _c: &Condition, sigma: f64) -> Option<Result<f64>> {
        Some(Ok(sigma * sigma))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMode {
    pub mean: Vec<f64>,
    /// Isotropic standard deviation (Å).
    pub tau: f64,
    pub weight: f64,
}

/// Mixture of isotropic Gaussians. Under noise σ mode m has covariance
/// `(τ_m² + σ²)·I`, so every quantity below is exact.
#[derive(Debug, Clone)]
pub struct GaussianMixturePrior {
    pub label: String,
    pub modes: Vec<MixtureMode>,
    n_atoms: usize,
}

/// Responsibilities and per-mode terms at one point.
struct Posterior {
    resp: Vec<f64>,
    /// `1 / (τ_m² + σ²)`
    prec: Vec<f64>,
    /// `u_m = (μ_m − x)·prec_m`
    u: Vec<Vec<f64>>,
    ubar: Vec<f64>,
}

impl GaussianMixturePrior {
    pub fn new(label: impl Into<String>, modes: Vec<MixtureMode>) -> Result<Self> {
        let first = modes.first().ok_or_else(|| Error::InvalidArgument("mixture needs at least one mode".into()))?;
        let d = first.mean.len();
        if d == 0 || d % 3 != 0 {
            return Err(Error::InvalidArgument(format!("mode dimension {d} is not a positive multiple of 3")));
        }
        for m in &modes {
            if m.mean.len() != d {
                return Err(Error::InvalidArgument("modes differ in dimension".into()));
            }
            if !(m.tau > 0.0) || !(m.weight > 0.0) || m.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("modes need tau > 0, weight > 0 and finite means".into()));
            }
        }
        let total: f64 = modes.iter().map(|m| m.weight).sum();
        let modes = modes.into_iter().map(|m| MixtureMode { weight: m.weight / total, ..m }).collect();
        Ok(GaussianMixturePrior { label: label.into(), modes, n_atoms: d / 3 })
    }

    /// Single isotropic Gaussian `N(mean, τ²I)`.
    pub fn gaussian(label: impl Into<String>, mean: Vec<f64>, tau: f64) -> Result<Self> {
        Self::new(label, vec![MixtureMode { mean, tau, weight: 1.0 }])
    }

    fn check(&self, x: &[f64], condition: &Condition) -> Result<()> {
        if condition.0 != self.label {
            return Err(Error::UnknownCondition(condition.0.clone()));
        }
        check_dims(x, self.n_atoms)
    }

    fn posterior(&self, x: &[f64], sigma: f64) -> Posterior {
        let d = x.len() as f64;
        let mut logits = Vec::with_capacity(self.modes.len());
        let mut prec = Vec::with_capacity(self.modes.len());
        let mut u = Vec::with_capacity(self.modes.len());
        for m in &self.modes {
            let var = m.tau * m.tau + sigma * sigma;
            let p = 1.0 / var;
            let um: Vec<f64> = m.mean.iter().zip(x).map(|(mu, xi)| (mu - xi) * p).collect();
            let sq: f64 = m.mean.iter().zip(x).map(|(mu, xi)| (mu - xi) * (mu - xi)).sum();
            logits.push(m.weight.ln() - 0.5 * d * var.ln() - 0.5 * sq * p);
            prec.push(p);
            u.push(um);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= z);
        let mut ubar = vec![0.0; x.len()];
        for (r, um) in resp.iter().zip(&u) {
            for (b, v) in ubar.iter_mut().zip(um) {
                *b += r * v;
            }
        }
        Posterior { resp, prec, u, ubar }
    }

    /// Mode responsibilities at `x` under noise `sigma`.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        self.posterior(x, sigma).resp
    }

    /// Index of the nearest mode mean in plain Euclidean distance.
    pub fn nearest_mode(&self, x: &[f64]) -> usize {
        let dist = |m: &MixtureMode| m.mean.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..self.modes.len()).min_by(|&a, &b| dist(&self.modes[a]).total_cmp(&dist(&self.modes[b]))).unwrap_or(0)
    }
}

impl ScoreModel for GaussianMixturePrior {
    fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// `Σ_m r_m (μ_m − x) / (τ_m² + σ²)`.
    fn score(&self, x: &[f64], condition: &Condition, sigma: f64) -> Result<Vec<f64>> {
        self.check(x, condition)?;
        Ok(self.posterior(x, sigma).ubar)
    }

    /// `J = I + σ²H` with `H = Σ r_m(−prec_m·I + u_m u_mᵀ) − ū ūᵀ`; J is symmetric.
    fn denoiser_vjp(&self, x: &[f64], condition: &Condition, sigma: f64, v: &[f64]) -> Option<Result<Vec<f64>>> {
        if let Err(e) = self.check(x, condition) {
            return Some(Err(e));
        }
        let p = self.posterior(x, sigma);
        let s2 = sigma * sigma;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut out: Vec<f64> = v.to_vec();
        let ubar_v = dot(&p.ubar, v);
        for ((r, prec), um) in p.resp.iter().zip(&p.prec).zip(&p.u) {
            let um_v = dot(um, v);
            for ((o, vi), ui) in out.iter_mut().zip(v).zip(um) {
                *o += s2 * r * (-prec * vi + ui * um_v);
            }
        }
        for (o, b) in out.iter_mut().zip(&p.ubar) {
            *o -= s2 * b * ubar_v;
        }
        Some(Ok(out))
    }

    fn posterior_variance(&self, x: &[f64], condition: &Condition, sigma: f64) -> Option<Result<f64>> {
        if let Err(e) = self.check(x, condition) {
            return Some(Err(e));
        }
        let p = self.posterior(x, sigma);
        let d = x.len() as f64;
        let s2 = sigma * sigma;
        let mut tr_h = -p.ubar.iter().map(|b| b * b).sum::<f64>();
        for ((r, prec), um) in p.resp.iter().zip(&p.prec).zip(&p.u) {
            tr_h += r * (-prec * d + um.iter().map(|u| u * u).sum::<f64>());
        }
        Some(Ok(s2 * (d + s2 * tr_h) / d))
    }
}

/// `x̂ = x + σ²·score(x)`.
pub fn tweedie_estimate(x: &[f64], sigma: f64, model: &dyn ScoreModel, condition: &Condition) -> Result<Vec<f64>> {
    let s = model.score(x, condition, sigma)?;
    let s2 = sigma * sigma;
    let out: Vec<f64> = x.iter().zip(&s).map(|(xi, si)| xi + s2 * si).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite denoised estimate at sigma = {sigma}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cond() -> Condition {
        Condition::new("p")
    }

    #[test]
    fn gaussian_tweedie_closed_form() {
        let mu = vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0];
        let tau: f64 = 1.7;
        let prior = GaussianMixturePrior::gaussian("p", mu.clone(), tau).unwrap();
        let x = vec![4.0, 1.0, -3.0, 2.0, 2.0, 2.0];
        for sigma in [0.01, 0.5, 3.0, 100.0] {
            let got = tweedie_estimate(&x, sigma, &prior, &cond()).unwrap();
            let t2 = tau * tau;
            let s2 = sigma * sigma;
            for i in 0..6 {
                let want = (t2 * x[i] + s2 * mu[i]) / (t2 + s2);
                assert!((got[i] - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn small_sigma_and_zero_score() {
        let prior = GaussianMixturePrior::gaussian("p", vec![0.0; 3], 1.0).unwrap();
        let x = vec![1.0, 2.0, 3.0];
        let got = tweedie_estimate(&x, 1e-6, &prior, &cond()).unwrap();
        assert!(got.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-10));
        let z = ZeroScore { n_atoms: 1 };
        assert_eq!(tweedie_estimate(&x, 5.0, &z, &cond()).unwrap(), x);
    }

    #[test]
    fn wrong_condition_or_dims() {
        let prior = GaussianMixturePrior::gaussian("p", vec![0.0; 3], 1.0).unwrap();
        assert!(matches!(prior.score(&[0.0; 3], &Condition::new("q"), 1.0), Err(Error::UnknownCondition(_))));
        assert!(prior.score(&[0.0; 6], &cond(), 1.0).is_err());
        assert!(GaussianMixturePrior::gaussian("p", vec![0.0; 4], 1.0).is_err());
        assert!(GaussianMixturePrior::new("p", vec![]).is_err());
    }

    fn two_modes() -> GaussianMixturePrior {
        GaussianMixturePrior::new(
            "p",
            vec![
                MixtureMode { mean: vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], tau: 0.6, weight: 3.0 },
                MixtureMode { mean: vec![2.0, 1.0, 0.0, 1.0, 2.0, -1.0], tau: 1.1, weight: 1.0 },
            ],
        )
        .unwrap()
    }

    fn log_density(p: &GaussianMixturePrior, x: &[f64], sigma: f64) -> f64 {
        let d = x.len() as f64;
        let terms: Vec<f64> = p
            .modes
            .iter()
            .map(|m| {
                let var = m.tau * m.tau + sigma * sigma;
                let sq: f64 = m.mean.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                m.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * sq / var
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    #[test]
    fn weights_normalized() {
        let p = two_modes();
        assert!((p.modes[0].weight - 0.75).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn score_is_gradient_of_log_density(
            x in prop::collection::vec(-3.0f64..3.0, 6),
            sigma in 0.3f64..3.0,
        ) {
            let p = two_modes();
            let s = p.score(&x, &cond(), sigma).unwrap();
            let h = 1e-5;
            for i in 0..6 {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] += h;
                b[i] -= h;
                let fd = (log_density(&p, &a, sigma) - log_density(&p, &b, sigma)) / (2.0 * h);
                prop_assert!((fd - s[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }

        #[test]
        fn vjp_and_trace_match_differences(
            x in prop::collection::vec(-3.0f64..3.0, 6),
            v in prop::collection::vec(-1.0f64..1.0, 6),
            sigma in 0.3f64..3.0,
        ) {
            let p = two_modes();
            let jv = p.denoiser_vjp(&x, &cond(), sigma, &v).unwrap().unwrap();
            let h = 1e-5;
            let mut trace = 0.0;
            let mut jt_v = vec![0.0; 6];
            for i in 0..6 {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] += h;
                b[i] -= h;
                let da = tweedie_estimate(&a, sigma, &p, &cond()).unwrap();
                let db = tweedie_estimate(&b, sigma, &p, &cond()).unwrap();
                for r in 0..6 {
                    let j_ri = (da[r] - db[r]) / (2.0 * h);
                    jt_v[i] += j_ri * v[r];
                    if r == i {
                        trace += j_ri;
                    }
                }
            }
            for i in 0..6 {
                prop_assert!((jt_v[i] - jv[i]).abs() < 1e-6);
            }
            let c = p.posterior_variance(&x, &cond(), sigma).unwrap().unwrap();
            prop_assert!((c - sigma * sigma * trace / 6.0).abs() < 1e-6);
        }
    }
}
