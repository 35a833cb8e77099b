use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::NoiseSchedule;
use super::score::{Condition, ScoreModel};
use crate::error::{Error, Result};
use crate::geometry::{rms_norm, Vec3};

/// RNG for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// State handed to guidance at one integration step.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo<'a> {
    pub step: usize,
    pub sigma: f64,
    /// Churned level at which the score is evaluated.
    pub t_hat: f64,
    pub sigma_next: f64,
    pub x_noisy: &'a [f64],
}

/// Modifies the denoised estimate before the integrator consumes it.
pub trait Guidance {
    fn adjust(
        &mut self,
        model: &dyn ScoreModel,
        condition: &Condition,
        info: &StepInfo<'_>,
        x_hat: &mut [f64],
    ) -> Result<()>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Unguided;

impl Guidance for Unguided {
    fn adjust(&mut self, _: &dyn ScoreModel, _: &Condition, _: &StepInfo<'_>, _: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub x: Vec<f64>,
    pub score_evals: usize,
    /// State after every step, when recording was requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Stochastic reverse integration with churn.
///
/// Each step raises σ to `t̂`, adds matching noise, denoises, lets `guidance`
/// adjust the estimate, then steps to the next level:
/// `x ← x_noisy + step_scale·(σ_next − t̂)·(x_noisy − x̂)/t̂`.
pub fn integrate(
    model: &dyn ScoreModel,
    condition: &Condition,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    guidance: &mut dyn Guidance,
    record: bool,
) -> Result<SamplerRun> {
    schedule.validate()?;
    let sigmas = schedule.sigmas();
    let d = 3 * model.n_atoms();
    let mut x = normals(rng, d, sigmas[0]);
    let mut trajectory = record.then(|| vec![x.clone()]);
    let mut score_evals = 0;
    for step in 0..schedule.n_steps {
        let (sigma, sigma_next) = (sigmas[step], sigmas[step + 1]);
        let t_hat = schedule.t_hat(sigma);
        let x_noisy: Vec<f64> = if t_hat > sigma {
            let scale = schedule.noise_scale * (t_hat * t_hat - sigma * sigma).sqrt();
            x.iter().zip(normals(rng, d, scale)).map(|(a, e)| a + e).collect()
        } else {
            x.clone()
        };
        let score = model.score(&x_noisy, condition, t_hat)?;
        score_evals += 1;
        let t2 = t_hat * t_hat;
        let mut x_hat: Vec<f64> = x_noisy.iter().zip(&score).map(|(xi, si)| xi + t2 * si).collect();
        let info = StepInfo { step, sigma, t_hat, sigma_next, x_noisy: &x_noisy };
        guidance.adjust(model, condition, &info, &mut x_hat)?;
        let h = schedule.step_scale * (sigma_next - t_hat) / t_hat;
        x = x_noisy.iter().zip(&x_hat).map(|(xn, xh)| xn + h * (xn - xh)).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite coordinates at step {step} (sigma {sigma:.4e})")));
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(x.clone());
        }
    }
    Ok(SamplerRun { x, score_evals, trajectory })
}

pub fn sample_unguided(
    model: &dyn ScoreModel,
    condition: &Condition,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    sample_unguided_stream(model, condition, schedule, seed, 0)
}

pub fn sample_unguided_stream(
    model: &dyn ScoreModel,
    condition: &Condition,
    schedule: &NoiseSchedule,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let mut rng = sample_rng(seed, index);
    Ok(integrate(model, condition, schedule, &mut rng, &mut Unguided, false)?.x)
}

/// Rescales `grad` to unit RMS per-atom magnitude times `reference_step`.
pub fn gradient_normalize(grad: &[Vec3], reference_step: f64) -> Vec<Vec3> {
    let rms = rms_norm(grad);
    if !(rms > 0.0) || !rms.is_finite() {
        return vec![Vec3::zeros(); grad.len()];
    }
    let k = reference_step / rms;
    grad.iter().map(|g| g * k).collect()
}

/// Likelihood guidance for `y = x + noise`, `noise ~ N(0, s²I)`, applied at every step.
///
/// The likelihood of `y` given the noisy state is approximated by
/// `N(x̂, (s² + c)I)` where `c` is the denoiser's posterior variance; its
/// gradient is pulled back through the denoiser Jacobian. For a Gaussian
/// prior this is exact and the sampler targets the true posterior.
#[derive(Debug, Clone)]
pub struct QuadraticGuidance {
    pub target: Vec<f64>,
    pub noise_var: f64,
    pub lambda: f64,
}

impl Guidance for QuadraticGuidance {
    fn adjust(
        &mut self,
        model: &dyn ScoreModel,
        condition: &Condition,
        info: &StepInfo<'_>,
        x_hat: &mut [f64],
    ) -> Result<()> {
        if self.lambda == 0.0 {
            return Ok(());
        }
        let unsupported = || Error::Unsupported("score model lacks denoiser derivatives".into());
        let c = model.posterior_variance(info.x_noisy, condition, info.t_hat).ok_or_else(unsupported)??;
        let v: Vec<f64> = x_hat.iter().zip(&self.target).map(|(a, b)| (a - b) / (self.noise_var + c)).collect();
        let jtv = model.denoiser_vjp(info.x_noisy, condition, info.t_hat, &v).ok_or_else(unsupported)??;
        let k = self.lambda * info.t_hat * info.t_hat;
        for (xh, g) in x_hat.iter_mut().zip(&jtv) {
            *xh -= k * g;
        }
        Ok(())
    }
}
