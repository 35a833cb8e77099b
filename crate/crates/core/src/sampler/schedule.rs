use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Noise levels and integrator constants for the reverse process.
///
/// Levels follow Karras spacing, `σ_i = sigma_data · (σmax^{1/ρ} + i/(n−1)·(σmin^{1/ρ} − σmax^{1/ρ}))^ρ`,
/// with a final `σ_n = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub n_steps: usize,
    /// Multiplies the denoising step; values above 1 sharpen the sampled distribution.
    pub step_scale: f64,
    /// Coordinate scale applied to every level (Å).
    pub sigma_data: f64,
    /// Churn factor: each step first raises σ to σ·(1 + gamma_0).
    pub gamma_0: f64,
    /// Churn applies only while σ exceeds this level (Å).
    pub gamma_min: f64,
    /// Multiplier on the injected churn noise.
    pub noise_scale: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            sigma_min: 0.004,
            sigma_max: 160.0,
            rho: 7.0,
            n_steps: 200,
            step_scale: 1.0,
            sigma_data: 16.0,
            gamma_0: 0.8,
            gamma_min: 1.0,
            noise_scale: 1.003,
        }
    }
}

impl NoiseSchedule {
    pub fn with_steps(n_steps: usize) -> Self {
        NoiseSchedule { n_steps, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.n_steps < 2 {
            return Err(Error::Config(format!("n_steps must be >= 2, got {}", self.n_steps)));
        }
        if !(self.rho > 0.0) || !(self.sigma_data > 0.0) {
            return Err(Error::Config("rho and sigma_data must be > 0".into()));
        }
        if !(self.step_scale > 0.0) || !(self.gamma_0 >= 0.0) || !(self.noise_scale >= 0.0) {
            return Err(Error::Config("step_scale must be > 0; gamma_0, noise_scale >= 0".into()));
        }
        Ok(())
    }

    /// `n_steps + 1` levels, strictly decreasing, ending at 0.
    pub fn sigmas(&self) -> Vec<f64> {
        let inv = 1.0 / self.rho;
        let hi = self.sigma_max.powf(inv);
        let lo = self.sigma_min.powf(inv);
        let last = (self.n_steps - 1) as f64;
        let mut out: Vec<f64> =
            (0..self.n_steps).map(|i| self.sigma_data * (hi + i as f64 / last * (lo - hi)).powf(self.rho)).collect();
        out.push(0.0);
        out
    }

    /// Churned level for a step starting at `sigma`.
    pub fn t_hat(&self, sigma: f64) -> f64 {
        let gamma = if sigma > self.gamma_min { self.gamma_0 } else { 0.0 };
        sigma * (1.0 + gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Synthetic,
    Experimental,
    Custom([usize; 4]),
}

impl ScheduleKind {
    pub fn stages(&self) -> [usize; 4] {
        match self {
            ScheduleKind::Synthetic => [125, 25, 25, 25],
            ScheduleKind::Experimental => [100, 50, 25, 25],
            ScheduleKind::Custom(s) => *s,
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Synthetic => write!(f, "synthetic"),
            ScheduleKind::Experimental => write!(f, "experimental"),
            ScheduleKind::Custom(s) => write!(f, "{},{},{},{}", s[0], s[1], s[2], s[3]),
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    /// `synthetic`, `experimental`, or four comma-separated stage lengths.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "synthetic" => Ok(ScheduleKind::Synthetic),
            "experimental" => Ok(ScheduleKind::Experimental),
            other => {
                let parts: Vec<usize> = other
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("unknown schedule kind {other:?}")))?;
                let stages: [usize; 4] = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("custom schedule needs 4 stage lengths, got {other:?}")))?;
                Ok(ScheduleKind::Custom(stages))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Warmup,
    /// Step index within the global stage.
    Global(usize),
    Local(usize),
    Relax,
}

/// Stage lengths and guidance strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSchedule {
    pub t_warm: usize,
    pub t_global: usize,
    pub t_local: usize,
    pub t_relax: usize,
    pub global_start: f64,
    pub global_end: f64,
    pub local: f64,
}

pub fn make_schedule(kind: ScheduleKind, n_steps: usize) -> Result<GuidanceSchedule> {
    let [t_warm, t_global, t_local, t_relax] = kind.stages();
    let total = t_warm + t_global + t_local + t_relax;
    if total != n_steps {
        return Err(Error::Config(format!("stages of {kind} sum to {total}, expected n_steps = {n_steps}")));
    }
    Ok(GuidanceSchedule { t_warm, t_global, t_local, t_relax, global_start: 0.25, global_end: 0.05, local: 0.5 })
}

/// `end + ½(start − end)(1 + cos(πt/T_g))`.
pub fn lambda_global(t: usize, schedule: &GuidanceSchedule) -> f64 {
    let tg = schedule.t_global.max(1) as f64;
    let (a, b) = (schedule.global_start, schedule.global_end);
    b + 0.5 * (a - b) * (1.0 + (PI * t as f64 / tg).cos())
}

pub fn lambda_local(_t: usize, schedule: &GuidanceSchedule) -> f64 {
    schedule.local
}

impl GuidanceSchedule {
    pub fn n_steps(&self) -> usize {
        self.t_warm + self.t_global + self.t_local + self.t_relax
    }

    /// Same stages with every λ set to zero.
    pub fn disabled(mut self) -> Self {
        self.global_start = 0.0;
        self.global_end = 0.0;
        self.local = 0.0;
        self
    }

    pub fn is_disabled(&self) -> bool {
        self.global_start == 0.0 && self.global_end == 0.0 && self.local == 0.0
    }

    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if self.n_steps() != n_steps {
            return Err(Error::Config(format!(
                "guidance stages sum to {}, noise schedule has {} steps",
                self.n_steps(),
                n_steps
            )));
        }
        for (name, v) in [
            ("lambda_global_start", self.global_start),
            ("lambda_global_end", self.global_end),
            ("lambda_local", self.local),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn stage_at(&self, step: usize) -> Stage {
        let g0 = self.t_warm;
        let l0 = g0 + self.t_global;
        let r0 = l0 + self.t_local;
        if step < g0 {
            Stage::Warmup
        } else if step < l0 {
            Stage::Global(step - g0)
        } else if step < r0 {
            Stage::Local(step - l0)
        } else {
            Stage::Relax
        }
    }

    /// λ at an absolute step.
    pub fn lambda_at(&self, step: usize) -> f64 {
        match self.stage_at(step) {
            Stage::Global(t) => lambda_global(t, self),
            Stage::Local(t) => lambda_local(t, self),
            Stage::Warmup | Stage::Relax => 0.0,
        }
    }
}
