//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::alignment::DockConfig;
use crate::error::{Error, Result};
use crate::forward::BlurOperator;
use crate::sampler::{make_schedule, GuidanceSchedule, NoiseSchedule, ScheduleKind};
use crate::transport::SinkhornConfig;

/// Everything a `guide` or `sample` run needs.
///
/// Relative paths are resolved against the directory of the file they were
/// read from. Keys not listed in [`RunConfig::KEYS`] are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub map: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub template: Option<PathBuf>,
    /// Mode structures of a mixture prior; empty means a single Gaussian around the template.
    pub prior_modes: Vec<PathBuf>,
    pub prior_weights: Vec<f64>,
    pub prior_tau: f64,
    pub condition: String,
    pub resolution: f64,
    pub schedule: ScheduleKind,
    pub n_samples: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub outdir: PathBuf,
    pub noise: NoiseSchedule,
    pub lambda_global_start: f64,
    pub lambda_global_end: f64,
    pub lambda_local: f64,
    pub sinkhorn: SinkhornConfig,
    pub blur: f64,
    /// 0 picks the count from the atom count and voxel size.
    pub n_clusters: usize,
    pub dock: DockConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = make_schedule(ScheduleKind::Experimental, 200).expect("built-in schedule");
        RunConfig {
            map: None,
            reference: None,
            template: None,
            prior_modes: Vec::new(),
            prior_weights: Vec::new(),
            prior_tau: 0.5,
            condition: "prior".into(),
            resolution: 2.0,
            schedule: ScheduleKind::Experimental,
            n_samples: 25,
            n_replicates: 3,
            seed: 0,
            outdir: PathBuf::from("cryoguide-out"),
            noise: NoiseSchedule::default(),
            lambda_global_start: g.global_start,
            lambda_global_end: g.global_end,
            lambda_local: g.local,
            sinkhorn: SinkhornConfig { weighted: true, ..Default::default() },
            blur: 0.0,
            n_clusters: 0,
            dock: DockConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value.trim());
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "map",
        "reference",
        "template",
        "prior_modes",
        "prior_weights",
        "prior_tau",
        "condition",
        "resolution",
        "schedule",
        "n_samples",
        "n_replicates",
        "seed",
        "outdir",
        "sigma_min",
        "sigma_max",
        "rho",
        "n_steps",
        "step_scale",
        "sigma_data",
        "gamma_0",
        "gamma_min",
        "noise_scale",
        "lambda_global_start",
        "lambda_global_end",
        "lambda_local",
        "sinkhorn_epsilon",
        "sinkhorn_reach",
        "sinkhorn_max_iters",
        "sinkhorn_tol",
        "blur",
        "n_clusters",
        "dock_rotations",
        "dock_step",
        "dock_refine_top",
    ];

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            cfg.set_in(key.trim(), value.trim(), base)?;
        }
        Ok(cfg)
    }

    /// Applies one override; paths are taken relative to the working directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_in(key, value, Path::new(""))
    }

    fn set_in(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let optional_path = |v: &str| if v.is_empty() { None } else { Some(resolve(base, v)) };
        match key {
            "map" => self.map = optional_path(value),
            "reference" => self.reference = optional_path(value),
            "template" => self.template = optional_path(value),
            "prior_modes" => {
                self.prior_modes =
                    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| resolve(base, s)).collect()
            }
            "prior_weights" => self.prior_weights = parse_list(key, value)?,
            "prior_tau" => self.prior_tau = parse_num(key, value)?,
            "condition" => self.condition = value.to_string(),
            "resolution" => self.resolution = parse_num(key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "n_samples" => self.n_samples = parse_num(key, value)?,
            "n_replicates" => self.n_replicates = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "outdir" => self.outdir = resolve(base, value),
            "sigma_min" => self.noise.sigma_min = parse_num(key, value)?,
            "sigma_max" => self.noise.sigma_max = parse_num(key, value)?,
            "rho" => self.noise.rho = parse_num(key, value)?,
            "n_steps" => self.noise.n_steps = parse_num(key, value)?,
            "step_scale" => self.noise.step_scale = parse_num(key, value)?,
            "sigma_data" => self.noise.sigma_data = parse_num(key, value)?,
            "gamma_0" => self.noise.gamma_0 = parse_num(key, value)?,
            "gamma_min" => self.noise.gamma_min = parse_num(key, value)?,
            "noise_scale" => self.noise.noise_scale = parse_num(key, value)?,
            "lambda_global_start" => self.lambda_global_start = parse_num(key, value)?,
            "lambda_global_end" => self.lambda_global_end = parse_num(key, value)?,
            "lambda_local" => self.lambda_local = parse_num(key, value)?,
            "sinkhorn_epsilon" => self.sinkhorn.epsilon = parse_num(key, value)?,
            "sinkhorn_reach" => {
                self.sinkhorn.reach = match value {
                    "none" | "" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "sinkhorn_max_iters" => self.sinkhorn.max_iters = parse_num(key, value)?,
            "sinkhorn_tol" => self.sinkhorn.tol = parse_num(key, value)?,
            "blur" => self.blur = parse_num(key, value)?,
            "n_clusters" => self.n_clusters = parse_num(key, value)?,
            "dock_rotations" => self.dock.n_rotations = parse_num(key, value)?,
            "dock_step" => self.dock.translation_step = parse_num(key, value)?,
            "dock_refine_top" => self.dock.refine_top = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields the same configuration.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let weights = self.prior_weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        let reach = self.sinkhorn.reach.map(|r| r.to_string()).unwrap_or_else(|| "none".into());
        let n = &self.noise;
        let pairs: Vec<(&str, String)> = vec![
            ("map", opt(&self.map)),
            ("reference", opt(&self.reference)),
            ("template", opt(&self.template)),
            ("prior_modes", join_paths(&self.prior_modes)),
            ("prior_weights", weights),
            ("prior_tau", self.prior_tau.to_string()),
            ("condition", self.condition.clone()),
            ("resolution", self.resolution.to_string()),
            ("schedule", self.schedule.to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("n_replicates", self.n_replicates.to_string()),
            ("seed", self.seed.to_string()),
            ("outdir", self.outdir.display().to_string()),
            ("sigma_min", n.sigma_min.to_string()),
            ("sigma_max", n.sigma_max.to_string()),
            ("rho", n.rho.to_string()),
            ("n_steps", n.n_steps.to_string()),
            ("step_scale", n.step_scale.to_string()),
            ("sigma_data", n.sigma_data.to_string()),
            ("gamma_0", n.gamma_0.to_string()),
            ("gamma_min", n.gamma_min.to_string()),
            ("noise_scale", n.noise_scale.to_string()),
            ("lambda_global_start", self.lambda_global_start.to_string()),
            ("lambda_global_end", self.lambda_global_end.to_string()),
            ("lambda_local", self.lambda_local.to_string()),
            ("sinkhorn_epsilon", self.sinkhorn.epsilon.to_string()),
            ("sinkhorn_reach", reach),
            ("sinkhorn_max_iters", self.sinkhorn.max_iters.to_string()),
            ("sinkhorn_tol", self.sinkhorn.tol.to_string()),
            ("blur", self.blur.to_string()),
            ("n_clusters", self.n_clusters.to_string()),
            ("dock_rotations", self.dock.n_rotations.to_string()),
            ("dock_step", self.dock.translation_step.to_string()),
            ("dock_refine_top", self.dock.refine_top.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn guidance_schedule(&self) -> Result<GuidanceSchedule> {
        let mut g = make_schedule(self.schedule, self.noise.n_steps)?;
        g.global_start = self.lambda_global_start;
        g.global_end = self.lambda_global_end;
        g.local = self.lambda_local;
        g.validate(self.noise.n_steps)?;
        Ok(g)
    }

    pub fn blur_operator(&self) -> Result<BlurOperator> {
        if !(self.blur >= 0.0) {
            return Err(Error::Config(format!("blur must be >= 0, got {}", self.blur)));
        }
        Ok(BlurOperator::new(self.blur))
    }

    /// Checks counts, constants and that every named input file exists.
    pub fn validate(&self, need_map: bool) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if self.n_replicates < 1 {
            return Err(Error::Config("n_replicates must be >= 1".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::Config(format!("resolution must be > 0, got {}", self.resolution)));
        }
        if !(self.prior_tau > 0.0) {
            return Err(Error::Config(format!("prior_tau must be > 0, got {}", self.prior_tau)));
        }
        if !self.prior_modes.is_empty() && self.prior_weights.len() != self.prior_modes.len() {
            return Err(Error::Config(format!(
                "{} prior modes but {} weights",
                self.prior_modes.len(),
                self.prior_weights.len()
            )));
        }
        self.noise.validate()?;
        self.guidance_schedule()?;
        self.blur_operator()?;
        if self.template.is_none() {
            return Err(Error::Config("missing template".into()));
        }
        if need_map && self.map.is_none() {
            return Err(Error::Config("missing map".into()));
        }
        let inputs = self.map.iter().chain(&self.reference).chain(&self.template).chain(&self.prior_modes);
        for p in inputs {
            if !p.is_file() {
                return Err(Error::Config(format!("no such file: {}", p.display())));
            }
        }
        Ok(())
    }
}
