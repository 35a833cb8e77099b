//! Replicate and sample orchestration for `guide` and `sample` runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::RunConfig;
use crate::alignment::kabsch;
use crate::error::{Error, Result};
use crate::geometry::{centroid, flatten, unflatten, Vec3};
use crate::metrics::{evaluate, rscc};
use crate::pointcloud::{cluster_count, extract_pointcloud};
use crate::sampler::{
    dock_reference, sample_guided_stream, sample_unguided_stream, Condition, GaussianMixturePrior, GuidanceContext,
    MixtureMode,
};
use crate::structure::{read_pdb, write_pdb, AtomicModel};
use crate::volume::{read_mrc, DensityMap};

/// Score model plus the metadata needed to label samples by mode.
#[derive(Debug, Clone)]
pub struct PriorSetup {
    pub prior: GaussianMixturePrior,
    pub condition: Condition,
    pub template: AtomicModel,
    /// Mode means as coordinates, for nearest-mode labels.
    pub modes: Vec<Vec<Vec3>>,
}

impl PriorSetup {
    /// Mode with the lowest superposed RMSD to `coords`.
    pub fn closest_mode(&self, coords: &[Vec3]) -> Result<usize> {
        let mut best = (0, f64::INFINITY);
        for (m, mean) in self.modes.iter().enumerate() {
            let (_, r) = kabsch(coords, mean)?;
            if r < best.1 {
                best = (m, r);
            }
        }
        Ok(best.0)
    }
}

/// Builds the prior from `prior_modes` or, without modes, a single Gaussian
/// around the template. Every mode is shifted by the first mode's centroid so
/// the modes keep their relative placement.
pub fn build_prior(cfg: &RunConfig) -> Result<PriorSetup> {
    let template_path = cfg.template.as_ref().ok_or_else(|| Error::Config("missing template".into()))?;
    let template = read_pdb(template_path)?;
    if template.is_empty() {
        return Err(Error::EmptyModel);
    }
    let structures: Vec<Vec<Vec3>> = if cfg.prior_modes.is_empty() {
        vec![template.coords()]
    } else {
        cfg.prior_modes.iter().map(|p| read_pdb(p).map(|m| m.coords())).collect::<Result<_>>()?
    };
    for (i, s) in structures.iter().enumerate() {
        if s.len() != template.len() {
            return Err(Error::Config(format!(
                "prior mode {i} has {} atoms, template has {}",
                s.len(),
                template.len()
            )));
        }
    }
    let shift = centroid(&structures[0]);
    let modes: Vec<Vec<Vec3>> = structures.iter().map(|s| s.iter().map(|p| p - shift).collect()).collect();
    let weights = if cfg.prior_modes.is_empty() { vec![1.0] } else { cfg.prior_weights.clone() };
    let mixture = modes
        .iter()
        .zip(&weights)
        .map(|(m, w)| MixtureMode { mean: flatten(m), tau: cfg.prior_tau, weight: *w })
        .collect();
    let prior = GaussianMixturePrior::new(cfg.condition.clone(), mixture)?;
    Ok(PriorSetup { prior, condition: Condition::new(cfg.condition.clone()), template, modes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub replicate: usize,
    pub sample: usize,
    pub seed: u64,
    pub path: PathBuf,
    /// `None` when the sample failed.
    pub rscc: Option<f64>,
    pub rmsd: Option<f64>,
    pub mode: Option<usize>,
    pub error: Option<String>,
}

impl ManifestRow {
    pub fn sample_id(&self) -> String {
        format!("rep{}/sample{}", self.replicate, self.sample)
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub seed: u64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub dock_score: Option<f64>,
    /// Highest-RSCC sample and its value.
    pub best_rscc: Option<(usize, f64)>,
    /// Lowest-RMSD sample and its value, when a reference was given.
    pub best_rmsd: Option<(usize, f64)>,
}

impl ReplicateSummary {
    pub fn line(&self) -> String {
        let best = |b: Option<(usize, f64)>| b.map(|(i, v)| format!("sample{i} {v:.4}")).unwrap_or_else(|| "-".into());
        format!(
            "rep{}: seed {} ok {} failed {} dock {} best-rscc {} best-rmsd {}",
            self.replicate,
            self.seed,
            self.n_ok,
            self.n_failed,
            self.dock_score.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into()),
            best(self.best_rscc),
            best(self.best_rmsd),
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<ManifestRow>,
    pub summaries: Vec<ReplicateSummary>,
    pub manifest: PathBuf,
}

impl RunOutcome {
    /// Fraction of successful samples labelled with `mode`.
    pub fn mode_fraction(&self, mode: usize) -> f64 {
        let ok: Vec<&ManifestRow> = self.rows.iter().filter(|r| r.ok()).collect();
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().filter(|r| r.mode == Some(mode)).count() as f64 / ok.len() as f64
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

/// Tab-separated manifest, one row per sample in replicate/sample order.
pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut out = String::from("sample_id\treplicate\tsample\tseed\tstatus\trscc\trmsd\tmode\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.sample_id(),
            r.replicate,
            r.sample,
            r.seed,
            if r.ok() { "ok" } else { "failed" },
            fmt_opt(r.rscc),
            fmt_opt(r.rmsd),
            r.mode.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io_at(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io_at(path, e))
}

struct Inputs {
    setup: PriorSetup,
    map: Option<DensityMap>,
    reference: Option<AtomicModel>,
}

fn load_inputs(cfg: &RunConfig, need_map: bool) -> Result<Inputs> {
    cfg.validate(need_map)?;
    let setup = build_prior(cfg)?;
    let map = cfg.map.as_ref().map(read_mrc).transpose()?;
    let reference = cfg.reference.as_ref().map(read_pdb).transpose()?;
    Ok(Inputs { setup, map, reference })
}

/// Re-reads a written sample and scores it against the run inputs. A sample
/// lying entirely outside the map keeps a blank rscc.
fn score_written(path: &Path, inputs: &Inputs, cfg: &RunConfig) -> Result<(Option<f64>, Option<f64>, Option<usize>)> {
    let model = read_pdb(path)?;
    let r = match inputs.map.as_ref().map(|m| rscc(&model, m, cfg.resolution)).transpose() {
        Err(Error::ZeroVariance("simulated map")) => {
            log::debug!("{} does not overlap the map; rscc left blank", path.display());
            None
        }
        other => other?,
    };
    let d = inputs.reference.as_ref().map(|r| evaluate(&model, r, None, None).map(|e| e.rmsd_all)).transpose()?;
    let mode = if inputs.setup.modes.len() > 1 { Some(inputs.setup.closest_mode(&model.coords())?) } else { None };
    Ok((r, d, mode))
}

fn summarize(replicate: usize, seed: u64, dock_score: Option<f64>, rows: &[ManifestRow]) -> ReplicateSummary {
    let ok: Vec<&ManifestRow> = rows.iter().filter(|r| r.ok()).collect();
    let pick = |f: fn(&ManifestRow) -> Option<f64>, higher: bool| {
        ok.iter().filter_map(|r| f(r).map(|v| (r.sample, v))).reduce(|a, b| {
            if (higher && b.1 > a.1) || (!higher && b.1 < a.1) {
                b
            } else {
                a
            }
        })
    };
    ReplicateSummary {
        replicate,
        seed,
        n_ok: ok.len(),
        n_failed: rows.len() - ok.len(),
        dock_score,
        best_rscc: pick(|r| r.rscc, true),
        best_rmsd: pick(|r| r.rmsd, false),
    }
}

fn finish(cfg: &RunConfig, rows: Vec<ManifestRow>, summaries: Vec<ReplicateSummary>) -> Result<RunOutcome> {
    let manifest = cfg.outdir.join("manifest.tsv");
    write_file(&manifest, &format_manifest(&rows))?;
    let summary: String = summaries.iter().map(|s| s.line() + "\n").collect();
    write_file(&cfg.outdir.join("summary.txt"), &summary)?;
    if rows.iter().all(|r| !r.ok()) {
        return Err(Error::AllSamplesFailed(rows.len()));
    }
    Ok(RunOutcome { rows, summaries, manifest })
}

/// Replicate `k` runs with seed `seed + k`; sample `j` uses RNG stream `j`.
pub fn replicate_seed(cfg: &RunConfig, replicate: usize) -> u64 {
    cfg.seed.wrapping_add(replicate as u64)
}

/// Guided sampling: one docked reference per replicate, then `n_samples`
/// guided samples written as `<outdir>/rep<k>/sample<j>.pdb`.
pub fn run_guide(cfg: &RunConfig) -> Result<RunOutcome> {
    let inputs = load_inputs(cfg, true)?;
    let map = inputs.map.clone().expect("validated map");
    let gsched = cfg.guidance_schedule()?;
    let setup = &inputs.setup;
    let n_atoms = setup.template.len();
    let k = if cfg.n_clusters > 0 { cfg.n_clusters } else { cluster_count(n_atoms, map.voxel_size()) };
    let base_ctx = GuidanceContext {
        target_cloud: extract_pointcloud(&map, k, cfg.seed)?,
        target_map: map,
        resolution: cfg.resolution,
        sinkhorn: cfg.sinkhorn.clone(),
        blur: cfg.blur_operator()?,
        reference: None,
    };
    log::info!("target cloud: {} clusters", base_ctx.target_cloud.len());
    create_dir(&cfg.outdir)?;
    write_file(&cfg.outdir.join("run.cfg"), &cfg.to_text())?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for replicate in 0..cfg.n_replicates {
        let seed = replicate_seed(cfg, replicate);
        let dir = cfg.outdir.join(format!("rep{replicate}"));
        create_dir(&dir)?;
        let (ctx, dock_score) = if gsched.is_disabled() {
            (base_ctx.clone(), None)
        } else {
            let (reference, score) = dock_reference(
                &setup.prior,
                &setup.condition,
                &cfg.noise,
                &setup.template,
                &base_ctx,
                seed,
                &cfg.dock,
            )?;
            log::info!("rep{replicate}: reference docked with correlation {score:.4}");
            (base_ctx.clone().with_reference(reference), Some(score))
        };
        let rep_rows: Vec<ManifestRow> = (0..cfg.n_samples)
            .into_par_iter()
            .map(|j| {
                let path = dir.join(format!("sample{j}.pdb"));
                let result = sample_guided_stream(
                    &setup.prior,
                    &setup.condition,
                    &ctx,
                    &cfg.noise,
                    &gsched,
                    &setup.template,
                    seed,
                    j as u64,
                    false,
                )
                .and_then(|g| write_pdb(&g.model, &path))
                .and_then(|_| score_written(&path, &inputs, cfg));
                row(replicate, j, seed, path, result)
            })
            .collect();
        let summary = summarize(replicate, seed, dock_score, &rep_rows);
        log::info!("{}", summary.line());
        rows.extend(rep_rows);
        summaries.push(summary);
    }
    finish(cfg, rows, summaries)
}

fn row(
    replicate: usize,
    sample: usize,
    seed: u64,
    path: PathBuf,
    result: Result<(Option<f64>, Option<f64>, Option<usize>)>,
) -> ManifestRow {
    match result {
        Ok((rscc, rmsd, mode)) => ManifestRow { replicate, sample, seed, path, rscc, rmsd, mode, error: None },
        Err(e) => {
            log::warn!("rep{replicate}/sample{sample} failed: {e}");
            ManifestRow {
                replicate,
                sample,
                seed,
                path,
                rscc: None,
                rmsd: None,
                mode: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Unguided sampling with the same layout, seeds and streams as [`run_guide`].
pub fn run_unguided(cfg: &RunConfig) -> Result<RunOutcome> {
    let inputs = load_inputs(cfg, false)?;
    let setup = &inputs.setup;
    create_dir(&cfg.outdir)?;
    write_file(&cfg.outdir.join("run.cfg"), &cfg.to_text())?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for replicate in 0..cfg.n_replicates {
        let seed = replicate_seed(cfg, replicate);
        let dir = cfg.outdir.join(format!("rep{replicate}"));
        create_dir(&dir)?;
        let rep_rows: Vec<ManifestRow> = (0..cfg.n_samples)
            .into_par_iter()
            .map(|j| {
                let path = dir.join(format!("sample{j}.pdb"));
                let result = sample_unguided_stream(&setup.prior, &setup.condition, &cfg.noise, seed, j as u64)
                    .and_then(|x| write_pdb(&setup.template.with_coords(&unflatten(&x)), &path))
                    .and_then(|_| score_written(&path, &inputs, cfg));
                row(replicate, j, seed, path, result)
            })
            .collect();
        summaries.push(summarize(replicate, seed, None, &rep_rows));
        rows.extend(rep_rows);
    }
    finish(cfg, rows, summaries)
}
