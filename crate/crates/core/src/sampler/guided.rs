use super::engine::{gradient_normalize, integrate, sample_rng, sample_unguided_stream, Guidance, StepInfo};
use super::schedule::{GuidanceSchedule, NoiseSchedule, Stage};
use super::score::{Condition, ScoreModel};
use crate::alignment::{dock_to_map_with, kabsch, DockConfig, RigidTransform};
use crate::error::{Error, Result};
use crate::forward::{density_loss_grad, BlurOperator};
use crate::geometry::{flatten, rms_norm, unflatten, Vec3};
use crate::pointcloud::{cluster_count, extract_pointcloud, PointCloud};
use crate::structure::AtomicModel;
use crate::transport::{divergence_with_grad, SinkhornConfig};
use crate::volume::DensityMap;

/// RNG stream reserved for the unguided reference sample of a run.
pub const REFERENCE_STREAM: u64 = u64::MAX;

/// Read-only inputs shared by every guided sample.
#[derive(Debug, Clone)]
pub struct GuidanceContext {
    pub target_map: DensityMap,
    pub target_cloud: PointCloud,
    pub resolution: f64,
    pub sinkhorn: SinkhornConfig,
    pub blur: BlurOperator,
    /// Docked reference coordinates (map frame). Without one the model frame is used as is.
    pub reference: Option<Vec<Vec3>>,
}

impl GuidanceContext {
    /// Builds the target cloud from `map` with `cluster_count(n_atoms, voxel)` clusters.
    pub fn new(target_map: DensityMap, n_atoms: usize, resolution: f64, seed: u64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::InvalidArgument(format!("resolution must be > 0, got {resolution}")));
        }
        let k = cluster_count(n_atoms, target_map.voxel_size());
        let target_cloud = extract_pointcloud(&target_map, k, seed)?;
        Ok(GuidanceContext {
            target_map,
            target_cloud,
            resolution,
            sinkhorn: SinkhornConfig { weighted: true, ..Default::default() },
            blur: BlurOperator::default(),
            reference: None,
        })
    }

    pub fn with_reference(mut self, reference: Vec<Vec3>) -> Self {
        self.reference = Some(reference);
        self
    }
}

/// Draws one unguided sample on [`REFERENCE_STREAM`] and docks it into the map.
///
/// Returns the docked coordinates and the docking correlation.
pub fn dock_reference(
    model: &dyn ScoreModel,
    condition: &Condition,
    schedule: &NoiseSchedule,
    template: &AtomicModel,
    ctx: &GuidanceContext,
    seed: u64,
    dock: &DockConfig,
) -> Result<(Vec<Vec3>, f64)> {
    let x = sample_unguided_stream(model, condition, schedule, seed, REFERENCE_STREAM)?;
    let sample = template.with_coords(&unflatten(&x));
    let r = dock_to_map_with(&sample, &ctx.target_map, ctx.resolution, dock)?;
    Ok((r.transform.apply_all(&sample.coords()), r.score))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuidanceStats {
    pub score_evals: usize,
    pub global_calls: usize,
    pub local_calls: usize,
    /// Global steps whose Sinkhorn solves hit the iteration cap.
    pub unconverged_transport: usize,
    /// RMSD of the intermediate estimate to the reference at alignment.
    pub alignment_rmsd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GuidedSample {
    /// Template metadata with sampled coordinates in the map frame.
    pub model: AtomicModel,
    /// Model frame to map frame; `None` when guidance never ran.
    pub frame: Option<RigidTransform>,
    pub stats: GuidanceStats,
    pub trajectory: Option<Vec<Vec<f64>>>,
}

struct Multiscale<'a> {
    ctx: &'a GuidanceContext,
    gsched: &'a GuidanceSchedule,
    template: &'a AtomicModel,
    index: u64,
    frame: Option<RigidTransform>,
    stats: GuidanceStats,
}

impl Multiscale<'_> {
    fn align(&mut self, x_hat: &[Vec3]) -> Result<RigidTransform> {
        if let Some(f) = self.frame {
            return Ok(f);
        }
        let f = match &self.ctx.reference {
            Some(reference) => {
                let (f, rmsd) = kabsch(x_hat, reference)?;
                self.stats.alignment_rmsd = Some(rmsd);
                f
            }
            None => RigidTransform::identity(),
        };
        self.frame = Some(f);
        Ok(f)
    }

    fn world_gradient(&mut self, stage: Stage, world: &[Vec3]) -> Result<Vec<Vec3>> {
        match stage {
            Stage::Global(_) => {
                self.stats.global_calls += 1;
                let cloud = PointCloud::uniform(world.to_vec())?;
                let div = divergence_with_grad(&cloud, &self.ctx.target_cloud, &self.ctx.sinkhorn)?;
                if !div.converged {
                    self.stats.unconverged_transport += 1;
                }
                Ok(div.grad)
            }
            Stage::Local(_) => {
                self.stats.local_calls += 1;
                let posed = self.template.with_coords(world);
                density_loss_grad(&posed, &self.ctx.target_map, self.ctx.resolution, &self.ctx.blur)
            }
            Stage::Warmup | Stage::Relax => Ok(vec![Vec3::zeros(); world.len()]),
        }
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Warmup => "warm-up",
        Stage::Global(_) => "global",
        Stage::Local(_) => "local",
        Stage::Relax => "relax",
    }
}

impl Guidance for Multiscale<'_> {
    fn adjust(
        &mut self,
        model: &dyn ScoreModel,
        condition: &Condition,
        info: &StepInfo<'_>,
        x_hat: &mut [f64],
    ) -> Result<()> {
        let stage = self.gsched.stage_at(info.step);
        let entering = info.step == 0
            || std::mem::discriminant(&self.gsched.stage_at(info.step - 1)) != std::mem::discriminant(&stage);
        if entering {
            log::info!(
                "sample {}: {} stage from step {} (sigma {:.3})",
                self.index,
                stage_name(stage),
                info.step,
                info.t_hat
            );
        }
        if self.gsched.is_disabled() || matches!(stage, Stage::Warmup | Stage::Relax) {
            return Ok(());
        }
        let points = unflatten(x_hat);
        let frame = self.align(&points)?;
        let lambda = self.gsched.lambda_at(info.step);
        if lambda == 0.0 {
            return Ok(());
        }
        let world = frame.apply_all(&points);
        let grad_world = self.world_gradient(stage, &world)?;
        let rt = frame.rotation.transpose();
        let grad: Vec<Vec3> = grad_world.iter().map(|g| rt * g).collect();
        let grad = match model.denoiser_vjp(info.x_noisy, condition, info.t_hat, &flatten(&grad)) {
            Some(pulled) => unflatten(&pulled?),
            None => grad,
        };
        let displacement: Vec<Vec3> =
            unflatten(&x_hat.iter().zip(info.x_noisy).map(|(a, b)| a - b).collect::<Vec<_>>());
        let step = gradient_normalize(&grad, rms_norm(&displacement));
        for (xh, g) in x_hat.iter_mut().zip(flatten(&step)) {
            *xh -= lambda * g;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sample_guided(
    model: &dyn ScoreModel,
    condition: &Condition,
    ctx: &GuidanceContext,
    schedule: &NoiseSchedule,
    gsched: &GuidanceSchedule,
    template: &AtomicModel,
    seed: u64,
) -> Result<GuidedSample> {
    sample_guided_stream(model, condition, ctx, schedule, gsched, template, seed, 0, false)
}

/// Guided sample `index` of a run; `record` keeps the full trajectory.
#[allow(clippy::too_many_arguments)]
pub fn sample_guided_stream(
    model: &dyn ScoreModel,
    condition: &Condition,
    ctx: &GuidanceContext,
    schedule: &NoiseSchedule,
    gsched: &GuidanceSchedule,
    template: &AtomicModel,
    seed: u64,
    index: u64,
    record: bool,
) -> Result<GuidedSample> {
    gsched.validate(schedule.n_steps)?;
    if template.len() != model.n_atoms() {
        return Err(Error::InvalidArgument(format!(
            "template has {} atoms, score model expects {}",
            template.len(),
            model.n_atoms()
        )));
    }
    let mut guidance = Multiscale { ctx, gsched, template, index, frame: None, stats: GuidanceStats::default() };
    let mut rng = sample_rng(seed, index);
    let run = integrate(model, condition, schedule, &mut rng, &mut guidance, record)?;
    let mut stats = guidance.stats;
    stats.score_evals = run.score_evals;
    let frame = guidance.frame;
    let coords = unflatten(&run.x);
    let coords = match &frame {
        Some(f) => f.apply_all(&coords),
        None => coords,
    };
    Ok(GuidedSample { model: template.with_coords(&coords), frame, stats, trajectory: run.trajectory })
}
