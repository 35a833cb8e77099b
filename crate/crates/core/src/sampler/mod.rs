//! Reverse-diffusion sampling with analytic score models and staged
//! density guidance.
//!
//! Coordinates are flat `[x0, y0, z0, x1, ...]` vectors in the score
//! model's frame. Guidance gradients are computed in the map frame and
//! pulled back through the alignment found at the first guided step.

mod engine;
mod guided;
mod schedule;
mod score;

pub use engine::{
    gradient_normalize, integrate, sample_rng, sample_unguided, sample_unguided_stream, Guidance, QuadraticGuidance,
    SamplerRun, StepInfo, Unguided,
};
pub use guided::{
    dock_reference, sample_guided, sample_guided_stream, GuidanceContext, GuidanceStats, GuidedSample, REFERENCE_STREAM,
};
pub use schedule::{lambda_global, lambda_local, make_schedule, GuidanceSchedule, NoiseSchedule, ScheduleKind, Stage};
pub use score::{tweedie_estimate, Condition, GaussianMixturePrior, MixtureMode, ScoreModel, ZeroScore};
