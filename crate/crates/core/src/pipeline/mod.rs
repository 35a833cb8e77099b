//! End-to-end runs: configuration, replicate/sample orchestration, outputs.

mod config;
mod demo;
mod run;

pub use config::RunConfig;
pub use demo::{demo_fixture, write_demo, DemoFixture, DemoSpec, DEMO_LABEL};
pub use run::{
    build_prior, format_manifest, replicate_seed, run_guide, run_unguided, ManifestRow, PriorSetup, ReplicateSummary,
    RunOutcome,
};
