//! Two-conformation bead-chain fixture for the mode-recovery experiment.

use std::fs;
use std::path::Path;

use nalgebra::Rotation3;

use super::config::RunConfig;
use crate::alignment::{kabsch, RigidTransform};
use crate::error::{Error, Result};
use crate::forward::simulate_map;
use crate::geometry::{centroid, flatten, rotation_from_vector, Vec3};
use crate::sampler::ScheduleKind;
use crate::sampler::{Condition, GaussianMixturePrior, MixtureMode};
use crate::structure::{write_pdb, Atom, AtomicModel, Element};
use crate::volume::{write_mrc, DensityMap, Grid};

pub const DEMO_LABEL: &str = "demo";

#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub n_beads: usize,
    /// Beads after this index swing about it.
    pub hinge_index: usize,
    /// Bend of the swinging arm (degrees).
    pub hinge_deg: f64,
    pub tau: f64,
    pub majority_weight: f64,
    pub resolution: f64,
    pub voxel_size: f64,
    pub pad: usize,
    /// Rigid pose of the minority conformation inside the map.
    pub placement: RigidTransform,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec {
            n_beads: 30,
            hinge_index: 20,
            hinge_deg: 150.0,
            tau: 0.5,
            majority_weight: 0.95,
            resolution: 2.0,
            voxel_size: 1.0,
            pad: 6,
            placement: RigidTransform::new(
                rotation_from_vector(&Vec3::new(0.3, -0.5, 0.8)),
                Vec3::new(40.0, 35.0, 30.0),
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoFixture {
    pub prior: GaussianMixturePrior,
    pub condition: Condition,
    /// Majority conformation, centered; also the sampling template.
    pub majority: AtomicModel,
    /// Minority conformation in the majority's frame.
    pub minority: AtomicModel,
    /// Minority conformation at its pose in the map.
    pub minority_placed: AtomicModel,
    pub map: DensityMap,
    pub resolution: f64,
}

impl DemoFixture {
    /// Index of the mode with the lower superposed all-atom RMSD; 1 is the minority.
    pub fn closest_mode(&self, sample: &AtomicModel) -> Result<usize> {
        let c = sample.coords();
        let (_, r0) = kabsch(&c, &self.majority.coords())?;
        let (_, r1) = kabsch(&c, &self.minority.coords())?;
        Ok(if r1 < r0 { 1 } else { 0 })
    }
}

/// Dihedrals (degrees) of the compact domain, one per bead from the fourth on.
const DOMAIN_DIHEDRALS: [f64; 13] =
    [50.0, 60.0, -60.0, 180.0, 50.0, 50.0, 50.0, -120.0, 60.0, -80.0, 170.0, 50.0, 50.0];

/// Bead chain with 3.8 Å steps: a compact irregular domain up to
/// `hinge_index`, then an extended arm.
fn bead_chain(n: usize, hinge_index: usize) -> Vec<Vec3> {
    let bond = 3.8;
    let first = 70f64.to_radians();
    let mut p =
        vec![Vec3::zeros(), Vec3::new(bond, 0.0, 0.0), Vec3::new(bond + bond * first.cos(), bond * first.sin(), 0.0)];
    for i in 3..n {
        let (a, b, c) = (p[i - 3], p[i - 2], p[i - 1]);
        let (theta, phi): (f64, f64) =
            if i <= hinge_index { (110.0, DOMAIN_DIHEDRALS[(i - 3) % DOMAIN_DIHEDRALS.len()]) } else { (150.0, 180.0) };
        let (theta, phi) = (theta.to_radians(), phi.to_radians());
        let bc = (c - b).normalize();
        let normal = (b - a).cross(&bc).normalize();
        let m = normal.cross(&bc);
        let d = Vec3::new(-theta.cos(), theta.sin() * phi.cos(), theta.sin() * phi.sin()) * bond;
        p.push(c + bc * d.x + m * d.y + normal * d.z);
    }
    p
}

fn bead_model(points: &[Vec3]) -> AtomicModel {
    let atoms =
        points.iter().enumerate().map(|(i, p)| Atom::new(Element::C, *p, 'A', i as i32 + 1, "GLY", "CA")).collect();
    AtomicModel::new(atoms).with_provenance("demo bead chain")
}

pub fn demo_fixture(spec: &DemoSpec) -> Result<DemoFixture> {
    let hinge_index = spec.hinge_index.clamp(3, spec.n_beads - 2);
    let straight = bead_chain(spec.n_beads, hinge_index);
    let hinge = straight[hinge_index];
    let arm = straight[spec.n_beads - 1] - hinge;
    let domain = centroid(&straight[..hinge_index]) - hinge;
    let axis = nalgebra::Unit::new_normalize(arm.cross(&domain));
    let bend = Rotation3::from_axis_angle(&axis, spec.hinge_deg.to_radians());
    let bent: Vec<Vec3> = straight
        .iter()
        .enumerate()
        .map(|(i, p)| if i > hinge_index { bend * (p - hinge) + hinge } else { *p })
        .collect();
    // both modes share the majority's frame so the fixed arm coincides
    let c = centroid(&straight);
    let majority: Vec<Vec3> = straight.iter().map(|p| p - c).collect();
    let minority: Vec<Vec3> = bent.iter().map(|p| p - c).collect();
    let prior = GaussianMixturePrior::new(
        DEMO_LABEL,
        vec![
            MixtureMode { mean: flatten(&majority), tau: spec.tau, weight: spec.majority_weight },
            MixtureMode { mean: flatten(&minority), tau: spec.tau, weight: 1.0 - spec.majority_weight },
        ],
    )?;
    let placed = spec.placement.apply_all(&minority);
    let grid = Grid::enclosing(&placed, spec.voxel_size, spec.pad)?;
    let minority_placed = bead_model(&placed);
    let map = simulate_map(&minority_placed, &grid, spec.resolution)?;
    Ok(DemoFixture {
        prior,
        condition: Condition::new(DEMO_LABEL),
        majority: bead_model(&majority),
        minority: bead_model(&minority),
        minority_placed,
        map,
        resolution: spec.resolution,
    })
}

/// Writes the fixture into `dir` and returns a run configuration for it.
///
/// Files: `majority.pdb` and `minority.pdb` (prior modes, model frame),
/// `reference.pdb` (minority at its map pose), `map.mrc`, and `demo.cfg`.
/// The guidance schedule is the experimental one: with the synthetic
/// schedule the warm-up ends after this prior has already chosen a mode.
/// The target cloud has one point per bead; coarser clouds shift the
/// transport optimum toward the majority conformation.
pub fn write_demo(dir: &Path, spec: &DemoSpec) -> Result<RunConfig> {
    let f = demo_fixture(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let path = |name: &str| dir.join(name);
    write_pdb(&f.majority, path("majority.pdb"))?;
    write_pdb(&f.minority, path("minority.pdb"))?;
    write_pdb(&f.minority_placed, path("reference.pdb"))?;
    write_mrc(&f.map, path("map.mrc"))?;
    let cfg = RunConfig {
        map: Some(path("map.mrc")),
        reference: Some(path("reference.pdb")),
        template: Some(path("majority.pdb")),
        prior_modes: vec![path("majority.pdb"), path("minority.pdb")],
        prior_weights: vec![spec.majority_weight, 1.0 - spec.majority_weight],
        prior_tau: spec.tau,
        condition: DEMO_LABEL.into(),
        resolution: spec.resolution,
        schedule: ScheduleKind::Experimental,
        n_clusters: spec.n_beads,
        outdir: path("run"),
        ..Default::default()
    };
    fs::write(path("demo.cfg"), cfg.to_text()).map_err(|e| Error::io_at(path("demo.cfg"), e))?;
    Ok(cfg)
}
