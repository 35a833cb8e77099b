use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cryoguide::alignment::kabsch;
use cryoguide::forward::simulate_map;
use cryoguide::metrics::{evaluate, EvalReport};
use cryoguide::pipeline::{run_guide, run_unguided, write_demo, DemoSpec, RunConfig, RunOutcome};
use cryoguide::pointcloud::{cluster_count, extract_pointcloud};
use cryoguide::structure::{read_pdb, write_pdb, Atom, AtomicModel, Element};
use cryoguide::volume::{crop_pad, dust, mask_near_model, pad_to_shape, read_mrc, threshold, write_mrc, Grid};

const THREADS_ENV: &str = "CRYOGUIDE_THREADS";

#[derive(Parser)]
#[command(name = "cryoguide", version, about = "Density-guided diffusion sampling of atomic models")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a density map from a PDB model.
    SimulateMap(SimulateArgs),
    /// Compress a map into a weighted point cloud.
    Pointcloud(PointcloudArgs),
    /// Guided sampling run described by a config file.
    Guide(RunArgs),
    /// Unguided sampling run described by a config file.
    Sample(RunArgs),
    /// Compare a sample with a reference, optionally against a map.
    Score(ScoreArgs),
    /// Superpose one model onto another.
    Align(AlignArgs),
    /// Threshold, dust, crop/pad and mask a map.
    Prep(PrepArgs),
    /// Two-conformation demo: writes inputs, then runs guided and unguided sampling.
    Demo(DemoArgs),
}

#[derive(Args)]
struct SimulateArgs {
    model: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(short, long, default_value_t = 2.0)]
    resolution: f64,
    #[arg(long, default_value_t = 1.0)]
    voxel: f64,
    #[arg(long, default_value_t = 6)]
    pad: usize,
    /// Pad to at least this many voxels per axis.
    #[arg(long)]
    shape: Option<usize>,
}

#[derive(Args)]
struct PointcloudArgs {
    map: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Number of clusters; derived from --atoms when absent.
    #[arg(short, long)]
    clusters: Option<usize>,
    /// Atom count of the modelled system.
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the points as pseudo-atoms.
    #[arg(long)]
    pdb: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Override a config entry, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ScoreArgs {
    sample: PathBuf,
    reference: PathBuf,
    #[arg(short, long)]
    map: Option<PathBuf>,
    /// Map resolution; defaults to the value stored with the map, else 2 Å.
    #[arg(short, long)]
    resolution: Option<f64>,
    /// Residue range for local RMSD, `CHAIN:LO-HI`.
    #[arg(long)]
    local: Option<String>,
    /// Print `key=value` lines instead of the table.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct AlignArgs {
    mobile: PathBuf,
    target: PathBuf,
    /// Write the superposed mobile model here.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    map: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Zero voxels below this level.
    #[arg(long)]
    threshold: Option<f64>,
    /// Remove connected components smaller than this many voxels.
    #[arg(long)]
    dust: Option<usize>,
    /// Crop to voxels at or above the threshold level plus this margin.
    #[arg(long)]
    crop: Option<usize>,
    /// Pad to at least this many voxels per axis.
    #[arg(long)]
    shape: Option<usize>,
    /// Keep only voxels near this model.
    #[arg(long)]
    mask_model: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    mask_radius: f64,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(short, long, default_value = "cryoguide-demo")]
    outdir: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        value.trim().parse().map_err(|_| anyhow!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SimulateMap(a) => simulate(a),
        Command::Pointcloud(a) => pointcloud(a),
        Command::Guide(a) => run(a, true),
        Command::Sample(a) => run(a, false),
        Command::Score(a) => score(a),
        Command::Align(a) => align(a),
        Command::Prep(a) => prep(a),
        Command::Demo(a) => demo(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if !(a.resolution > 0.0) {
        bail!("resolution must be > 0, got {}", a.resolution);
    }
    let model = read_pdb(&a.model)?;
    let grid = Grid::enclosing(&model.coords(), a.voxel, a.pad)?;
    let mut map = simulate_map(&model, &grid, a.resolution)?;
    if let Some(n) = a.shape {
        map = pad_to_shape(&map, [n; 3]);
    }
    write_mrc(&map, &a.out)?;
    let d = map.dims();
    println!("wrote {} ({}x{}x{}, voxel {} Å)", a.out.display(), d[0], d[1], d[2], a.voxel);
    Ok(())
}

fn pointcloud(a: PointcloudArgs) -> Result<()> {
    let map = read_mrc(&a.map)?;
    let k = match (a.clusters, a.atoms) {
        (Some(k), _) => k,
        (None, Some(n)) => cluster_count(n, map.voxel_size()),
        (None, None) => bail!("give --clusters or --atoms"),
    };
    let cloud = extract_pointcloud(&map, k, a.seed)?;
    fs::write(&a.out, cloud.to_text()).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = a.pdb {
        let element = Element::C;
        let atoms = cloud
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| Atom::new(element, *p, 'A', i as i32 + 1, "PCL", "CA"))
            .collect();
        write_pdb(&AtomicModel::new(atoms), path)?;
    }
    println!("{} points", cloud.len());
    Ok(())
}

fn load_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("override {kv:?} is not key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(a: RunArgs, guided: bool) -> Result<()> {
    let cfg = load_config(&a)?;
    let outcome = if guided { run_guide(&cfg)? } else { run_unguided(&cfg)? };
    report(&cfg, &outcome);
    Ok(())
}

fn report(cfg: &RunConfig, outcome: &RunOutcome) {
    for s in &outcome.summaries {
        println!("{}", s.line());
    }
    println!("manifest: {}", cfg.outdir.join("manifest.tsv").display());
}

fn parse_range(spec: &str) -> Result<(char, i32, i32)> {
    let err = || anyhow!("local range {spec:?} is not CHAIN:LO-HI");
    let (chain, range) = spec.split_once(':').ok_or_else(err)?;
    let mut chars = chain.chars();
    let (Some(c), None) = (chars.next(), chars.next()) else {
        return Err(err());
    };
    let cut = range.char_indices().skip(1).find(|&(_, c)| c == '-').map(|(i, _)| i).ok_or_else(err)?;
    let (lo, hi) = (&range[..cut], &range[cut + 1..]);
    Ok((c, lo.trim().parse().map_err(|_| err())?, hi.trim().parse().map_err(|_| err())?))
}

fn score(a: ScoreArgs) -> Result<()> {
    let sample = read_pdb(&a.sample)?;
    let reference = read_pdb(&a.reference)?;
    let local = a.local.as_deref().map(parse_range).transpose()?;
    let map = a.map.as_ref().map(read_mrc).transpose()?;
    let resolution = a.resolution.or(map.as_ref().and_then(|m| m.resolution)).unwrap_or(2.0);
    if !(resolution > 0.0) {
        bail!("resolution must be > 0, got {resolution}");
    }
    let report = evaluate(&sample, &reference, map.as_ref().map(|m| (m, resolution)), local)?;
    if a.kv {
        print!("{}", report.to_key_values());
    } else {
        print!("{}", table(&report));
    }
    Ok(())
}

fn table(r: &EvalReport) -> String {
    let mut rows = vec![("rmsd_all", format!("{:.3}", r.rmsd_all)), ("rmsd_ca", format!("{:.3}", r.rmsd_ca))];
    if let Some(v) = r.rmsd_local {
        rows.push(("rmsd_local", format!("{v:.3}")));
    }
    rows.push(("tm_score", format!("{:.3}", r.tm_score)));
    if let Some(v) = r.rscc {
        rows.push(("rscc", format!("{v:.3}")));
    }
    rows.push(("paired_ca", r.paired_ca.to_string()));
    rows.push(("paired_atoms", r.paired_atoms.to_string()));
    rows.push(("unpaired_atoms", r.unpaired_atoms.to_string()));
    rows.iter().map(|(k, v)| format!("{k:<16}{v:>10}\n")).collect()
}

fn align(a: AlignArgs) -> Result<()> {
    let mobile = read_pdb(&a.mobile)?;
    let target = read_pdb(&a.target)?;
    let (transform, rmsd) = if mobile.len() == target.len() {
        kabsch(&mobile.coords(), &target.coords())?
    } else {
        let r = evaluate(&mobile, &target, None, None)?;
        (r.superposition, r.rmsd_ca)
    };
    let m = transform.rotation;
    println!("rotation");
    for i in 0..3 {
        println!("  {:>10.6} {:>10.6} {:>10.6}", m[(i, 0)], m[(i, 1)], m[(i, 2)]);
    }
    let t = transform.translation;
    println!("translation {:.4} {:.4} {:.4}", t.x, t.y, t.z);
    println!("rmsd {rmsd:.4}");
    if let Some(out) = a.out {
        write_pdb(&transform.apply_model(&mobile), out)?;
    }
    Ok(())
}

fn prep(a: PrepArgs) -> Result<()> {
    let mut map = read_mrc(&a.map)?;
    let level = a.threshold.unwrap_or(f64::MIN_POSITIVE);
    if let Some(t) = a.threshold {
        map = threshold(&map, t);
    }
    if let Some(n) = a.dust {
        map = dust(&map, n);
    }
    if let Some(path) = &a.mask_model {
        map = mask_near_model(&map, &read_pdb(path)?, a.mask_radius);
    }
    if let Some(pad) = a.crop {
        map = crop_pad(&map, level, pad)?;
    }
    if let Some(n) = a.shape {
        map = pad_to_shape(&map, [n; 3]);
    }
    write_mrc(&map, &a.out)?;
    let d = map.dims();
    println!("wrote {} ({}x{}x{})", a.out.display(), d[0], d[1], d[2]);
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let mut cfg = write_demo(&a.outdir, &DemoSpec::default())?;
    if let Some(n) = a.samples {
        cfg.n_samples = n;
    }
    if let Some(n) = a.replicates {
        cfg.n_replicates = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    fs::write(a.outdir.join("demo.cfg"), cfg.to_text()).context("writing demo.cfg")?;
    let guided = run_guide(&cfg)?;
    report(&cfg, &guided);
    let unguided_cfg = RunConfig { outdir: a.outdir.join("unguided"), ..cfg.clone() };
    let unguided = run_unguided(&unguided_cfg)?;
    report(&unguided_cfg, &unguided);
    println!("minority fraction guided {:.3} unguided {:.3}", guided.mode_fraction(1), unguided.mode_fraction(1));
    Ok(())
}
