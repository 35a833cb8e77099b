//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stdout (uncaptured) before asserting.

use std::io::Write;
use std::time::Instant;

use cryoguide::alignment::kabsch;
use cryoguide::forward::{density_loss, density_loss_grad, simulate_map, BlurOperator};
use cryoguide::metrics::{d0, evaluate, rscc};
use cryoguide::pipeline::{demo_fixture, run_guide, run_unguided, write_demo, DemoSpec};
use cryoguide::pointcloud::{cluster_count, weighted_kmeans, KMeansConfig, PointCloud};
use cryoguide::sampler::{
    integrate, lambda_global, lambda_local, make_schedule, sample_guided_stream, sample_rng, Condition,
    GaussianMixturePrior, GuidanceContext, NoiseSchedule, QuadraticGuidance, ScheduleKind, Unguided,
};
use cryoguide::structure::{format_pdb, parse_pdb, Atom, AtomicModel, Element};
use cryoguide::transport::{divergence_grad, ot_epsilon, sinkhorn_divergence, SinkhornConfig};
use cryoguide::volume::{read_mrc_bytes, write_mrc_bytes, DensityMap, Grid, MRC_HEADER_LEN};
use cryoguide::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n}: {verdict} ({detail})").unwrap();
}

fn random_vec(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

#[test]
fn criterion_1_mode_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DemoSpec::default();
    let f = demo_fixture(&spec).unwrap();
    let (_, separation) = kabsch(&f.majority.coords(), &f.minority.coords()).unwrap();

    let mut cfg = write_demo(dir.path(), &spec).unwrap();
    cfg.n_samples = 25;
    cfg.n_replicates = 2;
    let start = Instant::now();
    let guided = run_guide(&cfg).unwrap();
    let guided_secs = start.elapsed().as_secs_f64();
    cfg.outdir = dir.path().join("unguided");
    let unguided = run_unguided(&cfg).unwrap();
    let total_secs = start.elapsed().as_secs_f64();

    let count = |rows: &[cryoguide::pipeline::ManifestRow]| rows.iter().filter(|r| r.mode == Some(1)).count();
    let (g, u) = (count(&guided.rows), count(&unguided.rows));
    let (ng, nu) = (guided.rows.len(), unguided.rows.len());
    let pass = separation >= 8.0
        && ng == 50
        && nu == 50
        && g as f64 >= 0.9 * ng as f64
        && u as f64 <= 0.18 * nu as f64
        && total_secs < 300.0;
    report(
        1,
        pass,
        &format!(
            "separation {separation:.2} Å, guided minority {g}/{ng}, unguided minority {u}/{nu}, guided {guided_secs:.1} s, total {total_secs:.1} s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gaussian_posterior() {
    let mu = vec![2.0, -1.0, 0.5, 0.0, 1.5, -2.0];
    let y = vec![3.0, 0.0, -0.5, 1.0, 1.0, -1.0];
    let (tau, s) = (1.0f64, 0.7f64);
    let prior = GaussianMixturePrior::gaussian("g", mu.clone(), tau).unwrap();
    let cond = Condition::new("g");
    let sched = NoiseSchedule::default();
    let n = 500;
    let draws: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = QuadraticGuidance { target: y.clone(), noise_var: s * s, lambda: 1.0 };
            integrate(&prior, &cond, &sched, &mut sample_rng(11, i as u64), &mut g, false).unwrap().x
        })
        .collect();
    let (t2, s2) = (tau * tau, s * s);
    let post_var = t2 * s2 / (t2 + s2);
    let se = (post_var / n as f64).sqrt();
    let mut worst: f64 = 0.0;
    for c in 0..mu.len() {
        let post_mean = (s2 * mu[c] + t2 * y[c]) / (t2 + s2);
        let mean = draws.iter().map(|d| d[c]).sum::<f64>() / n as f64;
        worst = worst.max((mean - post_mean).abs() / se);
    }
    let pass = worst < 5.0;
    report(2, pass, &format!("worst coordinate {worst:.2} standard errors from the analytic mean"));
    assert!(pass);
}

#[test]
fn criterion_3_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let elements = [Element::C, Element::N, Element::O, Element::S];
    // small step: splats are truncated at 4σ
    let h_density = 1e-5;
    let h = 1e-4;
    let rel = |g: &[Vec3], fd: &[Vec3]| {
        let num: f64 = g.iter().zip(fd).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        num / den
    };

    let mut density_worst: f64 = 0.0;
    for _ in 0..20 {
        let n_atoms = rng.random_range(2..=6);
        let atoms: Vec<Atom> = (0..n_atoms)
            .map(|i| {
                Atom::new(elements[rng.random_range(0..4)], random_vec(&mut rng, 5.0, 11.0), 'A', i + 1, "GLY", "CA")
            })
            .collect();
        let model = AtomicModel::new(atoms);
        let grid = Grid::new([16, 16, 16], 1.0, Vec3::zeros()).unwrap();
        let resolution = rng.random_range(1.5..3.5);
        let jitter: Vec<Vec3> = model.coords().iter().map(|p| p + random_vec(&mut rng, -1.0, 1.0)).collect();
        let target = simulate_map(&model.with_coords(&jitter), &grid, resolution).unwrap();
        let blur =
            if rng.random_bool(0.5) { BlurOperator::new(rng.random_range(0.3..1.2)) } else { BlurOperator::default() };
        let grad = density_loss_grad(&model, &target, resolution, &blur).unwrap();
        let coords = model.coords();
        let mut fd = vec![Vec3::zeros(); coords.len()];
        for i in 0..coords.len() {
            for a in 0..3 {
                let mut plus = coords.clone();
                plus[i][a] += h_density;
                let mut minus = coords.clone();
                minus[i][a] -= h_density;
                let lp = density_loss(&model.with_coords(&plus), &target, resolution, &blur).unwrap();
                let lm = density_loss(&model.with_coords(&minus), &target, resolution, &blur).unwrap();
                fd[i][a] = (lp - lm) / (2.0 * h_density);
            }
        }
        density_worst = density_worst.max(rel(&grad, &fd));
    }

    let cfg = SinkhornConfig { tol: 1e-13, max_iters: 100_000, ..Default::default() };
    let mut transport_worst: f64 = 0.0;
    for _ in 0..20 {
        let nx = rng.random_range(3..=8);
        let ny = rng.random_range(3..=8);
        let x = PointCloud::uniform((0..nx).map(|_| random_vec(&mut rng, -4.0, 4.0)).collect()).unwrap();
        let y = PointCloud::new(
            (0..ny).map(|_| random_vec(&mut rng, -4.0, 4.0)).collect(),
            (0..ny).map(|_| rng.random_range(0.2..1.0)).collect(),
        )
        .unwrap();
        let grad = divergence_grad(&x, &y, &cfg).unwrap();
        let mut fd = vec![Vec3::zeros(); nx];
        for i in 0..nx {
            for a in 0..3 {
                let mut plus = x.clone();
                plus.points[i][a] += h;
                let mut minus = x.clone();
                minus.points[i][a] -= h;
                fd[i][a] = (sinkhorn_divergence(&plus, &y, &cfg).unwrap()
                    - sinkhorn_divergence(&minus, &y, &cfg).unwrap())
                    / (2.0 * h);
            }
        }
        transport_worst = transport_worst.max(rel(&grad, &fd));
    }
    let pass = density_worst < 1e-4 && transport_worst < 1e-3;
    report(3, pass, &format!("worst relative error: density {density_worst:.2e}, divergence {transport_worst:.2e}"));
    assert!(pass);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn criterion_4_sinkhorn_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SinkhornConfig { tol: 1e-4, max_iters: 100_000, ..SinkhornConfig::balanced(1e-3) };
    let mut worst_rel: f64 = 0.0;
    for _ in 0..40 {
        let n = rng.random_range(1..=4);
        let x: Vec<Vec3> = (0..n).map(|_| random_vec(&mut rng, -3.0, 3.0)).collect();
        let y: Vec<Vec3> = (0..n).map(|_| random_vec(&mut rng, -3.0, 3.0)).collect();
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| 0.5 * (x[i] - y[j]).norm_squared()).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let r = ot_epsilon(&PointCloud::uniform(x).unwrap(), &PointCloud::uniform(y).unwrap(), &cfg).unwrap();
        worst_rel = worst_rel.max((r.cost - best).abs() / best);
    }

    let mut worst_self: f64 = 0.0;
    for i in 0..100 {
        let n = rng.random_range(1..=30);
        let x = PointCloud::new(
            (0..n).map(|_| random_vec(&mut rng, -10.0, 10.0)).collect(),
            (0..n).map(|_| rng.random_range(0.1..1.0)).collect(),
        )
        .unwrap();
        let base = if i % 2 == 0 {
            SinkhornConfig::default()
        } else {
            SinkhornConfig { weighted: true, ..SinkhornConfig::balanced(1.0) }
        };
        let cfg = SinkhornConfig { tol: 1e-6, max_iters: 100_000, ..base };
        worst_self = worst_self.max(sinkhorn_divergence(&x, &x, &cfg).unwrap().abs());
    }
    let pass = worst_rel < 0.01 && worst_self < 1e-6;
    report(4, pass, &format!("worst relative cost error {worst_rel:.2e}, worst |D(X,X)| {worst_self:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_5_schedule_constants() {
    let syn = make_schedule(ScheduleKind::Synthetic, 200).unwrap();
    let exp = make_schedule(ScheduleKind::Experimental, 200).unwrap();
    let stages = |s: &cryoguide::sampler::GuidanceSchedule| [s.t_warm, s.t_global, s.t_local, s.t_relax];
    let mut pass = stages(&syn) == [125, 25, 25, 25] && stages(&exp) == [100, 50, 25, 25];
    for s in [&syn, &exp] {
        pass &= lambda_global(0, s) == 0.25;
        pass &= (lambda_global(s.t_global, s) - 0.05).abs() < 1e-15;
        pass &= (0..=200).all(|t| lambda_local(t, s) == 0.5);
    }
    report(
        5,
        pass,
        &format!(
            "stages {:?} and {:?}, lambda_global {} -> {}, lambda_local {}",
            stages(&syn),
            stages(&exp),
            lambda_global(0, &syn),
            lambda_global(syn.t_global, &syn),
            lambda_local(0, &syn)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_cluster_count() {
    let (a, b) = (cluster_count(4000, 1.0), cluster_count(4000, 2.0));
    let pass = a == 1000 && b == 125;
    report(6, pass, &format!("cluster_count(4000, 1) = {a}, cluster_count(4000, 2) = {b}"));
    assert!(pass);
}

#[test]
fn criterion_7_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let atoms: Vec<Atom> = (0..40)
        .map(|i| {
            Atom::new(
                Element::C,
                Vec3::new(3.8 * i as f64 * 0.3, 0.0, 0.0) + random_vec(&mut rng, 4.0, 8.0),
                'A',
                i + 1,
                "GLY",
                "CA",
            )
        })
        .collect();
    let model = AtomicModel::new(atoms);
    let r = evaluate(&model, &model, None, None).unwrap();
    let grid = Grid::enclosing(&model.coords(), 1.0, 5).unwrap();
    let map = simulate_map(&model, &grid, 2.0).unwrap();
    let self_rscc = rscc(&model, &map, 2.0).unwrap();
    let independent = 1.24 * 85f64.powf(1.0 / 3.0) - 1.8;
    let d = d0(100);
    let pass = r.rmsd_all.abs() <= 1e-10
        && r.rmsd_ca.abs() <= 1e-10
        && (r.tm_score - 1.0).abs() <= 1e-12
        && (self_rscc - 1.0).abs() <= 1e-10
        && (d - independent).abs() <= 1e-9
        && (d - 3.652068793476142).abs() <= 1e-9;
    report(7, pass, &format!("rmsd {:.1e}, tm {}, self rscc {self_rscc}, d0(100) {d}", r.rmsd_all, r.tm_score));
    assert!(pass);
}

/// Minimum weighted within-cluster sum of squares over all labelings.
fn brute_force_objective(points: &[Vec3], weights: &[f64], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let w: f64 = members.iter().map(|&i| weights[i]).sum();
            if w == 0.0 {
                continue;
            }
            let centroid = members.iter().map(|&i| points[i] * weights[i]).sum::<Vec3>() / w;
            total += members.iter().map(|&i| weights[i] * (points[i] - centroid).norm_squared()).sum::<f64>();
        }
        best = best.min(total);
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn criterion_8_kmeans_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for trial in 0..30 {
        let n = rng.random_range(3..=12);
        let k = rng.random_range(1..=3usize.min(n));
        let mut points: Vec<Vec3> = Vec::new();
        while points.len() < n {
            let p =
                Vec3::new(rng.random_range(0..6) as f64, rng.random_range(0..6) as f64, rng.random_range(0..4) as f64);
            if !points.contains(&p) {
                points.push(p);
            }
        }
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let r = weighted_kmeans(&points, &weights, k, &KMeansConfig::default(), trial).unwrap();
        worst = worst.max((r.objective - brute_force_objective(&points, &weights, k)).abs());
    }
    let pass = worst <= 1e-9;
    report(8, pass, &format!("worst objective gap {worst:.2e} over 30 fixtures"));
    assert!(pass);
}

#[test]
fn criterion_9_io_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = Grid::new([7, 5, 6], 1.3, Vec3::new(-4.0, 2.5, 10.0)).unwrap();
    let data: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-3.0f32..3.0) as f64).collect();
    let map = DensityMap::new(grid, data.clone()).unwrap();
    let bytes = write_mrc_bytes(&map);
    let back = read_mrc_bytes(&bytes).unwrap();
    let payload = |b: &[u8]| b[MRC_HEADER_LEN..].to_vec();
    let mrc_ok = back.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits())
        && payload(&write_mrc_bytes(&back)) == payload(&bytes);

    let atoms: Vec<Atom> =
        (0..25).map(|i| Atom::new(Element::N, random_vec(&mut rng, -500.0, 500.0), 'B', i - 3, "ALA", "N")).collect();
    let model = AtomicModel::new(atoms);
    let parsed = parse_pdb(&format_pdb(&model).unwrap()).unwrap();
    let pdb_err = model.coords().iter().zip(parsed.coords()).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = write_demo(dir.path(), &DemoSpec::default()).unwrap();
    cfg.n_samples = 4;
    cfg.n_replicates = 2;
    cfg.outdir = dir.path().join("a");
    run_guide(&cfg).unwrap();
    let first = std::fs::read(dir.path().join("a/manifest.tsv")).unwrap();
    cfg.outdir = dir.path().join("b");
    run_guide(&cfg).unwrap();
    let second = std::fs::read(dir.path().join("b/manifest.tsv")).unwrap();
    let samples_equal = (0..4).all(|j| {
        let p = format!("rep1/sample{j}.pdb");
        std::fs::read(dir.path().join("a").join(&p)).unwrap() == std::fs::read(dir.path().join("b").join(&p)).unwrap()
    });

    let pass = mrc_ok && pdb_err <= 1e-3 && first == second && samples_equal;
    report(
        9,
        pass,
        &format!(
            "mrc bit-exact {mrc_ok}, pdb max error {pdb_err:.1e} Å, manifests identical {}, samples identical {samples_equal}",
            first == second
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_guidance_off_equivalence() {
    let f = demo_fixture(&DemoSpec::default()).unwrap();
    let sched = NoiseSchedule::default();
    let off = make_schedule(ScheduleKind::Experimental, sched.n_steps).unwrap().disabled();
    let ctx = GuidanceContext::new(f.map.clone(), f.majority.len(), f.resolution, 0).unwrap();
    let mut identical = true;
    for stream in 0..3u64 {
        let guided =
            sample_guided_stream(&f.prior, &f.condition, &ctx, &sched, &off, &f.majority, 5, stream, true).unwrap();
        let plain = integrate(&f.prior, &f.condition, &sched, &mut sample_rng(5, stream), &mut Unguided, true).unwrap();
        let (a, b) = (guided.trajectory.unwrap(), plain.trajectory.unwrap());
        identical &= a.len() == b.len()
            && a.iter().zip(&b).all(|(u, v)| u.iter().zip(v).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    report(10, identical, "three lambda = 0 trajectories compared bit for bit against unguided ones");
    assert!(identical);
}
