//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use distgp_cli::config::ExperimentConfig;
use distgp_cli::experiments::run_experiment;
use distgp_cli::report::ExperimentReport;
use distgp_core::barycenter::{gaussian_barycenter, gaussian_barycenter_measure};
use distgp_core::gp::GpModel;
use distgp_core::kernel::{embed_gaussians, embedding_distance, gram_matrix, KernelParams};
use distgp_core::measures::{GaussianMeasure, GridDensity};
use distgp_core::ot::{gaussian_w2, map_l2_distance_gaussian, sinkhorn_plan, solve_assignment};
use distgp_core::rng::{seeded, standard_normal, SeededRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

// Tolerances of the acceptance contract.
const PSD_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const NAIVE_NEG_TOL: f64 = 1e-6;
const EMBED_PSD_TOL: f64 = 1e-8;
const CONSISTENCY_SEEDS: [u64; 3] = [1, 2, 3];
const MIN_DECREASE: f64 = 5.0;
const SLOPE_BAND: (f64, f64) = (-0.9, -0.2);
const REGRESSION_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MIN_Q2: f64 = 0.6;
const CIC_BAND: (f64, f64) = (0.75, 1.0);
const MC_REL_TOL: f64 = 0.01;
const ONE_DIM_TOL: f64 = 1e-10;
const BARYCENTER_RESIDUAL: f64 = 1e-9;
const COMMUTING_TOL: f64 = 1e-8;
const METRIC_SLACK: f64 = 1e-9;
const INVARIANCE_TOL: f64 = 1e-8;
const MARGINAL_TOL: f64 = 1e-8;
const DISK_SEEDS: [u64; 3] = [1, 2, 3];
const PAPER_CONSISTENCY: (f64, f64) = (1.52, 0.14);
const PAPER_REGRESSION: [(f64, f64); 2] = [(0.10, 0.81), (0.15, 0.61)];

/// A named criterion and the check that evaluates it.
type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(name: &str, seed: u64) -> ExperimentReport {
    let config = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    run_experiment(name, &config).unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"))
}

fn within(t: Duration, limit_secs: u64) -> bool {
    t <= Duration::from_secs(limit_secs)
}

fn psd_dichotomy() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut worst_embed = f64::INFINITY;
    let mut naive_counts = Vec::new();
    for seed in PSD_SEEDS {
        let r = run("psd", seed);
        let negatives = r.summary["naive_w2_negatives"] as usize;
        naive_counts.push(negatives);
        let embed = r.summary["embedding_min_ratio"];
        worst_embed = worst_embed.min(embed);
        pass &= negatives >= 1 && r.config.psd.naive_tol == NAIVE_NEG_TOL;
        pass &= embed >= -EMBED_PSD_TOL;
        pass &= r.summary["naive_w2_1d_min_ratio"] >= -EMBED_PSD_TOL;
    }
    let t = start.elapsed();
    pass &= within(t, 60);
    outcome(
        pass,
        format!("naive negatives per seed {naive_counts:?}, worst embedding min ratio {worst_embed:.3e}, {t:.1?}"),
    )
}

fn consistency_trend() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in CONSISTENCY_SEEDS {
        let r = run("consistency", seed);
        let ratio = r.summary.get("decrease_ratio").copied().unwrap_or(0.0);
        let slope = r.summary.get("slope").copied().unwrap_or(f64::NAN);
        pass &= ratio >= MIN_DECREASE;
        pass &= slope >= SLOPE_BAND.0 && slope <= SLOPE_BAND.1;
        parts.push(format!("seed {seed}: ratio {ratio:.2}, slope {slope:.3}"));
    }
    let t = start.elapsed();
    pass &= within(t, 300);
    let paper = PAPER_CONSISTENCY.0 / PAPER_CONSISTENCY.1;
    outcome(
        pass,
        format!("{} (reference decrease {paper:.1}x over n 20..620), {t:.1?}", parts.join("; ")),
    )
}

fn regression_benchmark() -> Outcome {
    let start = Instant::now();
    let n = REGRESSION_SEEDS.len() as f64;
    let (mut gp_rmse, mut sm_rmse, mut gp_q2, mut cic) = (0.0, 0.0, 0.0, 0.0);
    for seed in REGRESSION_SEEDS {
        let r = run("gaussian-regression", seed);
        gp_rmse += r.summary["gp_mle_rmse"] / n;
        sm_rmse += r.summary["smoothing_rmse"] / n;
        gp_q2 += r.summary["gp_mle_q2"] / n;
        cic += r.summary["gp_mle_cic"] / n;
    }
    let t = start.elapsed();
    let pass = gp_rmse < sm_rmse && gp_q2 >= MIN_Q2 && (CIC_BAND.0..=CIC_BAND.1).contains(&cic) && within(t, 600);
    outcome(
        pass,
        format!(
            "GP rmse {gp_rmse:.4} vs smoothing {sm_rmse:.4}, GP Q2 {gp_q2:.3}, CIC {cic:.3} \
             (reference GP {:.2}/{:.2}, smoothing {:.2}/{:.2}), {t:.1?}",
            PAPER_REGRESSION[0].0, PAPER_REGRESSION[0].1, PAPER_REGRESSION[1].0, PAPER_REGRESSION[1].1
        ),
    )
}

fn normal_matrix(rng: &mut SeededRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| standard_normal(rng))
}

fn random_spd(rng: &mut SeededRng, d: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, d, d);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.2
}

fn random_gaussian(rng: &mut SeededRng, d: usize) -> GaussianMeasure {
    let mean = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    GaussianMeasure::new(mean, random_spd(rng, d)).unwrap()
}

fn random_orthogonal(rng: &mut SeededRng, d: usize) -> DMatrix<f64> {
    normal_matrix(rng, d, d).qr().q()
}

fn conjugate(u: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let c = u * s * u.transpose();
    (&c + c.transpose()) * 0.5
}

/// Principal square root by the Denman-Beavers iteration.
fn sqrt_db(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (mut y, mut z) = (a.clone(), DMatrix::identity(n, n));
    for _ in 0..100 {
        let (yi, zi) = (y.clone().try_inverse().unwrap(), z.clone().try_inverse().unwrap());
        let ny = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
        let done = (&ny - &y).norm() <= 1e-15 * ny.norm();
        y = ny;
        if done {
            break;
        }
    }
    y
}

fn monte_carlo_map_distance(si: &DMatrix<f64>, sj: &DMatrix<f64>, sb: &DMatrix<f64>, rng: &mut SeededRng) -> f64 {
    let root = sqrt_db(sb);
    let inv = root.clone().try_inverse().unwrap();
    let t = |s: &DMatrix<f64>| &inv * sqrt_db(&(&root * s * &root)) * &inv;
    let diff = t(si) - t(sj);
    let chol = sb.clone().cholesky().unwrap().l();
    let draws = 200_000;
    let total: f64 = (0..draws)
        .map(|_| (&diff * (&chol * normal_matrix(rng, sb.nrows(), 1))).norm_squared())
        .sum();
    total / draws as f64
}

fn closed_form_oracles() -> Outcome {
    let mut rng = seeded(404);
    let mut worst_mc: f64 = 0.0;
    for k in 0..20 {
        let d = 2 + k % 2;
        let (si, sj, sb) = (random_spd(&mut rng, d), random_spd(&mut rng, d), random_spd(&mut rng, d));
        let exact = map_l2_distance_gaussian(&si, &sj, &sb).unwrap();
        let mc = monte_carlo_map_distance(&si, &sj, &sb, &mut rng);
        worst_mc = worst_mc.max((exact - mc).abs() / mc);
    }

    let sigmas: Vec<f64> = (0..10).map(|_| rng.gen_range(0.1..2.0)).collect();
    let ones: Vec<_> = sigmas
        .iter()
        .map(|s| GaussianMeasure::centered(DMatrix::from_element(1, 1, s * s)).unwrap())
        .collect();
    let bar = gaussian_barycenter_measure(&ones, None, 1e-12, 1000).unwrap().result;
    let f = embed_gaussians(&ones, &bar).unwrap();
    let mut worst_1d: f64 = 0.0;
    for i in 0..f.len() {
        for j in 0..f.len() {
            let d = embedding_distance(&f[i], &f[j]).unwrap();
            worst_1d = worst_1d.max((d - (sigmas[i] - sigmas[j]).abs()).abs());
        }
    }

    let mut worst_residual: f64 = 0.0;
    let mut worst_commuting: f64 = 0.0;
    for d in 1..=4 {
        let covs: Vec<_> = (0..6).map(|_| random_spd(&mut rng, d)).collect();
        let rep = gaussian_barycenter(&covs, None, 1e-10, 1000).unwrap();
        worst_residual = worst_residual.max(rep.residual);

        let u = random_orthogonal(&mut rng, d);
        let stds: Vec<Vec<f64>> = (0..5).map(|_| (0..d).map(|_| rng.gen_range(0.2..3.0)).collect()).collect();
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_iterator(d, v.iter().map(|x| x * x)));
        let family: Vec<_> = stds.iter().map(|s| conjugate(&u, &diag(s))).collect();
        let mean_std: Vec<f64> = (0..d).map(|k| stds.iter().map(|s| s[k]).sum::<f64>() / 5.0).collect();
        let expected = conjugate(&u, &diag(&mean_std));
        let got = gaussian_barycenter(&family, None, 1e-12, 1000).unwrap().result;
        worst_commuting = worst_commuting.max((got - expected).abs().max());
    }
    let pass = worst_mc < MC_REL_TOL
        && worst_1d <= ONE_DIM_TOL
        && worst_residual <= BARYCENTER_RESIDUAL
        && worst_commuting <= COMMUTING_TOL;
    outcome(
        pass,
        format!(
            "monte carlo rel err {worst_mc:.2e}, 1-D {worst_1d:.1e}, residual {worst_residual:.1e}, commuting {worst_commuting:.1e}"
        ),
    )
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    permutations(m - 1)
        .into_iter()
        .flat_map(|p| {
            (0..=p.len()).map(move |pos| {
                let mut q = p.clone();
                q.insert(pos, m - 1);
                q
            })
        })
        .collect()
}

fn property_suites() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(505);
    let mut failures = Vec::new();

    let mut triangle = 0;
    for k in 0..1000 {
        let d = 1 + k % 5;
        let (a, b, c) = (random_gaussian(&mut rng, d), random_gaussian(&mut rng, d), random_gaussian(&mut rng, d));
        let (ab, bc, ac) = (gaussian_w2(&a, &b).unwrap(), gaussian_w2(&b, &c).unwrap(), gaussian_w2(&a, &c).unwrap());
        let ok = ab >= 0.0
            && ab == gaussian_w2(&b, &a).unwrap()
            && gaussian_w2(&a, &a).unwrap() <= METRIC_SLACK
            && ac <= ab + bc + METRIC_SLACK;
        triangle += usize::from(!ok);
    }
    if triangle > 0 {
        failures.push(format!("{triangle} metric violations"));
    }

    let mut invariance: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.gen_range(2..=4);
        let u = random_orthogonal(&mut rng, d);
        let (si, sj, sb) = (random_spd(&mut rng, d), random_spd(&mut rng, d), random_spd(&mut rng, d));
        let plain = map_l2_distance_gaussian(&si, &sj, &sb).unwrap();
        let rot = map_l2_distance_gaussian(&conjugate(&u, &si), &conjugate(&u, &sj), &conjugate(&u, &sb)).unwrap();
        invariance = invariance.max((plain - rot).abs() / plain.max(1.0));
    }
    for _ in 0..10 {
        let d = rng.gen_range(2..=3);
        let u = random_orthogonal(&mut rng, d);
        let ms: Vec<_> = (0..8).map(|_| random_gaussian(&mut rng, d)).collect();
        let rot: Vec<_> = ms.iter().map(|m| m.rotated(&u).unwrap()).collect();
        let bar = gaussian_barycenter_measure(&ms, None, 1e-12, 1000).unwrap().result;
        let theta = KernelParams::new(1.3, 0.7, 1.6, 1e-4).unwrap();
        let k = gram_matrix(&embed_gaussians(&ms, &bar).unwrap(), &theta).unwrap();
        let k_rot = gram_matrix(&embed_gaussians(&rot, &bar.rotated(&u).unwrap()).unwrap(), &theta).unwrap();
        invariance = invariance.max((k - k_rot).abs().max());
    }
    if invariance > INVARIANCE_TOL {
        failures.push(format!("orthogonal invariance {invariance:.1e}"));
    }

    let mut marginal: f64 = 0.0;
    for _ in 0..20 {
        let mut grid = || {
            let mut w = vec![0.0; 36];
            for _ in 0..6 {
                w[rng.gen_range(0..36)] += rng.gen_range(0.1..1.0);
            }
            GridDensity::from_unnormalized(6, w).unwrap()
        };
        let (a, b) = (grid(), grid());
        let plan = sinkhorn_plan(&a, &b, 20.0, 10_000, 1e-10).unwrap();
        let (r, c) = plan.coupling().marginal_errors();
        marginal = marginal.max(r).max(c);
    }
    if marginal > MARGINAL_TOL {
        failures.push(format!("sinkhorn marginals {marginal:.1e}"));
    }

    let mut assignment = 0;
    for m in 1..=6 {
        for _ in 0..10 {
            let cost = normal_matrix(&mut rng, m, m).abs();
            let p = solve_assignment(&cost).unwrap();
            let got: f64 = p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
            let best = permutations(m)
                .iter()
                .map(|q| q.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assignment += usize::from((got - best).abs() > 1e-10);
        }
    }
    if assignment > 0 {
        failures.push(format!("{assignment} assignment mismatches"));
    }

    let (mut interp, mut prior, mut monotone): (f64, f64, f64) = (0.0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let n = rng.gen_range(3..=10);
        let ms: Vec<_> = (0..n + 2).map(|_| random_gaussian(&mut rng, 2)).collect();
        let y: Vec<f64> = ms.iter().map(|m| m.mean()[0] - m.mean()[1].powi(2)).collect();
        let bar = gaussian_barycenter_measure(&ms, None, 1e-10, 1000).unwrap().result;
        let f = embed_gaussians(&ms, &bar).unwrap();
        let exact = GpModel::new(f[..n].to_vec(), y[..n].to_vec(), KernelParams::from_array([1.0, 0.3, 1.5, 0.0])).unwrap();
        for i in 0..n {
            interp = interp.max((exact.predict(&f[i]).unwrap().mean - y[i]).abs() / y[i].abs().max(1.0));
        }
        let theta = KernelParams::new(1.0, 0.3, 1.5, 1e-3).unwrap();
        let small = GpModel::new(f[..n].to_vec(), y[..n].to_vec(), theta).unwrap();
        let large = GpModel::new(f[..=n].to_vec(), y[..=n].to_vec(), theta).unwrap();
        let probe = &f[n + 1];
        let (a, b) = (small.predict(probe).unwrap().variance, large.predict(probe).unwrap().variance);
        monotone = monotone.max(b - a);
        prior = prior.max(a - theta.total_variance());
    }
    if interp > 1e-6 || prior > 1e-10 || monotone > 1e-8 {
        failures.push(format!("gp interpolation {interp:.1e}, prior excess {prior:.1e}, variance increase {monotone:.1e}"));
    }

    let t = start.elapsed();
    if !within(t, 120) {
        failures.push(format!("took {t:.1?}"));
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("metric, invariance {invariance:.1e}, marginals {marginal:.1e}, assignment, gp; {t:.1?}")
    } else {
        failures.join(", ")
    };
    outcome(pass, detail)
}

fn disks_pipeline() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in DISK_SEEDS {
        let a = run("disks", seed);
        let b = run("disks", seed);
        let deterministic = a.to_json().unwrap() == b.to_json().unwrap();
        let (q2, gp, sm) = (a.summary["gp_mle_q2"], a.summary["gp_mle_rmse"], a.summary["smoothing_rmse"]);
        pass &= deterministic && q2 > 0.0 && gp < sm;
        parts.push(format!("seed {seed}: Q2 {q2:.3}, rmse {gp:.4} vs {sm:.4}, deterministic {deterministic}"));
    }
    outcome(pass, parts.join("; "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("PSD dichotomy", psd_dichotomy),
        ("consistency trend", consistency_trend),
        ("regression benchmark", regression_benchmark),
        ("closed-form oracles", closed_form_oracles),
        ("property suites", property_suites),
        ("disks pipeline", disks_pipeline),
    ];
    let mut all = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        all &= o.pass;
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
