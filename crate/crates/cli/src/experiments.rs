//! Experiment drivers. Each run is a pure function of its config and seed.

use std::time::Instant;

use distgp_core::barycenter::{
    gaussian_barycenter, gaussian_barycenter_measure, grid_barycenter, GAUSSIAN_MAX_ITER, GAUSSIAN_TOL,
    GRID_MAX_ITER, GRID_TOL,
};
use distgp_core::baseline::{l1_density_distance, l1_distance_matrix, select_bandwidth_from_distances, smooth_from_distances};
use distgp_core::gp::{coverage, gp_fit_cv, gp_fit_mle, q2, rmse, FitReport, GpModel};
use distgp_core::kernel::{
    embed_gaussians, embed_grids, naive_w2_gram, psd_diagnostic, radial_gram, EmbeddedFeature, RadialFamily,
};
use distgp_core::measures::{
    disks_to_grid, sample_disk_configs, sample_gaussian_population, sample_regression_gaussians,
    sample_rotated_gaussians, GaussianMeasure, GridDensity,
};
use distgp_core::ot::{SINKHORN_MAX_ITER, SINKHORN_TOL};
use distgp_core::rng::substream;
use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::RngCore;

use crate::config::ExperimentConfig;
use crate::report::{cell, ExperimentReport, Table, NA};
use crate::CliError;

/// Independent random streams derived from the experiment seed.
mod stream {
    pub const POPULATION: u64 = 1;
    pub const TEST_MEASURES: u64 = 2;
    pub const SUBSAMPLE: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const BANDWIDTH: u64 = 6;
    pub const ONE_DIM: u64 = 7;
}

/// Seed for a generator that takes a plain `u64`.
fn derived_seed(seed: u64, stream: u64) -> u64 {
    substream(seed, stream).next_u64()
}

pub const EXPERIMENTS: [&str; 4] = ["consistency", "gaussian-regression", "psd", "disks"];

pub fn run_experiment(name: &str, config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    config.validate()?;
    let start = Instant::now();
    let mut report = match name {
        "consistency" => run_consistency(config)?,
        "gaussian-regression" => run_gaussian_regression(config)?,
        "psd" => run_psd_diagnostic(config)?,
        "disks" => run_disks(config)?,
        other => return Err(CliError::Config(format!("unknown experiment {other:?}"))),
    };
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn unit_square_exponential() -> RadialFamily {
    RadialFamily::SquareExponential {
        variance: 1.0,
        length: 1.0,
    }
}

/// Gram matrix of the unit square-exponential family over `measures`
/// embedded against `N(0, S̄)`.
fn centered_gram(measures: &[GaussianMeasure], sbar: &DMatrix<f64>) -> Result<DMatrix<f64>, CliError> {
    let reference = GaussianMeasure::centered(sbar.clone())?;
    let features = embed_gaussians(measures, &reference)?;
    Ok(radial_gram(&features, &unit_square_exponential())?)
}

/// Error of the empirical-barycenter kernel against the population one.
///
/// A population of centered Gaussians is drawn; `M` is the Gram matrix of
/// `n_measures` population members embedded against the population
/// barycenter and `M_n` the same matrix against the barycenter of an
/// `n`-subsample drawn without replacement. `‖M_n − M‖_F` is averaged over
/// replicates for every `n`.
pub fn run_consistency(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let c = &config.consistency;
    let population = sample_gaussian_population(c.population, c.dim, derived_seed(config.seed, stream::POPULATION))?;
    let covs: Vec<DMatrix<f64>> = population.iter().map(|g| g.cov().clone()).collect();
    let truth = gaussian_barycenter(&covs, None, GAUSSIAN_TOL, GAUSSIAN_MAX_ITER)?;

    let mut pick = substream(config.seed, stream::TEST_MEASURES);
    let mut test_idx = index::sample(&mut pick, c.population, c.n_measures).into_vec();
    test_idx.sort_unstable();
    let tests: Vec<GaussianMeasure> = test_idx.iter().map(|&i| population[i].clone()).collect();
    let m = centered_gram(&tests, &truth.result)?;

    let mut report = ExperimentReport::new("consistency", config);
    let mut table = Table::new("consistency", &["n", "error", "error_sd", "barycenter_iterations"]);
    let mut errors = Vec::new();
    let mut rng = substream(config.seed, stream::SUBSAMPLE);
    for &n in &c.sizes {
        let mut errs = Vec::with_capacity(c.replicates);
        let mut iters = 0usize;
        for _ in 0..c.replicates {
            let idx = index::sample(&mut rng, c.population, n);
            let sub: Vec<DMatrix<f64>> = idx.iter().map(|i| covs[i].clone()).collect();
            let bar = gaussian_barycenter(&sub, None, GAUSSIAN_TOL, GAUSSIAN_MAX_ITER)?;
            iters += bar.iterations;
            let mn = centered_gram(&tests, &bar.result)?;
            errs.push((&mn - &m).norm());
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errs.len() as f64).sqrt();
        table.push(vec![n.to_string(), cell(mean), cell(sd), iters.to_string()]);
        errors.push(mean);
    }
    let sizes: Vec<f64> = c.sizes.iter().map(|&n| n as f64).collect();
    let positive = errors.iter().all(|e| *e > 0.0);
    if positive && sizes.len() >= 2 {
        report.summary.insert("slope".into(), log_log_slope(&sizes, &errors));
    }
    let first = errors[0];
    let last = *errors.last().unwrap_or(&first);
    if last > 0.0 {
        report.summary.insert("decrease_ratio".into(), first / last);
    }
    report.summary.insert("true_barycenter_iterations".into(), truth.iterations as f64);
    report.summary.insert("gram_max_entry".into(), m.amax());
    report.series.insert("consistency_errors".into(), errors);
    report.tables.push(table);
    Ok(report)
}

fn split(n: usize, n_train: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, stream::SPLIT));
    let (a, b) = idx.split_at(n_train);
    (a.to_vec(), b.to_vec())
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Metrics of one method on the test set; `None` entries render as `NA`.
struct MethodScore {
    rmse: f64,
    q2: Option<f64>,
    cic: Option<f64>,
}

fn score(predictions: &[f64], truths: &[f64], variances: Option<&[f64]>) -> Result<MethodScore, CliError> {
    Ok(MethodScore {
        rmse: rmse(predictions, truths)?,
        q2: q2(predictions, truths).ok(),
        cic: match variances {
            Some(v) => Some(coverage(predictions, truths, v)?),
            None => None,
        },
    })
}

fn push_score(table: &mut Table, report: &mut ExperimentReport, key: &str, name: &str, s: &MethodScore) {
    let opt = |v: Option<f64>| v.map_or(NA.to_string(), cell);
    table.push(vec![name.to_string(), cell(s.rmse), opt(s.q2), opt(s.cic)]);
    report.summary.insert(format!("{key}_rmse"), s.rmse);
    if let Some(q) = s.q2 {
        report.summary.insert(format!("{key}_q2"), q);
    }
    if let Some(c) = s.cic {
        report.summary.insert(format!("{key}_cic"), c);
    }
}

fn gp_scores(
    fit: (GpModel, FitReport),
    test: &[EmbeddedFeature],
    truths: &[f64],
    report: &mut ExperimentReport,
    key: &str,
) -> Result<MethodScore, CliError> {
    let (model, fit_report) = fit;
    let preds = model.predict_many(test)?;
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let vars: Vec<f64> = preds.iter().map(|p| p.variance).collect();
    for (k, v) in model.theta().to_array().iter().enumerate() {
        report.summary.insert(format!("{key}_theta{}", k + 1), *v);
    }
    if fit_report.degenerate {
        report.flags.push(format!("{key}: constant responses, parameters not optimized"));
    }
    if fit_report.clamped {
        report.flags.push(format!("{key}: variance rescaling clamped to the parameter box"));
    }
    if model.jitter() > 0.0 {
        report.flags.push(format!("{key}: jitter {} added to the Gram diagonal", model.jitter()));
    }
    report.series.insert(format!("{key}_predictions"), means.clone());
    score(&means, truths, Some(&vars))
}

/// Kernel smoothing on grids: bandwidth chosen on the training set, then
/// predictions for the test set.
fn smoothing_predictions(
    train: &[GridDensity],
    y: &[f64],
    test: &[GridDensity],
    seed: u64,
    report: &mut ExperimentReport,
) -> Result<Vec<f64>, CliError> {
    let d = l1_distance_matrix(train)?;
    let h = select_bandwidth_from_distances(&d, y, None, derived_seed(seed, stream::BANDWIDTH))?;
    report.summary.insert("smoothing_bandwidth".into(), h);
    let mut fallbacks = 0usize;
    let preds = test
        .iter()
        .map(|q| {
            let dq: Vec<f64> = train.iter().map(|t| l1_density_distance(q, t)).collect::<Result<_, _>>()?;
            let p = smooth_from_distances(&dq, y, h);
            if p.no_neighbors {
                fallbacks += 1;
            }
            Ok(p.value)
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    report.summary.insert("smoothing_no_neighbor_count".into(), fallbacks as f64);
    Ok(preds)
}

/// Random 2-D Gaussians with a closed-form response, split into train and
/// test; kernel smoothing and GP fitted by likelihood and by cross
/// validation.
pub fn run_gaussian_regression(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let c = &config.regression;
    let data = sample_regression_gaussians(c.n_inputs, derived_seed(config.seed, stream::DATA))?;
    let measures: Vec<GaussianMeasure> = data.iter().map(|d| d.0.clone()).collect();
    let y: Vec<f64> = match c.constant_response {
        Some(v) => vec![v; data.len()],
        None => data.iter().map(|d| d.1).collect(),
    };
    let (tr, te) = split(c.n_inputs, c.n_train, config.seed);
    let (y_tr, y_te) = (pick(&y, &tr), pick(&y, &te));

    let mut report = ExperimentReport::new("gaussian-regression", config);
    let grids: Vec<GridDensity> = measures
        .iter()
        .map(|m| m.rasterize(c.grid_size))
        .collect::<Result<_, _>>()?;
    let (g_tr, g_te) = (pick(&grids, &tr), pick(&grids, &te));

    let (f_tr, f_te) = if c.grid_path {
        let bar = grid_barycenter(&g_tr, None, c.lambda, GRID_TOL, GRID_MAX_ITER)?;
        report.summary.insert("barycenter_iterations".into(), bar.iterations as f64);
        let f = embed_grids(&grids, &bar.result, c.lambda, SINKHORN_MAX_ITER, SINKHORN_TOL)?;
        (pick(&f, &tr), pick(&f, &te))
    } else {
        let m_tr = pick(&measures, &tr);
        let bar = gaussian_barycenter_measure(&m_tr, None, GAUSSIAN_TOL, GAUSSIAN_MAX_ITER)?;
        report.summary.insert("barycenter_iterations".into(), bar.iterations as f64);
        let f = embed_gaussians(&measures, &bar.result)?;
        (pick(&f, &tr), pick(&f, &te))
    };

    let mut table = Table::new("regression", &["method", "rmse", "q2", "cic"]);
    let smooth = smoothing_predictions(&g_tr, &y_tr, &g_te, config.seed, &mut report)?;
    let s = score(&smooth, &y_te, None)?;
    push_score(&mut table, &mut report, "smoothing", "Kernel Smoothing", &s);
    let mle = gp_scores(gp_fit_mle(f_tr.clone(), y_tr.clone(), &config.bounds)?, &f_te, &y_te, &mut report, "gp_mle")?;
    push_score(&mut table, &mut report, "gp_mle", "Gaussian Process (MLE)", &mle);
    let cv = gp_scores(gp_fit_cv(f_tr, y_tr, &config.bounds)?, &f_te, &y_te, &mut report, "gp_cv")?;
    push_score(&mut table, &mut report, "gp_cv", "Gaussian Process CV", &cv);
    report.series.insert("truths".into(), y_te);
    report.tables.push(table);
    Ok(report)
}

/// Spectra of the `exp(−W2²)` Gram matrix and of the embedding-kernel Gram
/// matrix over the same random Gaussians, plus the one-dimensional naive
/// kernel as a control.
pub fn run_psd_diagnostic(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let c = &config.psd;
    let measures = sample_rotated_gaussians(c.n_points, c.dim, derived_seed(config.seed, stream::DATA))?;
    let naive = psd_diagnostic(&naive_w2_gram(&measures)?, c.naive_tol)?;

    let bar = gaussian_barycenter_measure(&measures, None, GAUSSIAN_TOL, GAUSSIAN_MAX_ITER)?;
    let features = embed_gaussians(&measures, &bar.result)?;
    let embedded = psd_diagnostic(&radial_gram(&features, &unit_square_exponential())?, c.embedding_tol)?;

    let one_dim = sample_rotated_gaussians(c.n_points, 1, derived_seed(config.seed, stream::ONE_DIM))?;
    let naive_1d = psd_diagnostic(&naive_w2_gram(&one_dim)?, c.embedding_tol)?;

    let mut report = ExperimentReport::new("psd", config);
    let mut table = Table::new("spectra", &["kernel", "lambda_max", "min_eigenvalue", "min_ratio", "tol", "negatives"]);
    for (name, s) in [("naive_w2", &naive), ("embedding", &embedded), ("naive_w2_1d", &naive_1d)] {
        table.push(vec![
            name.to_string(),
            cell(s.lambda_max),
            cell(s.eigenvalues[0]),
            cell(s.min_ratio),
            cell(s.tol),
            s.negative_count.to_string(),
        ]);
        report.summary.insert(format!("{name}_negatives"), s.negative_count as f64);
        report.summary.insert(format!("{name}_min_ratio"), s.min_ratio);
        report.series.insert(format!("{name}_eigenvalues"), s.eigenvalues.clone());
    }
    report.tables.push(table);
    Ok(report)
}

/// Centroid x minus squared centroid y of a density.
pub fn disk_response(g: &GridDensity) -> f64 {
    let [x, y] = g.centroid();
    x - y * y
}

/// Unions of disks rasterized to a grid, embedded against their entropic
/// barycenter; GP and kernel smoothing on a synthetic centroid response.
pub fn run_disks(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let c = &config.disks;
    let n = c.n_train + c.n_test;
    let mut configs = sample_disk_configs(n, c.disks, c.radius, derived_seed(config.seed, stream::DATA))?;
    if c.duplicate_first {
        configs[c.n_train] = configs[0].clone();
    }
    let grids: Vec<GridDensity> = configs
        .iter()
        .map(|d| disks_to_grid(d, c.grid_size))
        .collect::<Result<_, _>>()?;
    let y: Vec<f64> = grids.iter().map(disk_response).collect();
    let (g_tr, g_te) = (grids[..c.n_train].to_vec(), grids[c.n_train..].to_vec());
    let (y_tr, y_te) = (y[..c.n_train].to_vec(), y[c.n_train..].to_vec());

    let mut report = ExperimentReport::new("disks", config);
    let bar = grid_barycenter(&g_tr, None, c.lambda, GRID_TOL, GRID_MAX_ITER)?;
    report.summary.insert("barycenter_iterations".into(), bar.iterations as f64);
    report.summary.insert("barycenter_residual".into(), bar.residual);
    let features = embed_grids(&grids, &bar.result, c.lambda, SINKHORN_MAX_ITER, SINKHORN_TOL)?;
    let (f_tr, f_te) = (features[..c.n_train].to_vec(), features[c.n_train..].to_vec());

    let mut table = Table::new("disks", &["method", "rmse", "q2", "cic"]);
    let smooth = smoothing_predictions(&g_tr, &y_tr, &g_te, config.seed, &mut report)?;
    let s = score(&smooth, &y_te, None)?;
    push_score(&mut table, &mut report, "smoothing", "Kernel Smoothing", &s);
    let mle = gp_scores(gp_fit_mle(f_tr, y_tr, &config.bounds)?, &f_te, &y_te, &mut report, "gp_mle")?;
    push_score(&mut table, &mut report, "gp_mle", "Gaussian Process (MLE)", &mle);
    report.series.insert("truths".into(), y_te);
    report.tables.push(table);
    Ok(report)
}
