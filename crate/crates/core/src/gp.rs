//! Zero-mean Gaussian-process regression on embedded distributions.
//!
//! Hyperparameters of `K_θ` are fitted either by maximum likelihood or by
//! leave-one-out cross validation, both with Nelder–Mead over the log box
//! from deterministic multi-starts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cross_distances, distance_matrix, gram_from_distances, EmbeddedFeature, KernelParams, ParamBounds};
use crate::optim::{cube_corners, halton_points, nelder_mead, NelderMeadOptions};

/// Jitter ladder, as multiples of `tr(R)/n`, tried after a plain Cholesky fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Normal quantile for a two-sided 90% interval.
pub const Z90: f64 = 1.645;

/// Number of Halton multi-starts.
pub const N_STARTS: usize = 8;

/// Cholesky factor of `R`, possibly after adding jitter to the diagonal.
#[derive(Debug, Clone)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Cholesky with the jitter ladder.
pub fn factorize(r: &DMatrix<f64>) -> Result<Factor> {
    if let Some(chol) = Cholesky::new(r.clone()) {
        return Ok(Factor { chol, jitter: 0.0 });
    }
    let n = r.nrows().max(1) as f64;
    let scale = r.trace() / n;
    for mult in JITTER_LADDER {
        let jitter = mult * scale;
        let mut m = r.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(Factor { chol, jitter });
        }
    }
    Err(Error::CholeskyFailure)
}

fn log_det(f: &Factor) -> f64 {
    2.0 * f.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Zero-mean Gaussian log-likelihood of `y` under covariance `R`.
pub fn log_likelihood(r: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let f = factorize(r)?;
    Ok(log_likelihood_from(&f, y))
}

fn log_likelihood_from(f: &Factor, y: &DVector<f64>) -> f64 {
    let alpha = f.chol.solve(y);
    let n = y.len() as f64;
    -0.5 * y.dot(&alpha) - 0.5 * log_det(f) - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Leave-one-out residuals `e_i = y_i − ŷ_{−i}` and predictive variances
/// `σ_i²` from a single factorization of `R`:
/// `e_i = (R⁻¹y)_i / (R⁻¹)_ii` and `σ_i² = 1 / (R⁻¹)_ii`.
pub fn loo_residuals(r: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let f = factorize(r)?;
    Ok(loo_from(&f, y))
}

fn loo_from(f: &Factor, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let inv = f.chol.inverse();
    let alpha = f.chol.solve(y);
    let d = inv.diagonal();
    let e = alpha.component_div(&d);
    let var = d.map(|v| 1.0 / v);
    (e, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FitMethod {
    MaximumLikelihood,
    CrossValidation,
}

/// Diagnostics of a hyperparameter fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: FitMethod,
    /// Value of the objective at the returned parameters (log-likelihood for
    /// MLE, sum of squared LOO residuals for CV).
    pub objective: f64,
    /// Start points in parameter space with their objective values.
    pub starts: Vec<([f64; 4], f64)>,
    /// Responses had zero variance; parameters were set without optimizing.
    pub degenerate: bool,
    /// CV variance rescaling was clamped by the box.
    pub clamped: bool,
    pub evals: usize,
}

/// A fitted GP: training features, responses, parameters and the factor of
/// `R = Gram(features, θ)`.
#[derive(Debug, Clone)]
pub struct GpModel {
    features: Vec<EmbeddedFeature>,
    y: DVector<f64>,
    theta: KernelParams,
    factor: Factor,
    alpha: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub mean: f64,
    pub variance: f64,
    pub ci90: (f64, f64),
}

fn check_training(features: &[EmbeddedFeature], y: &[f64]) -> Result<()> {
    if features.len() != y.len() {
        return Err(Error::SizeMismatch(features.len(), y.len()));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput("at least two training points are required".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("responses must be finite".into()));
    }
    Ok(())
}

impl GpModel {
    /// Conditions the GP with parameters `theta` on the training data.
    pub fn new(features: Vec<EmbeddedFeature>, y: Vec<f64>, theta: KernelParams) -> Result<Self> {
        if features.len() != y.len() {
            return Err(Error::SizeMismatch(features.len(), y.len()));
        }
        let d = distance_matrix(&features)?;
        Self::from_distances(features, y, theta, &d)
    }

    fn from_distances(features: Vec<EmbeddedFeature>, y: Vec<f64>, theta: KernelParams, d: &DMatrix<f64>) -> Result<Self> {
        let r = gram_from_distances(d, &theta);
        let factor = factorize(&r)?;
        let y = DVector::from_vec(y);
        let alpha = factor.chol.solve(&y);
        Ok(Self {
            features,
            y,
            theta,
            factor,
            alpha,
        })
    }

    pub fn features(&self) -> &[EmbeddedFeature] {
        &self.features
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn theta(&self) -> &KernelParams {
        &self.theta
    }

    /// Lower-triangular factor of `R` (plus jitter, if any was needed).
    pub fn chol(&self) -> DMatrix<f64> {
        self.factor.chol.l()
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// `R⁻¹ y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn log_likelihood(&self) -> f64 {
        log_likelihood_from(&self.factor, &self.y)
    }

    /// Leave-one-out residuals and variances.
    pub fn loo(&self) -> (DVector<f64>, DVector<f64>) {
        loo_from(&self.factor, &self.y)
    }

    /// Posterior mean `rᵀR⁻¹y` and variance `K(μ,μ) − rᵀR⁻¹r` at a feature.
    pub fn predict(&self, f: &EmbeddedFeature) -> Result<PredictionResult> {
        let d = cross_distances(f, &self.features)?;
        let r = DVector::from_iterator(d.len(), d.iter().map(|&v| self.theta.eval(v)));
        let mean = r.dot(&self.alpha);
        let v = self.factor.chol.l_dirty().solve_lower_triangular(&r).unwrap_or_else(|| DVector::zeros(r.len()));
        let variance = (self.theta.total_variance() - v.norm_squared()).max(0.0);
        let half = Z90 * variance.sqrt();
        Ok(PredictionResult {
            mean,
            variance,
            ci90: (mean - half, mean + half),
        })
    }

    pub fn predict_many(&self, features: &[EmbeddedFeature]) -> Result<Vec<PredictionResult>> {
        features.par_iter().map(|f| self.predict(f)).collect()
    }
}

fn to_unit(bounds: &ParamBounds, theta: [f64; 4]) -> Vec<f64> {
    (0..4)
        .map(|k| {
            let (lo, hi) = (bounds.lower[k].ln(), bounds.upper[k].ln());
            if hi > lo {
                (theta[k].ln() - lo) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect()
}

fn from_unit(lower: &[f64], upper: &[f64], u: &[f64]) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(k, &t)| {
            let (lo, hi) = (lower[k].ln(), upper[k].ln());
            (lo + t.clamp(0.0, 1.0) * (hi - lo)).exp()
        })
        .collect()
}

/// Parameters used when the responses are constant.
fn degenerate_theta(bounds: &ParamBounds) -> KernelParams {
    bounds.clamp([bounds.lower[0], bounds.lower[1], 2.0, bounds.lower[3]])
}

fn is_constant(y: &[f64]) -> bool {
    y.iter().all(|v| *v == y[0])
}

/// Runs Nelder–Mead from each start in parallel and returns the best result
/// (ties towards the earlier start) with the total evaluation count.
fn multistart<F>(objective: F, starts: &[Vec<f64>]) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let opts = NelderMeadOptions::default();
    let results: Vec<_> = starts.par_iter().map(|s| nelder_mead(&objective, s, &opts)).collect();
    let evals = results.iter().map(|m| m.evals).sum();
    let best = results
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .map(|(_, m)| m)
        .expect("at least one start");
    (best.x, best.value, evals)
}

/// Halton starts plus the best vertex of the cube under `objective`.
fn start_points<F: Fn(&[f64]) -> f64>(objective: &F, dim: usize) -> Vec<Vec<f64>> {
    let mut starts = halton_points(N_STARTS, dim);
    let corner = cube_corners(dim)
        .into_iter()
        .map(|c| (objective(&c), c))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
        .expect("cube has corners");
    starts.push(corner);
    starts
}

/// Maximum-likelihood fit of `θ` within `bounds`.
pub fn gp_fit_mle(features: Vec<EmbeddedFeature>, y: Vec<f64>, bounds: &ParamBounds) -> Result<(GpModel, FitReport)> {
    check_training(&features, &y)?;
    bounds.validate()?;
    let d = distance_matrix(&features)?;
    if is_constant(&y) {
        let theta = degenerate_theta(bounds);
        let model = GpModel::from_distances(features, y, theta, &d)?;
        let report = FitReport {
            method: FitMethod::MaximumLikelihood,
            objective: model.log_likelihood(),
            starts: Vec::new(),
            degenerate: true,
            clamped: false,
            evals: 0,
        };
        return Ok((model, report));
    }
    let yv = DVector::from_column_slice(&y);
    let neg_ll = |u: &[f64]| {
        let t = from_unit(&bounds.lower, &bounds.upper, u);
        let theta = KernelParams::from_array([t[0], t[1], t[2], t[3]]);
        match factorize(&gram_from_distances(&d, &theta)) {
            Ok(f) => -log_likelihood_from(&f, &yv),
            Err(_) => f64::INFINITY,
        }
    };
    let starts = start_points(&neg_ll, 4);
    let start_report = starts
        .iter()
        .map(|u| {
            let t = from_unit(&bounds.lower, &bounds.upper, u);
            ([t[0], t[1], t[2], t[3]], -neg_ll(u))
        })
        .collect();
    let (u, value, evals) = multistart(neg_ll, &starts);
    let t = from_unit(&bounds.lower, &bounds.upper, &u);
    let theta = bounds.clamp([t[0], t[1], t[2], t[3]]);
    let model = GpModel::from_distances(features, y, theta, &d)?;
    let report = FitReport {
        method: FitMethod::MaximumLikelihood,
        objective: -value,
        starts: start_report,
        degenerate: false,
        clamped: false,
        evals,
    };
    Ok((model, report))
}

/// Sum of squared LOO residuals for `K_θ` with unit amplitude and nugget
/// ratio `rho`; invariant to the overall scale.
fn cv_objective(d: &DMatrix<f64>, y: &DVector<f64>, theta2: f64, theta3: f64, rho: f64) -> Result<(f64, f64)> {
    let unit = KernelParams::from_array([1.0, theta2, theta3, rho]);
    let f = factorize(&gram_from_distances(d, &unit))?;
    let (e, var) = loo_from(&f, y);
    let sse = e.norm_squared();
    // σ_i² scales with the amplitude; pick it so mean(e_i²/σ_i²) = 1
    let scale = e.iter().zip(var.iter()).map(|(e, v)| e * e / v).sum::<f64>() / y.len() as f64;
    Ok((sse, scale))
}

/// Cross-validation fit: `(θ2, θ3, θ4/θ1²)` minimize the LOO squared error,
/// then the amplitude is set so that standardized LOO residuals have unit
/// mean square.
pub fn gp_fit_cv(features: Vec<EmbeddedFeature>, y: Vec<f64>, bounds: &ParamBounds) -> Result<(GpModel, FitReport)> {
    check_training(&features, &y)?;
    bounds.validate()?;
    let d = distance_matrix(&features)?;
    if is_constant(&y) {
        let theta = degenerate_theta(bounds);
        let model = GpModel::from_distances(features, y, theta, &d)?;
        let report = FitReport {
            method: FitMethod::CrossValidation,
            objective: 0.0,
            starts: Vec::new(),
            degenerate: true,
            clamped: false,
            evals: 0,
        };
        return Ok((model, report));
    }
    let yv = DVector::from_column_slice(&y);
    let (l1, u1) = (bounds.lower[0], bounds.upper[0]);
    let lower = [bounds.lower[1], bounds.lower[2], bounds.lower[3] / (u1 * u1)];
    let upper = [bounds.upper[1], bounds.upper[2], bounds.upper[3] / (l1 * l1)];
    let sse = |u: &[f64]| {
        let t = from_unit(&lower, &upper, u);
        cv_objective(&d, &yv, t[0], t[1], t[2]).map(|r| r.0).unwrap_or(f64::INFINITY)
    };
    let starts = start_points(&sse, 3);
    let to_theta = |u: &[f64]| -> Result<([f64; 4], f64)> {
        let t = from_unit(&lower, &upper, u);
        let (value, scale) = cv_objective(&d, &yv, t[0], t[1], t[2])?;
        Ok(([scale.sqrt(), t[0], t[1], t[2] * scale], value))
    };
    let start_report = starts.iter().filter_map(|u| to_theta(u).ok()).collect();
    let (u, _, evals) = multistart(sse, &starts);
    let (raw, value) = to_theta(&u)?;
    let theta = bounds.clamp(raw);
    let clamped = theta.to_array() != raw;
    let model = GpModel::from_distances(features, y, theta, &d)?;
    let report = FitReport {
        method: FitMethod::CrossValidation,
        objective: value,
        starts: start_report,
        degenerate: false,
        clamped,
        evals,
    };
    Ok((model, report))
}

/// Converts parameters to the unit-cube coordinates used by the optimizer.
pub fn unit_coordinates(bounds: &ParamBounds, theta: &KernelParams) -> Vec<f64> {
    to_unit(bounds, theta.to_array())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub q2: f64,
    /// Fraction of truths inside the 90% intervals.
    pub cic: f64,
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::SizeMismatch(predictions.len(), truths.len()));
    }
    if truths.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let mse = predictions.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truths.len() as f64;
    Ok(mse.sqrt())
}

/// `Q² = 1 − RMSE² / var(truths)` with the population variance.
pub fn q2(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    let e = rmse(predictions, truths)?;
    let n = truths.len() as f64;
    let mean = truths.iter().sum::<f64>() / n;
    let var = truths.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    // Identical truths can leave a round-off variance from the mean.
    if truths.iter().all(|t| *t == truths[0]) || !(var > 0.0) {
        return Err(Error::ZeroVarianceTruths);
    }
    Ok(1.0 - e * e / var)
}

/// Fraction of truths within `mean ± 1.645 σ`.
pub fn coverage(predictions: &[f64], truths: &[f64], variances: &[f64]) -> Result<f64> {
    if variances.len() != truths.len() || predictions.len() != truths.len() {
        return Err(Error::SizeMismatch(variances.len(), truths.len()));
    }
    let hits = (0..truths.len())
        .filter(|&i| (predictions[i] - truths[i]).abs() <= Z90 * variances[i].max(0.0).sqrt())
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

pub fn metrics(predictions: &[f64], truths: &[f64], variances: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        rmse: rmse(predictions, truths)?,
        q2: q2(predictions, truths)?,
        cic: coverage(predictions, truths, variances)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::embed_gaussians;
    use crate::measures::GaussianMeasure;
    use approx::assert_relative_eq;

    fn features_1d(sds: &[f64]) -> Vec<EmbeddedFeature> {
        let g = |s: f64| GaussianMeasure::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, s * s)).unwrap();
        let measures: Vec<_> = sds.iter().map(|&s| g(s)).collect();
        embed_gaussians(&measures, &g(1.0)).unwrap()
    }

    #[test]
    fn hand_two_by_two_mean() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = factorize(&r).unwrap();
        let alpha = f.chol.solve(&DVector::from_vec(vec![1.0, -1.0]));
        let mean = DVector::from_vec(vec![1.0, 0.0]).dot(&alpha);
        assert_relative_eq!(mean, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn metrics_hand_case() {
        let m = metrics(&[1.0, 1.0], &[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(m.rmse, 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.q2, 0.0, epsilon = 1e-15);
        assert_eq!(m.cic, 1.0);
    }

    #[test]
    fn metrics_perfect_and_mean_predictor() {
        let t = [0.3, -1.0, 2.5, 0.7];
        let m = metrics(&t, &t, &[0.1; 4]).unwrap();
        assert_eq!((m.rmse, m.q2, m.cic), (0.0, 1.0, 1.0));
        let mean = t.iter().sum::<f64>() / 4.0;
        assert!(q2(&[mean; 4], &t).unwrap().abs() < 1e-12);
        assert_eq!(q2(&[1.0, 1.0], &[2.0, 2.0]).unwrap_err(), Error::ZeroVarianceTruths);
    }

    #[test]
    fn interpolates_training_points() {
        let f = features_1d(&[0.5, 0.8, 1.3, 2.0]);
        let y = vec![1.0, -0.5, 0.25, 2.0];
        let theta = KernelParams::new(1.0, 1.0, 2.0, 0.01).unwrap();
        let model = GpModel::new(f.clone(), y.clone(), theta).unwrap();
        for (fi, yi) in f.iter().zip(&y) {
            let p = model.predict(fi).unwrap();
            assert!((p.mean - yi).abs() < 1e-8);
            assert!(p.variance < 1e-8);
        }
    }

    #[test]
    fn far_feature_reverts_to_prior() {
        let f = features_1d(&[0.5, 0.8, 1.3]);
        let theta = KernelParams::new(1.2, 10.0, 2.0, 0.05).unwrap();
        let model = GpModel::new(f, vec![1.0, 2.0, 3.0], theta).unwrap();
        let far = &features_1d(&[400.0])[0];
        let p = model.predict(far).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_relative_eq!(p.variance, theta.total_variance(), epsilon = 1e-15);
        assert!(p.ci90.0 <= p.mean && p.mean <= p.ci90.1);
    }

    #[test]
    fn duplicated_inputs_factorize() {
        let f = features_1d(&[0.5, 0.5, 1.0]);
        let theta = KernelParams::new(1.0, 1.0, 2.0, 1e-5).unwrap();
        let model = GpModel::new(f, vec![1.0, 1.2, 0.0], theta).unwrap();
        assert!(model.alpha().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mle_beats_its_starts_and_corners() {
        let sds: Vec<f64> = (0..12).map(|i| 0.3 + 0.15 * i as f64).collect();
        let y: Vec<f64> = sds.iter().map(|s| (2.0 * s).sin()).collect();
        let bounds = ParamBounds::default();
        let (model, report) = gp_fit_mle(features_1d(&sds), y, &bounds).unwrap();
        assert!(bounds.contains(model.theta()));
        for (_, ll) in &report.starts {
            assert!(report.objective >= *ll - 1e-12);
        }
        let d = distance_matrix(model.features()).unwrap();
        for c in cube_corners(4) {
            let t: Vec<f64> = (0..4).map(|k| if c[k] == 0.0 { bounds.lower[k] } else { bounds.upper[k] }).collect();
            let theta = KernelParams::from_array([t[0], t[1], t[2], t[3]]);
            if let Ok(ll) = log_likelihood(&gram_from_distances(&d, &theta), model.y()) {
                assert!(report.objective >= ll - 1e-9);
            }
        }
        assert_relative_eq!(report.objective, model.log_likelihood(), epsilon = 1e-9);
    }

    #[test]
    fn constant_responses_are_flagged() {
        let (model, report) = gp_fit_mle(features_1d(&[0.5, 1.0, 1.5]), vec![0.0; 3], &ParamBounds::default()).unwrap();
        assert!(report.degenerate);
        assert_eq!(model.theta().theta1, 0.05);
        assert_eq!(model.theta().theta3, 2.0);
    }

    #[test]
    fn cv_rescaling_gives_unit_standardized_residuals() {
        let sds: Vec<f64> = (0..10).map(|i| 0.4 + 0.2 * i as f64).collect();
        let y: Vec<f64> = sds.iter().enumerate().map(|(i, s)| 3.0 * s.ln() + [0.4, -0.3, 0.1, 0.5, -0.6][i % 5]).collect();
        let (model, report) = gp_fit_cv(features_1d(&sds), y, &ParamBounds::default()).unwrap();
        assert!(!report.clamped, "{:?}", model.theta());
        let (e, var) = model.loo();
        let mean = e.iter().zip(var.iter()).map(|(e, v)| e * e / v).sum::<f64>() / e.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9, "{mean}");
    }
}
