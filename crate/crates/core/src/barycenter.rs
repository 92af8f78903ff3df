//! Wasserstein barycenters: fixed-point iteration for Gaussian covariances and
//! an entropic fixed-support barycenter for grid densities.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, sqrtm_spd, symmetrize, validate_spd};
use crate::measures::{GaussianMeasure, GridDensity};
use crate::ot::entropic::COST_SCALE;

pub const GAUSSIAN_TOL: f64 = 1e-9;
pub const GAUSSIAN_MAX_ITER: usize = 1000;
pub const GRID_TOL: f64 = 1e-6;
pub const GRID_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterReport<T> {
    pub result: T,
    pub iterations: usize,
    pub residual: f64,
}

fn resolve_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("barycenter of an empty family".into()));
    }
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::SizeMismatch(w.len(), n));
            }
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput("barycenter weights must be nonnegative".into()));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("barycenter weights sum to {total}")));
            }
            Ok(w.to_vec())
        }
    }
}

fn lexicographic(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Barycenter covariance of centered Gaussians `N(0, S_i)` with weights `w_i`.
///
/// Iterates `S ← S^{-½} (Σ w_i (S^½ S_i S^½)^½)² S^{-½}` from the Euclidean
/// mean of the inputs until the fixed-point residual
/// `‖S − Σ w_i (S^½ S_i S^½)^½‖_F / ‖S‖_F` is at most `tol`. Inputs are
/// processed in a canonical order so the result does not depend on how the
/// family is listed.
pub fn gaussian_barycenter(
    covs: &[DMatrix<f64>],
    weights: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<BarycenterReport<DMatrix<f64>>> {
    let weights = resolve_weights(covs.len(), weights)?;
    let d = covs[0].nrows();
    let mut inputs = Vec::with_capacity(covs.len());
    for (s, w) in covs.iter().zip(&weights) {
        if s.nrows() != d {
            return Err(Error::DimensionMismatch(s.nrows(), d));
        }
        inputs.push((*w, validate_spd(s)?));
    }
    inputs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lexicographic(&a.1, &b.1)));

    let mut s = inputs
        .iter()
        .fold(DMatrix::zeros(d, d), |acc, (w, c)| acc + c * *w);
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let roots = sqrtm_spd(&s)?;
        let terms: Vec<DMatrix<f64>> = inputs
            .par_iter()
            .map(|(w, c)| psd_sqrt(&(&roots.sqrt * c * &roots.sqrt)) * *w)
            .collect();
        let mean_root = terms.into_iter().fold(DMatrix::zeros(d, d), |acc, t| acc + t);
        residual = (&s - &mean_root).norm() / s.norm();
        if residual <= tol {
            return Ok(BarycenterReport {
                result: s,
                iterations: iteration,
                residual,
            });
        }
        s = symmetrize(&(&roots.inv_sqrt * &mean_root * &mean_root * &roots.inv_sqrt));
    }
    Err(Error::NoConvergence {
        what: "gaussian barycenter",
        iterations: max_iter,
        residual,
    })
}

/// Barycenter of general Gaussians: weighted mean of the means and the
/// covariance barycenter.
pub fn gaussian_barycenter_measure(
    measures: &[GaussianMeasure],
    weights: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<BarycenterReport<GaussianMeasure>> {
    let w = resolve_weights(measures.len(), weights)?;
    let d = measures[0].dim();
    let mut mean = DVector::zeros(d);
    for (m, wi) in measures.iter().zip(&w) {
        if m.dim() != d {
            return Err(Error::DimensionMismatch(m.dim(), d));
        }
        mean += m.mean() * *wi;
    }
    let covs: Vec<DMatrix<f64>> = measures.iter().map(|m| m.cov().clone()).collect();
    let report = gaussian_barycenter(&covs, Some(&w), tol, max_iter)?;
    Ok(BarycenterReport {
        result: GaussianMeasure::new(mean, report.result)?,
        iterations: report.iterations,
        residual: report.residual,
    })
}

/// Separable Gibbs kernel on a regular grid: applying it to a `G`×`G` field is
/// `K₁ V K₁` with the one-dimensional factor `K₁`.
struct GridKernel {
    factor: DMatrix<f64>,
}

impl GridKernel {
    fn new(g: usize, lambda: f64) -> Self {
        let factor = DMatrix::from_fn(g, g, |p, q| {
            let dx = (p as f64 - q as f64) / g as f64;
            (-lambda * dx * dx / COST_SCALE).exp()
        });
        Self { factor }
    }

    fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.factor * v * &self.factor
    }
}

fn as_field(d: &GridDensity) -> DMatrix<f64> {
    let g = d.grid_size();
    DMatrix::from_row_slice(g, g, d.weights())
}

fn total_variation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Fixed-support entropic barycenter of densities on a common grid.
///
/// Iterative Bregman projections with the separable Gibbs kernel
/// `exp(-lambda * cost)`. Stops when successive iterates differ by less than
/// `tol` in total variation. A family made of a single distinct density
/// returns that density unchanged.
pub fn grid_barycenter(
    densities: &[GridDensity],
    weights: Option<&[f64]>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BarycenterReport<GridDensity>> {
    let weights = resolve_weights(densities.len(), weights)?;
    let g = densities[0].grid_size();
    if let Some(bad) = densities.iter().find(|d| d.grid_size() != g) {
        return Err(Error::GridMismatch(g, bad.grid_size()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if densities.iter().all(|d| d == &densities[0]) {
        return Ok(BarycenterReport {
            result: densities[0].clone(),
            iterations: 0,
            residual: 0.0,
        });
    }

    let kernel = GridKernel::new(g, lambda);
    let fields: Vec<DMatrix<f64>> = densities.iter().map(as_field).collect();
    let mut v: Vec<DMatrix<f64>> = vec![DMatrix::from_element(g, g, 1.0); fields.len()];
    let mut bary = DMatrix::from_element(g, g, 1.0 / (g * g) as f64);
    let mut residual = f64::INFINITY;

    for iteration in 1..=max_iter {
        let ku: Vec<DMatrix<f64>> = fields
            .par_iter()
            .zip(v.par_iter())
            .map(|(a, vk)| {
                let u = a.component_div(&kernel.apply(vk));
                kernel.apply(&u)
            })
            .collect();
        let mut log_b = DMatrix::zeros(g, g);
        for (w, k) in weights.iter().zip(&ku) {
            log_b += k.map(f64::ln) * *w;
        }
        let b = log_b.map(f64::exp);
        for (vk, k) in v.iter_mut().zip(&ku) {
            *vk = b.component_div(k);
        }
        if b.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::NumericalUnderflow);
        }
        let next = &b / b.sum();
        residual = total_variation(&next, &bary);
        bary = next;
        if residual < tol {
            let weights: Vec<f64> = bary.transpose().iter().copied().collect();
            return Ok(BarycenterReport {
                result: GridDensity::from_unnormalized(g, weights)?,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "grid barycenter",
        iterations: max_iter,
        residual,
    })
}
