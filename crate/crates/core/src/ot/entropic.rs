//! Entropy-regularized transport between grid densities and the rounding of
//! the resulting couplings to deterministic maps.
//!
//! Costs are squared Euclidean distances between cell centers divided by the
//! squared diameter of the unit square (2), so the regularization strength
//! `lambda` does not depend on the grid resolution. The Gibbs kernel is
//! `exp(-lambda * cost)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measures::{cell_center, GridDensity};
use crate::ot::assignment::TransportAssignment;

/// Squared diameter of the unit square.
pub const COST_SCALE: f64 = 2.0;

/// Scaling entries below this trigger the log-domain fallback.
pub const UNDERFLOW_GUARD: f64 = 1e-300;

/// Regularization strength used by the experiments.
pub const DEFAULT_LAMBDA: f64 = 20.0;

/// Default stopping rule for Sinkhorn iterations on grids.
pub const SINKHORN_TOL: f64 = 1e-9;
pub const SINKHORN_MAX_ITER: usize = 10_000;

/// A coupling between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    pub plan: DMatrix<f64>,
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
}

impl CouplingPlan {
    /// L1 deviations of the row and column sums from the prescribed marginals.
    pub fn marginal_errors(&self) -> (f64, f64) {
        let rows: f64 = self
            .plan
            .row_iter()
            .zip(&self.source_weights)
            .map(|(r, w)| (r.sum() - w).abs())
            .sum();
        let cols: f64 = self
            .plan
            .column_iter()
            .zip(&self.target_weights)
            .map(|(c, w)| (c.sum() - w).abs())
            .sum();
        (rows, cols)
    }

    /// Row-wise argmax, ties resolved towards the lowest column index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        self.plan
            .row_iter()
            .enumerate()
            .map(|(i, row)| {
                if !(row.sum() > 0.0) {
                    return Err(Error::EmptyRow(i));
                }
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                Ok(best)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutcome {
    pub coupling: CouplingPlan,
    pub iterations: usize,
    pub marginal_error: f64,
    pub log_domain: bool,
}

fn check_marginal(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::EmptySupport);
    }
    if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("marginal weights must be positive".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("marginal sums to {total}, expected 1")));
    }
    Ok(())
}

/// Sinkhorn scaling iterations for an explicit cost matrix.
///
/// Stops once the L1 row-marginal error (columns are exact after each
/// sweep) drops to `tol`. Falls back to log-domain updates when a scaling
/// entry collapses below [`UNDERFLOW_GUARD`].
pub fn sinkhorn_with_cost(
    a: &[f64],
    b: &[f64],
    cost: &DMatrix<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornOutcome> {
    check_marginal(a)?;
    check_marginal(b)?;
    if cost.nrows() != a.len() || cost.ncols() != b.len() {
        return Err(Error::SizeMismatch(cost.nrows() * cost.ncols(), a.len() * b.len()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let av = DVector::from_column_slice(a);
    let bv = DVector::from_column_slice(b);
    let kernel = cost.map(|c| (-lambda * c).exp());
    let kernel_t = kernel.transpose();
    let mut v = DVector::from_element(b.len(), 1.0);
    let mut u = DVector::from_element(a.len(), 1.0);
    let mut collapsed = false;
    let mut error = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let kv = &kernel * &v;
        u = av.component_div(&kv);
        let ktu = &kernel_t * &u;
        v = bv.component_div(&ktu);
        if u.iter().chain(v.iter()).any(|x| !x.is_finite() || *x < UNDERFLOW_GUARD) {
            collapsed = true;
            break;
        }
        let kv = &kernel * &v;
        error = u.component_mul(&kv).iter().zip(a).map(|(r, w)| (r - w).abs()).sum();
        if error <= tol {
            break;
        }
    }
    if collapsed {
        return sinkhorn_log_domain(a, b, cost, lambda, max_iter, tol);
    }
    if error > tol {
        return Err(Error::NoConvergence {
            what: "sinkhorn",
            iterations,
            residual: error,
        });
    }
    let mut plan = kernel;
    for i in 0..a.len() {
        for j in 0..b.len() {
            plan[(i, j)] *= u[i] * v[j];
        }
    }
    Ok(SinkhornOutcome {
        coupling: CouplingPlan {
            plan,
            source_weights: a.to_vec(),
            target_weights: b.to_vec(),
        },
        iterations,
        marginal_error: error,
        log_domain: false,
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn sinkhorn_log_domain(
    a: &[f64],
    b: &[f64],
    cost: &DMatrix<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornOutcome> {
    let (m, k) = (a.len(), b.len());
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; k];
    let mut error = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..m {
            f[i] = log_a[i] - log_sum_exp((0..k).map(|j| g[j] - lambda * cost[(i, j)]));
        }
        for j in 0..k {
            g[j] = log_b[j] - log_sum_exp((0..m).map(|i| f[i] - lambda * cost[(i, j)]));
        }
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::NumericalUnderflow);
        }
        error = (0..m)
            .map(|i| {
                let row = log_sum_exp((0..k).map(|j| f[i] + g[j] - lambda * cost[(i, j)])).exp();
                (row - a[i]).abs()
            })
            .sum();
        if error <= tol {
            break;
        }
    }
    if error > tol {
        return Err(Error::NoConvergence {
            what: "sinkhorn (log domain)",
            iterations,
            residual: error,
        });
    }
    let plan = DMatrix::from_fn(m, k, |i, j| (f[i] + g[j] - lambda * cost[(i, j)]).exp());
    Ok(SinkhornOutcome {
        coupling: CouplingPlan {
            plan,
            source_weights: a.to_vec(),
            target_weights: b.to_vec(),
        },
        iterations,
        marginal_error: error,
        log_domain: true,
    })
}

/// Normalized squared distance between two cell centers.
pub fn cell_cost(grid_size: usize, from: usize, to: usize) -> f64 {
    let p = cell_center(grid_size, from);
    let q = cell_center(grid_size, to);
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)) / COST_SCALE
}

/// Entropic coupling between the supports of two grid densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCoupling {
    pub grid_size: usize,
    pub source_cells: Vec<usize>,
    pub target_cells: Vec<usize>,
    pub outcome: SinkhornOutcome,
}

impl GridCoupling {
    pub fn coupling(&self) -> &CouplingPlan {
        &self.outcome.coupling
    }
}

/// Entropic transport plan between two densities on the same grid, restricted
/// to their positive-weight cells.
pub fn sinkhorn_plan(a: &GridDensity, b: &GridDensity, lambda: f64, max_iter: usize, tol: f64) -> Result<GridCoupling> {
    if a.grid_size() != b.grid_size() {
        return Err(Error::GridMismatch(a.grid_size(), b.grid_size()));
    }
    let g = a.grid_size();
    let source_cells = a.support();
    let target_cells = b.support();
    let wa = renormalized(&source_cells, a.weights());
    let wb = renormalized(&target_cells, b.weights());
    let cost = DMatrix::from_fn(source_cells.len(), target_cells.len(), |i, j| {
        cell_cost(g, source_cells[i], target_cells[j])
    });
    let outcome = sinkhorn_with_cost(&wa, &wb, &cost, lambda, max_iter, tol)?;
    Ok(GridCoupling {
        grid_size: g,
        source_cells,
        target_cells,
        outcome,
    })
}

fn renormalized(cells: &[usize], weights: &[f64]) -> Vec<f64> {
    let total: f64 = cells.iter().map(|&c| weights[c]).sum();
    cells.iter().map(|&c| weights[c] / total).collect()
}

/// Sends each source cell's whole mass to the target cell receiving the most
/// of it under the coupling.
pub fn round_plan_to_map(coupling: &GridCoupling) -> Result<TransportAssignment> {
    let targets = coupling.coupling().argmax_rows()?;
    let g = coupling.grid_size;
    let to_points = |cells: &[usize]| cells.iter().map(|&c| cell_center(g, c).to_vec()).collect();
    TransportAssignment::new(
        targets,
        coupling.coupling().source_weights.clone(),
        to_points(&coupling.source_cells),
        to_points(&coupling.target_cells),
    )
}

/// Deterministic map from the reference density `bar` onto `mu`: an entropic
/// plan from `bar` to `mu`, rounded row by row.
pub fn inverse_grid_map(
    mu: &GridDensity,
    bar: &GridDensity,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportAssignment> {
    round_plan_to_map(&sinkhorn_plan(bar, mu, lambda, max_iter, tol)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_plan() {
        let a = GridDensity::dirac(4, 5).unwrap();
        let c = sinkhorn_plan(&a, &a, 20.0, 100, 1e-12).unwrap();
        assert_eq!(c.coupling().plan.shape(), (1, 1));
        assert!((c.coupling().plan[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_cell_symmetric_fixed_point() {
        // uniform marginals, cost c off the diagonal: by symmetry u = v and the
        // plan is proportional to the kernel, so diag = ½ / (1 + e^{-λc})
        let c = 0.3;
        let lambda = 4.0;
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, c, c, 0.0]);
        let out = sinkhorn_with_cost(&[0.5, 0.5], &[0.5, 0.5], &cost, lambda, 100, 1e-14).unwrap();
        let want = 0.5 / (1.0 + (-lambda * c).exp());
        assert!((out.coupling.plan[(0, 0)] - want).abs() < 1e-14);
        assert!((out.coupling.plan[(1, 1)] - want).abs() < 1e-14);
    }

    #[test]
    fn rounding_rules() {
        let plan = CouplingPlan {
            plan: DMatrix::from_row_slice(3, 3, &[0.1, 0.7, 0.2, 0.5, 0.5, 0.0, 0.0, 0.0, 0.3]),
            source_weights: vec![1.0, 1.0, 0.3],
            target_weights: vec![0.6, 1.2, 0.5],
        };
        assert_eq!(plan.argmax_rows().unwrap(), vec![1, 0, 2]);
        let empty = CouplingPlan {
            plan: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            source_weights: vec![1.0, 0.0],
            target_weights: vec![1.0, 0.0],
        };
        assert_eq!(empty.argmax_rows(), Err(Error::EmptyRow(1)));
    }

    #[test]
    fn diagonal_plan_rounds_to_identity() {
        let plan = CouplingPlan {
            plan: DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.3, 0.5])),
            source_weights: vec![0.2, 0.3, 0.5],
            target_weights: vec![0.2, 0.3, 0.5],
        };
        assert_eq!(plan.argmax_rows().unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn inverse_map_to_itself_is_identity() {
        let w = vec![0.1, 0.0, 0.2, 0.05, 0.15, 0.0, 0.3, 0.1, 0.1];
        let d = GridDensity::new(3, w).unwrap();
        // a sharp regularization keeps the diagonal dominant
        let map = inverse_grid_map(&d, &d, 2000.0, 5000, 1e-10).unwrap();
        assert_eq!(map.target_index, (0..map.len()).collect::<Vec<_>>());
    }

    #[test]
    fn inverse_map_to_dirac_is_constant() {
        let bar = GridDensity::uniform(4).unwrap();
        let mu = GridDensity::dirac(4, 6).unwrap();
        let map = inverse_grid_map(&mu, &bar, 20.0, 100, 1e-10).unwrap();
        assert_eq!(map.len(), 16);
        assert!(map.target_index.iter().all(|&t| t == 0));
        assert_eq!(map.target_locations, vec![cell_center(4, 6).to_vec()]);
    }

    #[test]
    fn grid_mismatch() {
        let a = GridDensity::uniform(3).unwrap();
        let b = GridDensity::uniform(4).unwrap();
        assert_eq!(sinkhorn_plan(&a, &b, 20.0, 10, 1e-8).unwrap_err(), Error::GridMismatch(3, 4));
    }

    #[test]
    fn no_convergence_is_reported() {
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.4, 0.0]);
        let err = sinkhorn_with_cost(&[0.3, 0.7], &[0.6, 0.4], &cost, 50.0, 1, 1e-14).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 1, .. }));
    }

    #[test]
    fn log_domain_fallback_matches_marginals() {
        // strong regularization on a far-apart pair underflows the plain kernel
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = sinkhorn_with_cost(&[0.9, 0.1], &[0.2, 0.8], &cost, 1000.0, 10_000, 1e-10).unwrap();
        assert!(out.log_domain);
        let (r, c) = out.coupling.marginal_errors();
        assert!(r <= 1e-10 && c <= 1e-10, "{r} {c}");
    }
}
