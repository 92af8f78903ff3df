//! Exact optimal transport between equal-size empirical samples, solved as a
//! linear assignment problem with squared Euclidean cost.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::EmpiricalSample;

/// Deterministic transport map between two finite supports: source point `i`
/// (carrying `source_weights[i]`) is sent to target point `target_index[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportAssignment {
    #[serde(rename = "targets")]
    pub target_index: Vec<usize>,
    #[serde(rename = "weights")]
    pub source_weights: Vec<f64>,
    #[serde(rename = "source_points")]
    pub source_locations: Vec<Vec<f64>>,
    #[serde(rename = "target_points")]
    pub target_locations: Vec<Vec<f64>>,
}

impl TransportAssignment {
    pub fn new(
        target_index: Vec<usize>,
        source_weights: Vec<f64>,
        source_locations: Vec<Vec<f64>>,
        target_locations: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = target_index.len();
        if source_weights.len() != m || source_locations.len() != m {
            return Err(Error::SizeMismatch(m, source_weights.len()));
        }
        if let Some(&bad) = target_index.iter().find(|&&t| t >= target_locations.len()) {
            return Err(Error::InvalidInput(format!("target index {bad} out of range")));
        }
        if source_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("assignment weights must be nonnegative".into()));
        }
        let total: f64 = source_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("assignment weights sum to {total}")));
        }
        Ok(Self {
            target_index,
            source_weights,
            source_locations,
            target_locations,
        })
    }

    pub fn len(&self) -> usize {
        self.target_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_index.is_empty()
    }

    /// Location that source point `i` is sent to.
    pub fn image(&self, i: usize) -> &[f64] {
        &self.target_locations[self.target_index[i]]
    }

    /// Weighted mean squared displacement `Σ w_i ‖x_i − T(x_i)‖²`.
    pub fn cost(&self) -> f64 {
        (0..self.len())
            .map(|i| self.source_weights[i] * sq_dist(&self.source_locations[i], self.image(i)))
            .sum()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum-cost perfect matching of rows to columns for a rectangular cost
/// matrix with `rows <= cols` (shortest augmenting path with potentials,
/// O(rows² · cols)). Returns the column assigned to each row.
pub fn solve_assignment(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    let m = cost.ncols();
    if n > m {
        return Err(Error::SizeMismatch(n, m));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("assignment costs must be finite".into()));
    }
    // 1-based potentials; p[j] is the row matched to column j (0 = free).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Optimal matching between two equally weighted samples of the same size
/// under squared Euclidean cost. Returns the map and the 2-Wasserstein
/// distance `sqrt(mean ‖x_i − y_π(i)‖²)`.
pub fn assignment_ot(src: &EmpiricalSample, dst: &EmpiricalSample) -> Result<(TransportAssignment, f64)> {
    if src.len() != dst.len() {
        return Err(Error::SizeMismatch(src.len(), dst.len()));
    }
    if src.dim() != dst.dim() {
        return Err(Error::DimensionMismatch(src.dim(), dst.dim()));
    }
    let m = src.len();
    let xs: Vec<Vec<f64>> = (0..m).map(|i| src.point(i)).collect();
    let ys: Vec<Vec<f64>> = (0..m).map(|i| dst.point(i)).collect();
    let cost = DMatrix::from_fn(m, m, |i, j| sq_dist(&xs[i], &ys[j]));
    let perm = solve_assignment(&cost)?;
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    let weights = vec![1.0 / m as f64; m];
    let map = TransportAssignment::new(perm, weights, xs, ys)?;
    Ok((map, (total / m as f64).sqrt()))
}
