//! Kernel-smoothing regression on grid densities: a triangular-kernel
//! weighted average of training responses under the L¹ distance between
//! densities, with the bandwidth chosen on a held-out split.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::GridDensity;
use crate::rng::seeded;

/// Number of log-spaced bandwidth candidates.
pub const N_BANDWIDTHS: usize = 20;

/// `Σ_cells |a − b|`, in `[0, 2]`.
pub fn l1_density_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.grid_size() != b.grid_size() {
        return Err(Error::GridMismatch(a.grid_size(), b.grid_size()));
    }
    Ok(a.weights().iter().zip(b.weights()).map(|(x, y)| (x - y).abs()).sum())
}

/// Smoothed prediction together with a flag raised when no training point
/// fell inside the bandwidth and the global mean was returned instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherPrediction {
    pub value: f64,
    pub no_neighbors: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherModel {
    grids: Vec<GridDensity>,
    y: Vec<f64>,
    bandwidth: f64,
}

impl SmootherModel {
    pub fn new(grids: Vec<GridDensity>, y: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if grids.len() != y.len() {
            return Err(Error::SizeMismatch(grids.len(), y.len()));
        }
        if grids.is_empty() {
            return Err(Error::InvalidInput("smoother needs training data".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { grids, y, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn grids(&self) -> &[GridDensity] {
        &self.grids
    }
}

/// Triangular-kernel average from precomputed distances to the training set.
pub fn smooth_from_distances(distances: &[f64], y: &[f64], bandwidth: f64) -> SmootherPrediction {
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, v) in distances.iter().zip(y) {
        let w = (1.0 - d / bandwidth).max(0.0);
        num += w * v;
        den += w;
    }
    if den > 0.0 {
        SmootherPrediction {
            value: num / den,
            no_neighbors: false,
        }
    } else {
        SmootherPrediction {
            value: y.iter().sum::<f64>() / y.len() as f64,
            no_neighbors: true,
        }
    }
}

pub fn smoother_predict(model: &SmootherModel, query: &GridDensity) -> Result<SmootherPrediction> {
    let d: Vec<f64> = model
        .grids
        .iter()
        .map(|g| l1_density_distance(query, g))
        .collect::<Result<_>>()?;
    Ok(smooth_from_distances(&d, &model.y, model.bandwidth))
}

/// Symmetric matrix of pairwise L¹ distances, rows computed in parallel.
pub fn l1_distance_matrix(grids: &[GridDensity]) -> Result<Vec<Vec<f64>>> {
    let n = grids.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| l1_density_distance(&grids[i], &grids[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut d = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            d[i][i + 1 + k] = *v;
            d[i + 1 + k][i] = *v;
        }
    }
    Ok(d)
}

/// `N_BANDWIDTHS` log-spaced values from the smallest positive to the
/// largest pairwise distance.
pub fn bandwidth_candidates(distances: &[Vec<f64>]) -> Result<Vec<f64>> {
    let off: Vec<f64> = distances
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| *v))
        .collect();
    let lo = off.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let hi = off.iter().copied().fold(0.0, f64::max);
    if !lo.is_finite() || !(hi > 0.0) {
        return Err(Error::DegenerateDistances);
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..N_BANDWIDTHS)
        .map(|k| (a + (b - a) * k as f64 / (N_BANDWIDTHS - 1) as f64).exp())
        .collect())
}

/// Deterministic 50/50 split of `0..n` into (fit, validation) index sets.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let half = n / 2;
    let mut fit = idx[..half].to_vec();
    let mut val = idx[half..].to_vec();
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

/// Held-out mean squared error of each candidate on a fixed split.
pub fn bandwidth_errors(distances: &[Vec<f64>], y: &[f64], candidates: &[f64], seed: u64) -> Result<Vec<f64>> {
    let n = y.len();
    if distances.len() != n {
        return Err(Error::SizeMismatch(distances.len(), n));
    }
    if n < 4 {
        return Err(Error::InvalidInput("bandwidth selection needs at least 4 training points".into()));
    }
    let (fit, val) = split_indices(n, seed);
    let fit_y: Vec<f64> = fit.iter().map(|&i| y[i]).collect();
    Ok(candidates
        .iter()
        .map(|&h| {
            val.iter()
                .map(|&v| {
                    let d: Vec<f64> = fit.iter().map(|&i| distances[v][i]).collect();
                    (smooth_from_distances(&d, &fit_y, h).value - y[v]).powi(2)
                })
                .sum::<f64>()
                / val.len() as f64
        })
        .collect())
}

/// Candidate with the smallest held-out error; ties go to the smaller
/// bandwidth. `candidates = None` uses [`bandwidth_candidates`].
pub fn select_bandwidth(train: &[GridDensity], y: &[f64], candidates: Option<&[f64]>, seed: u64) -> Result<f64> {
    let d = l1_distance_matrix(train)?;
    select_bandwidth_from_distances(&d, y, candidates, seed)
}

pub fn select_bandwidth_from_distances(
    distances: &[Vec<f64>],
    y: &[f64],
    candidates: Option<&[f64]>,
    seed: u64,
) -> Result<f64> {
    let owned;
    let candidates = match candidates {
        Some(c) => c,
        None => {
            owned = bandwidth_candidates(distances)?;
            &owned
        }
    };
    if candidates.is_empty() || candidates.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidInput("bandwidth candidates must be positive".into()));
    }
    if distances.iter().flatten().all(|d| *d == 0.0) {
        return Err(Error::DegenerateDistances);
    }
    let errors = bandwidth_errors(distances, y, candidates, seed)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        errors[a]
            .total_cmp(&errors[b])
            .then(candidates[a].total_cmp(&candidates[b]))
    });
    Ok(candidates[order[0]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: &[f64]) -> GridDensity {
        GridDensity::new(2, w.to_vec()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let a = grid(&[1.0, 0.0, 0.0, 0.0]);
        let b = grid(&[0.0, 1.0, 0.0, 0.0]);
        let c = grid(&[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(l1_density_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_density_distance(&a, &b).unwrap(), 2.0);
        assert_eq!(l1_density_distance(&a, &c).unwrap(), 1.0);
        let other = GridDensity::uniform(3).unwrap();
        assert_eq!(l1_density_distance(&a, &other).unwrap_err(), Error::GridMismatch(2, 3));
    }

    #[test]
    fn triangular_weights() {
        assert_eq!(smooth_from_distances(&[0.5, 1.5], &[2.0, 10.0], 1.0).value, 2.0);
        assert_eq!(smooth_from_distances(&[0.3, 0.3], &[1.0, 4.0], 1.0).value, 2.5);
        assert_eq!(smooth_from_distances(&[0.2], &[7.0], 1.0).value, 7.0);
        let p = smooth_from_distances(&[3.0, 4.0], &[1.0, 3.0], 1.0);
        assert!(p.no_neighbors);
        assert_eq!(p.value, 2.0);
    }

    #[test]
    fn single_candidate_and_determinism() {
        let grids = vec![
            grid(&[1.0, 0.0, 0.0, 0.0]),
            grid(&[0.5, 0.5, 0.0, 0.0]),
            grid(&[0.0, 0.5, 0.5, 0.0]),
            grid(&[0.0, 0.0, 0.5, 0.5]),
            grid(&[0.0, 0.0, 0.0, 1.0]),
        ];
        let y = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(select_bandwidth(&grids, &y, Some(&[0.7]), 3).unwrap(), 0.7);
        let a = select_bandwidth(&grids, &y, None, 3).unwrap();
        let b = select_bandwidth(&grids, &y, None, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_distances() {
        let g = grid(&[0.25; 4]);
        let grids = vec![g.clone(), g.clone(), g.clone(), g];
        assert_eq!(
            select_bandwidth(&grids, &[1.0, 2.0, 3.0, 4.0], None, 0).unwrap_err(),
            Error::DegenerateDistances
        );
    }

    #[test]
    fn candidates_span_the_distance_range() {
        let d = vec![vec![0.0, 0.1, 1.0], vec![0.1, 0.0, 0.5], vec![1.0, 0.5, 0.0]];
        let c = bandwidth_candidates(&d).unwrap();
        assert_eq!(c.len(), N_BANDWIDTHS);
        assert!((c[0] - 0.1).abs() < 1e-15 && (c[N_BANDWIDTHS - 1] - 1.0).abs() < 1e-12);
    }
}
