//! Closed-form optimal transport between Gaussian measures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, sqrtm_spd, symmetrize, trace_sqrt, validate_spd, SpdSqrtPair};
use crate::measures::GaussianMeasure;

/// Linear map `x ↦ M x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("linear map has non-finite entries".into()));
        }
        Ok(Self { matrix })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

/// Affine map `x ↦ A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub linear: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn from_parts(linear: &DMatrix<f64>, offset: &DVector<f64>) -> Self {
        Self {
            linear: linear.row_iter().map(|r| r.iter().copied().collect()).collect(),
            offset: offset.iter().copied().collect(),
        }
    }

    pub fn linear_matrix(&self) -> DMatrix<f64> {
        let d = self.offset.len();
        DMatrix::from_fn(d, d, |i, j| self.linear[i][j])
    }

    pub fn offset_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.offset)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.linear_matrix() * x + self.offset_vector()
    }
}

/// `tr((B^½ A B^½)^½)` symmetrized over both argument orders so the result
/// does not depend on which measure comes first.
fn bures_fidelity(a: &SpdSqrtPair, sa: &DMatrix<f64>, b: &SpdSqrtPair, sb: &DMatrix<f64>) -> f64 {
    let ab = trace_sqrt(&(&b.sqrt * sa * &b.sqrt));
    let ba = trace_sqrt(&(&a.sqrt * sb * &a.sqrt));
    0.5 * (ab + ba)
}

/// Squared 2-Wasserstein distance between two Gaussians:
/// `‖m_a − m_b‖² + tr(S_a) + tr(S_b) − 2 tr((S_b^½ S_a S_b^½)^½)`.
pub fn gaussian_w2_squared(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    if a == b {
        return Ok(0.0);
    }
    let ra = sqrtm_spd(a.cov())?;
    let rb = sqrtm_spd(b.cov())?;
    let fid = bures_fidelity(&ra, a.cov(), &rb, b.cov());
    let mean_term = (a.mean() - b.mean()).norm_squared();
    // Grouped so that swapping the arguments gives a bit-identical result.
    let traces = a.cov().trace() + b.cov().trace();
    Ok((mean_term + traces - 2.0 * fid).max(0.0))
}

/// 2-Wasserstein distance between two Gaussians.
pub fn gaussian_w2(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    gaussian_w2_squared(a, b).map(f64::sqrt)
}

/// Optimal map between centered Gaussians together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMapPair {
    pub forward: LinearMap,
    pub inverse: LinearMap,
}

/// `(R S R)^½ ` for SPD `S` and a symmetric root `R`.
fn conjugated_root(root: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    psd_sqrt(&(root * s * root))
}

/// Inverse map from the reference (root pair of `S̄`) to `N(0, S)`:
/// `S̄^{-½} (S̄^½ S S̄^½)^½ S̄^{-½}`.
pub fn inverse_map_matrix(reference: &SpdSqrtPair, s: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(&reference.inv_sqrt * conjugated_root(&reference.sqrt, s) * &reference.inv_sqrt))
}

/// Optimal map pushing `N(0, S_from)` onto `N(0, S_to)` and its inverse.
pub fn gaussian_transport_map(from_cov: &DMatrix<f64>, to_cov: &DMatrix<f64>) -> Result<TransportMapPair> {
    if from_cov.nrows() != to_cov.nrows() {
        return Err(Error::DimensionMismatch(from_cov.nrows(), to_cov.nrows()));
    }
    let from = sqrtm_spd(from_cov)?;
    let to = sqrtm_spd(to_cov)?;
    let to_cov = validate_spd(to_cov)?;
    let from_cov = validate_spd(from_cov)?;
    let forward = inverse_map_matrix(&from, &to_cov);
    let inverse = inverse_map_matrix(&to, &from_cov);
    Ok(TransportMapPair {
        forward: LinearMap::new(forward)?,
        inverse: LinearMap::new(inverse)?,
    })
}

/// Squared `L²(N(0, S̄))` distance between the inverse maps of `N(0, S_i)` and
/// `N(0, S_j)`, i.e. `‖S̄^{-½} Δ‖_F²` with
/// `Δ = (S̄^½ S_i S̄^½)^½ − (S̄^½ S_j S̄^½)^½`.
pub fn map_l2_distance_gaussian(si: &DMatrix<f64>, sj: &DMatrix<f64>, sbar: &DMatrix<f64>) -> Result<f64> {
    let d = sbar.nrows();
    for s in [si, sj] {
        if s.nrows() != d {
            return Err(Error::DimensionMismatch(s.nrows(), d));
        }
    }
    let si = validate_spd(si)?;
    let sj = validate_spd(sj)?;
    let roots = sqrtm_spd(sbar)?;
    let delta = conjugated_root(&roots.sqrt, &si) - conjugated_root(&roots.sqrt, &sj);
    Ok((&roots.inv_sqrt * delta).norm_squared())
}

/// Affine inverse map `x ↦ m + T⁻¹ (x − m̄)` from the reference onto `mu`.
pub fn inverse_affine_map(mu: &GaussianMeasure, reference: &GaussianMeasure, roots: &SpdSqrtPair) -> Result<AffineMap> {
    if mu.dim() != reference.dim() {
        return Err(Error::DimensionMismatch(mu.dim(), reference.dim()));
    }
    let a = inverse_map_matrix(roots, mu.cov());
    let b = mu.mean() - &a * reference.mean();
    Ok(AffineMap::from_parts(&a, &b))
}

/// Exact squared `L²(μ̄)` norm of the difference of two affine maps, with
/// `μ̄ = N(m̄, S̄)`: `tr(ΔA S̄ ΔAᵀ) + ‖ΔA m̄ + Δb‖²`.
pub fn affine_l2_distance_squared(f: &AffineMap, g: &AffineMap, reference: &GaussianMeasure) -> Result<f64> {
    let d = reference.dim();
    if f.offset.len() != d || g.offset.len() != d {
        return Err(Error::DimensionMismatch(f.offset.len(), d));
    }
    let da = f.linear_matrix() - g.linear_matrix();
    let db = f.offset_vector() - g.offset_vector();
    let cov_term = (&da * reference.cov() * da.transpose()).trace();
    let mean_term = (&da * reference.mean() + db).norm_squared();
    Ok((cov_term + mean_term).max(0.0))
}
