//! Small dense linear-algebra helpers built on `nalgebra`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal;

/// Relative asymmetry above which a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues below `EIGEN_FLOOR * λ_max` are treated as round-off when taking
/// square roots of matrices that are SPD in exact arithmetic.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Symmetric eigendecomposition with eigenvalues sorted ascending and the
/// eigenvector columns permuted to match.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Sorted eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Largest absolute entrywise difference between `m` and its transpose,
/// relative to the largest absolute entry.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Accepts a symmetric positive definite matrix and returns its symmetrized copy.
pub fn validate_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = symmetrize(m);
    let min = sym_eigenvalues(&sym).first().copied().unwrap_or(0.0);
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(sym)
}

/// Square root of an SPD matrix together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdSqrtPair {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

fn spectral_apply(values: &[f64], vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DVector::from_iterator(values.len(), values.iter().map(|&v| f(v)));
    let mut left = vectors.clone();
    for (j, s) in scaled.iter().enumerate() {
        left.column_mut(j).scale_mut(*s);
    }
    symmetrize(&(left * vectors.transpose()))
}

/// Square root and inverse square root of an SPD matrix via symmetric
/// eigendecomposition.
pub fn sqrtm_spd(s: &DMatrix<f64>) -> Result<SpdSqrtPair> {
    let s = validate_spd(s)?;
    let (values, vectors) = sym_eigen(&s);
    let floor = EIGEN_FLOOR * values.last().copied().unwrap_or(0.0);
    let values: Vec<f64> = values.iter().map(|&v| v.max(floor)).collect();
    Ok(SpdSqrtPair {
        sqrt: spectral_apply(&values, &vectors, f64::sqrt),
        inv_sqrt: spectral_apply(&values, &vectors, |v| 1.0 / v.sqrt()),
    })
}

/// Square root of a matrix that is symmetric positive semidefinite up to
/// round-off. Small or negative eigenvalues are floored.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(&symmetrize(m));
    let floor = EIGEN_FLOOR * values.last().copied().unwrap_or(0.0).max(0.0);
    spectral_apply(&values, &vectors, |v| v.max(floor).sqrt())
}

/// Trace of the square root of a PSD matrix (sum of square-rooted eigenvalues).
pub fn trace_sqrt(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(&symmetrize(m))
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// sign-corrected diagonal).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| standard_normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_is_spd() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(validate_spd(&id).unwrap(), id);
    }

    #[test]
    fn indefinite_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(validate_spd(&m), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.1, 2.0]);
        assert!(matches!(validate_spd(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn non_square_rejected() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(validate_spd(&m), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn accepts_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(validate_spd(&m).is_ok());
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let id = DMatrix::<f64>::identity(2, 2);
        let p = sqrtm_spd(&id).unwrap();
        assert_relative_eq!(p.sqrt, id, epsilon = 1e-14);
        assert_relative_eq!(p.inv_sqrt, id, epsilon = 1e-14);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let p = sqrtm_spd(&d).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_relative_eq!(p.sqrt, want, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_of_coupled_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = sqrtm_spd(&m).unwrap();
        // eigenvalues 3 and 1 with eigenvectors (1,1)/√2 and (1,-1)/√2
        let a = (3f64.sqrt() + 1.0) / 2.0;
        let b = (3f64.sqrt() - 1.0) / 2.0;
        let want = DMatrix::from_row_slice(2, 2, &[a, b, b, a]);
        assert_relative_eq!(p.sqrt, want, epsilon = 1e-12);
        assert!((a - 1.3660).abs() < 1e-4 && (b - 0.3660).abs() < 1e-4);
        let recon = &p.sqrt * &p.sqrt;
        assert!((recon - &m).norm() / m.norm() < 1e-10);
        let id = &p.sqrt * &p.inv_sqrt;
        assert!((id - DMatrix::<f64>::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let q = random_orthogonal(4, &mut rng);
        let id = q.transpose() * &q;
        assert!((id - DMatrix::<f64>::identity(4, 4)).norm() < 1e-12);
    }
}
