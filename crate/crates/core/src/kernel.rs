//! Hilbert embedding of distributions and radial kernels on the embedding.
//!
//! A distribution `μ` is represented by the inverse transport map `T_μ⁻¹`
//! from a shared reference `μ̄` onto `μ`, viewed as an element of `L²(μ̄)`.
//! Each feature also carries flattened coordinates in which the `L²(μ̄)`
//! distance is plain Euclidean distance, so kernel evaluation never re-runs
//! any transport and every Gram matrix is a radial function of Euclidean
//! distances.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{relative_asymmetry, sqrtm_spd, sym_eigenvalues, SpdSqrtPair, SYMMETRY_TOL};
use crate::measures::{GaussianMeasure, GridDensity};
use crate::ot::entropic::inverse_grid_map;
use crate::ot::gaussian::{gaussian_w2_squared, inverse_affine_map};
use crate::ot::{AffineMap, TransportAssignment};

/// Distances below this are treated as exactly zero by the nugget indicator.
pub const ZERO_DISTANCE: f64 = 1e-12;

/// The reference measure `μ̄` shared by a collection of features.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Gaussian(GaussianMeasure),
    Grid(GridDensity),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    /// `x ↦ A x + b` from a Gaussian reference.
    Gaussian(AffineMap),
    /// Rounded transport from the reference support cells.
    Grid(TransportAssignment),
}

/// A distribution embedded as its inverse transport map from the reference.
#[derive(Debug, Clone)]
pub struct EmbeddedFeature {
    embedding: Embedding,
    reference: Arc<Reference>,
    coords: Vec<f64>,
}

impl PartialEq for EmbeddedFeature {
    fn eq(&self, other: &Self) -> bool {
        self.embedding == other.embedding && same_reference(&self.reference, &other.reference)
    }
}

fn same_reference(a: &Arc<Reference>, b: &Arc<Reference>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

fn gaussian_coords(map: &AffineMap, reference: &GaussianMeasure, roots: &SpdSqrtPair) -> Vec<f64> {
    // ‖f − g‖²_{L²(μ̄)} = ‖ΔA S̄^½‖_F² + ‖ΔA m̄ + Δb‖²
    let a = map.linear_matrix();
    let scaled = &a * &roots.sqrt;
    let shift = &a * reference.mean() + map.offset_vector();
    scaled.iter().chain(shift.iter()).copied().collect()
}

fn grid_coords(map: &TransportAssignment) -> Vec<f64> {
    (0..map.len())
        .flat_map(|i| {
            let w = map.source_weights[i].sqrt();
            map.image(i).iter().map(move |x| w * x).collect::<Vec<_>>()
        })
        .collect()
}

impl EmbeddedFeature {
    /// Feature from an affine inverse map out of a Gaussian reference.
    pub fn from_affine(map: AffineMap, reference: Arc<Reference>) -> Result<Self> {
        let Reference::Gaussian(bar) = reference.as_ref() else {
            return Err(Error::ReferenceMismatch);
        };
        if map.offset.len() != bar.dim() || map.linear.iter().any(|r| r.len() != bar.dim()) {
            return Err(Error::DimensionMismatch(map.offset.len(), bar.dim()));
        }
        let roots = sqrtm_spd(bar.cov())?;
        let coords = gaussian_coords(&map, bar, &roots);
        Ok(Self {
            embedding: Embedding::Gaussian(map),
            reference,
            coords,
        })
    }

    /// Feature from a rounded transport map out of a grid reference. The
    /// assignment's source weights act as the `L²(μ̄)` measure.
    pub fn from_assignment(map: TransportAssignment, reference: Arc<Reference>) -> Result<Self> {
        let Reference::Grid(bar) = reference.as_ref() else {
            return Err(Error::ReferenceMismatch);
        };
        let support = bar.support().len();
        if map.len() != support {
            return Err(Error::SizeMismatch(map.len(), support));
        }
        let coords = grid_coords(&map);
        Ok(Self {
            embedding: Embedding::Grid(map),
            reference,
            coords,
        })
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn reference(&self) -> &Arc<Reference> {
        &self.reference
    }

    /// Coordinates in which the embedding distance is Euclidean.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Embeds Gaussian measures against a Gaussian reference.
pub fn embed_gaussians(measures: &[GaussianMeasure], reference: &GaussianMeasure) -> Result<Vec<EmbeddedFeature>> {
    let roots = sqrtm_spd(reference.cov())?;
    let shared = Arc::new(Reference::Gaussian(reference.clone()));
    measures
        .par_iter()
        .map(|mu| {
            let map = inverse_affine_map(mu, reference, &roots)?;
            let coords = gaussian_coords(&map, reference, &roots);
            Ok(EmbeddedFeature {
                embedding: Embedding::Gaussian(map),
                reference: Arc::clone(&shared),
                coords,
            })
        })
        .collect()
}

/// Embeds grid densities against a grid reference through rounded entropic
/// plans from the reference onto each density.
pub fn embed_grids(
    densities: &[GridDensity],
    reference: &GridDensity,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Vec<EmbeddedFeature>> {
    let shared = Arc::new(Reference::Grid(reference.clone()));
    densities
        .par_iter()
        .map(|mu| {
            let map = inverse_grid_map(mu, reference, lambda, max_iter, tol)?;
            EmbeddedFeature::from_assignment(map, Arc::clone(&shared))
        })
        .collect()
}

/// `‖T_μ⁻¹ − T_ν⁻¹‖_{L²(μ̄)}` between two features on the same reference.
pub fn embedding_distance(f: &EmbeddedFeature, g: &EmbeddedFeature) -> Result<f64> {
    if !same_reference(&f.reference, &g.reference) || f.coords.len() != g.coords.len() {
        return Err(Error::ReferenceMismatch);
    }
    Ok(euclidean(&f.coords, &g.coords))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pairwise embedding distances, computed in parallel and assembled
/// deterministically.
pub fn distance_matrix(features: &[EmbeddedFeature]) -> Result<DMatrix<f64>> {
    let n = features.len();
    if let Some(first) = features.first() {
        if features
            .iter()
            .any(|f| !same_reference(&f.reference, &first.reference) || f.coords.len() != first.coords.len())
        {
            return Err(Error::ReferenceMismatch);
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| euclidean(&features[i].coords, &features[j].coords)).collect())
        .collect();
    let mut d = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let j = i + 1 + k;
            d[(i, j)] = *v;
            d[(j, i)] = *v;
        }
    }
    Ok(d)
}

/// Distances from one feature to each feature of a collection.
pub fn cross_distances(query: &EmbeddedFeature, features: &[EmbeddedFeature]) -> Result<Vec<f64>> {
    features.iter().map(|f| embedding_distance(query, f)).collect()
}

/// Box constraints for [`KernelParams`], stored as `[θ1, θ2, θ3, θ4]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: [0.05, 0.01, 0.5, 1e-5],
            upper: [10.0, 10.0, 2.0, 1.0],
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        for k in 0..4 {
            let (lo, hi) = (self.lower[k], self.upper[k]);
            if !(lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
                return Err(Error::InvalidInput(format!("invalid bounds for theta{}: [{lo}, {hi}]", k + 1)));
            }
        }
        if self.upper[2] > 2.0 {
            return Err(Error::InvalidInput("theta3 above 2 does not give a valid kernel".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &KernelParams) -> bool {
        p.to_array()
            .iter()
            .enumerate()
            .all(|(k, v)| *v >= self.lower[k] && *v <= self.upper[k])
    }

    pub fn clamp(&self, values: [f64; 4]) -> KernelParams {
        let v: Vec<f64> = (0..4).map(|k| values[k].clamp(self.lower[k], self.upper[k])).collect();
        KernelParams::from_array([v[0], v[1], v[2], v[3]])
    }
}

/// `K_θ(d) = θ1² exp(−θ2 d^θ3) + θ4 · 1{d = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
}

impl KernelParams {
    /// Parameters checked against the default box.
    pub fn new(theta1: f64, theta2: f64, theta3: f64, theta4: f64) -> Result<Self> {
        Self::within(theta1, theta2, theta3, theta4, &ParamBounds::default())
    }

    pub fn within(theta1: f64, theta2: f64, theta3: f64, theta4: f64, bounds: &ParamBounds) -> Result<Self> {
        let p = Self::from_array([theta1, theta2, theta3, theta4]);
        if !bounds.contains(&p) {
            return Err(Error::InvalidInput(format!(
                "kernel parameters ({theta1}, {theta2}, {theta3}, {theta4}) outside the box"
            )));
        }
        Ok(p)
    }

    /// Unchecked construction, for values that need not lie in the default
    /// box (hand examples, nugget-free interpolation).
    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            theta1: v[0],
            theta2: v[1],
            theta3: v[2],
            theta4: v[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.theta1, self.theta2, self.theta3, self.theta4]
    }

    /// Prior variance `K_θ(μ, μ)`.
    pub fn total_variance(&self) -> f64 {
        self.theta1 * self.theta1 + self.theta4
    }

    /// Kernel value at embedding distance `d`.
    pub fn eval(&self, d: f64) -> f64 {
        let nugget = if d < ZERO_DISTANCE { self.theta4 } else { 0.0 };
        let d = if d < ZERO_DISTANCE { 0.0 } else { d };
        self.theta1 * self.theta1 * (-self.theta2 * d.powf(self.theta3)).exp() + nugget
    }
}

/// `K_θ` between two features.
pub fn kernel_eval(f: &EmbeddedFeature, g: &EmbeddedFeature, theta: &KernelParams) -> Result<f64> {
    embedding_distance(f, g).map(|d| theta.eval(d))
}

/// Gram matrix of `K_θ` from pairwise distances. The nugget sits on the
/// diagonal only: two training entries at distance zero share the smooth part
/// but keep separate noise, which keeps duplicated inputs invertible.
pub fn gram_from_distances(distances: &DMatrix<f64>, theta: &KernelParams) -> DMatrix<f64> {
    let smooth = KernelParams { theta4: 0.0, ..*theta };
    let mut k = distances.map(|d| smooth.eval(d));
    for i in 0..k.nrows().min(k.ncols()) {
        k[(i, i)] += theta.theta4;
    }
    k
}

/// Gram matrix `[K_θ(μ_i, μ_j)]` over a training collection.
pub fn gram_matrix(features: &[EmbeddedFeature], theta: &KernelParams) -> Result<DMatrix<f64>> {
    Ok(gram_from_distances(&distance_matrix(features)?, theta))
}

/// Radial covariance families `F(t)` of the embedding distance `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RadialFamily {
    /// `σ² exp(−(t/ℓ)²)`.
    SquareExponential { variance: f64, length: f64 },
    /// Matérn with half-integer smoothness `ν ∈ {½, 3/2, 5/2}` and inverse
    /// scale `α`.
    Matern { variance: f64, alpha: f64, nu: f64 },
    /// `σ² exp(−(t/ℓ)^s)` with `0 < s ≤ 2`.
    PowerExponential { variance: f64, length: f64, exponent: f64 },
}

impl RadialFamily {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Self::SquareExponential { variance, length } => {
                positive("variance", variance)?;
                positive("length", length)
            }
            Self::Matern { variance, alpha, nu } => {
                positive("variance", variance)?;
                positive("alpha", alpha)?;
                if ![0.5, 1.5, 2.5].contains(&nu) {
                    return Err(Error::UnsupportedSmoothness(nu));
                }
                Ok(())
            }
            Self::PowerExponential {
                variance,
                length,
                exponent,
            } => {
                positive("variance", variance)?;
                positive("length", length)?;
                positive("exponent", exponent)?;
                if exponent > 2.0 {
                    return Err(Error::InvalidInput(format!("exponent must be at most 2, got {exponent}")));
                }
                Ok(())
            }
        }
    }
}

/// Evaluates a radial family at `t ≥ 0`.
pub fn radial_eval(family: &RadialFamily, t: f64) -> Result<f64> {
    family.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("radial argument must be nonnegative, got {t}")));
    }
    Ok(match *family {
        RadialFamily::SquareExponential { variance, length } => variance * (-(t / length).powi(2)).exp(),
        RadialFamily::Matern { variance, alpha, nu } => {
            let x = alpha * t;
            let poly = if nu == 0.5 {
                1.0
            } else if nu == 1.5 {
                1.0 + x
            } else {
                1.0 + x + x * x / 3.0
            };
            variance * poly * (-x).exp()
        }
        RadialFamily::PowerExponential {
            variance,
            length,
            exponent,
        } => variance * (-(t / length).powf(exponent)).exp(),
    })
}

/// Gram matrix of a radial family over the features.
pub fn radial_gram(features: &[EmbeddedFeature], family: &RadialFamily) -> Result<DMatrix<f64>> {
    family.validate()?;
    let d = distance_matrix(features)?;
    let mut out = DMatrix::zeros(d.nrows(), d.ncols());
    for (o, t) in out.iter_mut().zip(d.iter()) {
        *o = radial_eval(family, *t)?;
    }
    Ok(out)
}

/// `exp(−W2(a, b)²)`; not positive definite in dimension ≥ 2.
pub fn naive_w2_kernel(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    gaussian_w2_squared(a, b).map(|w| (-w).exp())
}

/// Gram matrix of [`naive_w2_kernel`], assembled in parallel.
pub fn naive_w2_gram(measures: &[GaussianMeasure]) -> Result<DMatrix<f64>> {
    let n = measures.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| naive_w2_kernel(&measures[i], &measures[j])).collect())
        .collect::<Result<_>>()?;
    let mut k = DMatrix::identity(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            k[(i, i + 1 + off)] = *v;
            k[(i + 1 + off, i)] = *v;
        }
    }
    Ok(k)
}

/// Spectrum of a symmetric matrix with a count of significantly negative
/// eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Largest eigenvalue magnitude.
    pub lambda_max: f64,
    pub tol: f64,
    /// Eigenvalues below `−tol · lambda_max`.
    pub negative_count: usize,
    /// `min eigenvalue / lambda_max`.
    pub min_ratio: f64,
}

impl SpectrumReport {
    pub fn is_psd(&self) -> bool {
        self.negative_count == 0
    }
}

pub fn psd_diagnostic(matrix: &DMatrix<f64>, tol: f64) -> Result<SpectrumReport> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::NotSquare {
            rows: matrix.nrows(),
            cols: matrix.ncols(),
        });
    }
    let asym = relative_asymmetry(matrix);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let eigenvalues = sym_eigenvalues(matrix);
    let lambda_max = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let negative_count = eigenvalues.iter().filter(|&&v| v < -tol * lambda_max).count();
    let min_ratio = match eigenvalues.first() {
        Some(v) if lambda_max > 0.0 => v / lambda_max,
        _ => 0.0,
    };
    Ok(SpectrumReport {
        eigenvalues,
        lambda_max,
        tol,
        negative_count,
        min_ratio,
    })
}
