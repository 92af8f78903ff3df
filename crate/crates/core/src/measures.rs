//! Distribution inputs: Gaussian measures, grid densities on the unit square,
//! empirical samples and unions of disks, plus their seeded generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, validate_spd};
use crate::rng::seeded;

/// Sub-samples per cell side when rasterizing a region onto a grid.
pub const RASTER_SUBSAMPLES: usize = 4;

/// Tolerance on the total mass of a grid density.
pub const MASS_TOL: f64 = 1e-9;

/// Multivariate normal distribution with an SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch(mean.len(), cov.nrows()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mean has non-finite entries".into()));
        }
        let cov = validate_spd(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn centered(cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        Self::new(DVector::zeros(d), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Conjugates the measure by an orthogonal matrix: N(Um, U S Uᵀ).
    pub fn rotated(&self, u: &DMatrix<f64>) -> Result<Self> {
        Self::new(u * &self.mean, u * &self.cov * u.transpose())
    }

    /// Discretizes a 2-D Gaussian onto the `g`×`g` grid over the unit square.
    ///
    /// Axis-aligned covariances use exact cell masses from the normal CDF;
    /// other covariances evaluate the density on a 4×4 sub-sample of each
    /// cell. The mass is renormalized to the square. If it underflows
    /// everywhere, all mass goes to the cell containing the (clamped) mean.
    pub fn rasterize(&self, g: usize) -> Result<GridDensity> {
        if self.dim() != 2 {
            return Err(Error::DimensionMismatch(self.dim(), 2));
        }
        check_grid_size(g)?;
        let (mx, my) = (self.mean[0], self.mean[1]);
        let diagonal = self.cov[(0, 1)] == 0.0;
        let mut w = vec![0.0; g * g];
        if diagonal {
            let sx = self.cov[(0, 0)].sqrt();
            let sy = self.cov[(1, 1)].sqrt();
            let edges = |m: f64, s: f64| -> Vec<f64> {
                let cdf: Vec<f64> = (0..=g).map(|k| normal_cdf((k as f64 / g as f64 - m) / s)).collect();
                cdf.windows(2).map(|p| (p[1] - p[0]).max(0.0)).collect()
            };
            let px = edges(mx, sx);
            let py = edges(my, sy);
            for i in 0..g {
                for j in 0..g {
                    w[i * g + j] = py[i] * px[j];
                }
            }
        } else {
            let inv = self
                .cov
                .clone()
                .try_inverse()
                .ok_or(Error::NotPositiveDefinite(0.0))?;
            let s = RASTER_SUBSAMPLES;
            for i in 0..g {
                for j in 0..g {
                    let mut acc = 0.0;
                    for a in 0..s {
                        for b in 0..s {
                            let x = (j as f64 + (b as f64 + 0.5) / s as f64) / g as f64 - mx;
                            let y = (i as f64 + (a as f64 + 0.5) / s as f64) / g as f64 - my;
                            let q = inv[(0, 0)] * x * x + 2.0 * inv[(0, 1)] * x * y + inv[(1, 1)] * y * y;
                            acc += (-0.5 * q).exp();
                        }
                    }
                    w[i * g + j] = acc;
                }
            }
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            let cell = |v: f64| ((v.clamp(0.0, 1.0) * g as f64) as usize).min(g - 1);
            w.iter_mut().for_each(|v| *v = 0.0);
            w[cell(my) * g + cell(mx)] = 1.0;
            return GridDensity::new(g, w);
        }
        GridDensity::from_unnormalized(g, w)
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

fn check_grid_size(g: usize) -> Result<()> {
    if g < 2 {
        return Err(Error::InvalidInput(format!("grid size must be at least 2, got {g}")));
    }
    Ok(())
}

/// Probability weights on a regular `G`×`G` grid over [0,1]².
///
/// Weights are stored row-major with row `i` the y-index and column `j` the
/// x-index; cell `(i, j)` is centered at `((j+½)/G, (i+½)/G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid_size: usize,
    weights: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid_size: usize, weights: Vec<f64>) -> Result<Self> {
        check_grid_size(grid_size)?;
        if weights.len() != grid_size * grid_size {
            return Err(Error::SizeMismatch(weights.len(), grid_size * grid_size));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("grid weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!("grid weights sum to {total}, expected 1")));
        }
        Ok(Self { grid_size, weights })
    }

    /// Normalizes nonnegative weights to unit mass.
    pub fn from_unnormalized(grid_size: usize, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("grid weights must be finite and nonnegative".into()));
        }
        if !(total > 0.0) {
            return Err(Error::EmptySupport);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(grid_size, weights)
    }

    /// A unit mass on one cell.
    pub fn dirac(grid_size: usize, cell: usize) -> Result<Self> {
        let mut w = vec![0.0; grid_size * grid_size];
        if cell >= w.len() {
            return Err(Error::InvalidInput(format!("cell {cell} outside the grid")));
        }
        w[cell] = 1.0;
        Self::new(grid_size, w)
    }

    pub fn uniform(grid_size: usize) -> Result<Self> {
        let n = grid_size * grid_size;
        Self::from_unnormalized(grid_size, vec![1.0; n])
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.grid_size + col]
    }

    pub fn num_cells(&self) -> usize {
        self.weights.len()
    }

    /// Center of cell `index` (row-major) as `[x, y]`.
    pub fn center(&self, index: usize) -> [f64; 2] {
        cell_center(self.grid_size, index)
    }

    /// Indices of cells with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&k| self.weights[k] > 0.0).collect()
    }

    /// Mean location `[x, y]` of the density.
    pub fn centroid(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for (k, w) in self.weights.iter().enumerate() {
            let p = self.center(k);
            c[0] += w * p[0];
            c[1] += w * p[1];
        }
        c
    }

    pub fn transpose(&self) -> Self {
        let g = self.grid_size;
        let mut w = vec![0.0; g * g];
        for i in 0..g {
            for j in 0..g {
                w[j * g + i] = self.weights[i * g + j];
            }
        }
        Self { grid_size: g, weights: w }
    }
}

pub fn cell_center(grid_size: usize, index: usize) -> [f64; 2] {
    let g = grid_size as f64;
    let (i, j) = (index / grid_size, index % grid_size);
    [(j as f64 + 0.5) / g, (i as f64 + 0.5) / g]
}

/// Equally weighted point cloud in ℝ^p, one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    points: DMatrix<f64>,
}

impl EmpiricalSample {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidInput("empirical sample needs at least one point".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sample points must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }
}

/// Union of equal-radius disks in the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskConfig {
    pub radius: f64,
    pub centers: Vec<[f64; 2]>,
}

impl DiskConfig {
    pub fn new(radius: f64, centers: Vec<[f64; 2]>) -> Result<Self> {
        let cfg = Self { radius, centers };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidInput(format!("disk radius must be positive, got {}", self.radius)));
        }
        for c in &self.centers {
            if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!("disk center {c:?} outside [0,1]²")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let r2 = self.radius * self.radius;
        self.centers
            .iter()
            .any(|c| (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r2)
    }
}

/// Uniform distribution over a union of disks, rasterized onto a `g`×`g` grid.
///
/// Each cell's weight is proportional to the number of its 4×4 sub-sample
/// points that fall inside the union.
pub fn disks_to_grid(cfg: &DiskConfig, g: usize) -> Result<GridDensity> {
    cfg.validate()?;
    check_grid_size(g)?;
    let s = RASTER_SUBSAMPLES;
    let gf = g as f64;
    let mut w = vec![0.0; g * g];
    for i in 0..g {
        for j in 0..g {
            let mut hits = 0usize;
            for a in 0..s {
                for b in 0..s {
                    let x = (j as f64 + (b as f64 + 0.5) / s as f64) / gf;
                    let y = (i as f64 + (a as f64 + 0.5) / s as f64) / gf;
                    if cfg.contains(x, y) {
                        hits += 1;
                    }
                }
            }
            w[i * g + j] = hits as f64;
        }
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptySupport);
    }
    GridDensity::from_unnormalized(g, w)
}

/// Centered Gaussians with covariance `A Aᵀ`, entries of `A` drawn from Unif[5, 15].
pub fn sample_gaussian_population(n: usize, d: usize, seed: u64) -> Result<Vec<GaussianMeasure>> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(5.0..15.0));
        // A singular draw has probability zero; skip it if round-off produces one.
        if let Ok(m) = GaussianMeasure::centered(&a * a.transpose()) {
            out.push(m);
        }
    }
    Ok(out)
}

/// Response of the synthetic regression study for a 2-D isotropic Gaussian
/// with mean `(m1, m2)` and standard deviation `sigma`.
pub fn regression_response(m1: f64, m2: f64, sigma: f64) -> f64 {
    (m1 - m2 * m2) / (1.0 + sigma)
}

/// Bounds of the regression-study generator.
pub const REGRESSION_MEAN_RANGE: (f64, f64) = (0.2, 0.8);
pub const REGRESSION_STD_RANGE: (f64, f64) = (1e-4, 4e-4);

/// Isotropic 2-D Gaussians with means in [0.2,0.8]² and standard deviation
/// in [1e-4, 4e-4], paired with their responses.
pub fn sample_regression_gaussians(n: usize, seed: u64) -> Result<Vec<(GaussianMeasure, f64)>> {
    let mut rng = seeded(seed);
    let (lo, hi) = REGRESSION_MEAN_RANGE;
    let (slo, shi) = REGRESSION_STD_RANGE;
    (0..n)
        .map(|_| {
            let m1 = rng.gen_range(lo..hi);
            let m2 = rng.gen_range(lo..hi);
            let sigma = rng.gen_range(slo..shi);
            let cov = DMatrix::identity(2, 2) * (sigma * sigma);
            let g = GaussianMeasure::new(DVector::from_vec(vec![m1, m2]), cov)?;
            Ok((g, regression_response(m1, m2, sigma)))
        })
        .collect()
}

/// Gaussians with uniform means in [0,1]^d and randomly rotated covariances
/// whose standard deviations along the principal axes lie in [0.1, 1].
pub fn sample_rotated_gaussians(n: usize, d: usize, seed: u64) -> Result<Vec<GaussianMeasure>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let mean = DVector::from_fn(d, |_, _| rng.gen_range(0.0..1.0));
            let stds = DVector::from_fn(d, |_, _| rng.gen_range(0.1..1.0));
            let diag = DMatrix::from_diagonal(&stds.map(|s| s * s));
            let cov = if d == 1 {
                diag
            } else {
                let u = random_orthogonal(d, &mut rng);
                &u * diag * u.transpose()
            };
            let cov = crate::linalg::symmetrize(&cov);
            GaussianMeasure::new(mean, cov)
        })
        .collect()
}

/// Random disk configurations with centers uniform in [R, 1−R]².
pub fn sample_disk_configs(n: usize, disks: usize, radius: f64, seed: u64) -> Result<Vec<DiskConfig>> {
    if !(radius > 0.0 && radius < 0.5) {
        return Err(Error::InvalidInput(format!("disk radius must lie in (0, 0.5), got {radius}")));
    }
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let centers = (0..disks)
                .map(|_| [rng.gen_range(radius..1.0 - radius), rng.gen_range(radius..1.0 - radius)])
                .collect();
            DiskConfig::new(radius, centers)
        })
        .collect()
}
