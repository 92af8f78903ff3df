//! Gaussian-process regression over probability distributions.
//!
//! Each input distribution `μ` is embedded as the transport map from a shared
//! reference measure `μ̄` (typically the Wasserstein barycenter of the
//! inputs) onto `μ`. Those maps live in the Hilbert space `L²(μ̄)`, so any
//! radial positive definite function of their distance is a valid covariance
//! on distributions. The crate covers the transport computations (Gaussian
//! closed forms, assignment and entropic transport), barycenters, the kernel
//! construction, GP fitting and prediction, and a kernel-smoothing baseline.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::nonminimal_bool)]

pub mod barycenter;
pub mod baseline;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod measures;
pub mod optim;
pub mod ot;
pub mod rng;

pub use error::{Error, Result};
