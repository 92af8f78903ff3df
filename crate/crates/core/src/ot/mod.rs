//! Optimal transport: Gaussian closed forms, assignment-based transport for
//! empirical samples and entropic transport for grid densities.

pub mod assignment;
pub mod entropic;
pub mod gaussian;

pub use assignment::{assignment_ot, solve_assignment, TransportAssignment};
pub use entropic::{
    inverse_grid_map, round_plan_to_map, sinkhorn_plan, sinkhorn_with_cost, CouplingPlan, GridCoupling,
    SinkhornOutcome, DEFAULT_LAMBDA, SINKHORN_MAX_ITER, SINKHORN_TOL,
};
pub use gaussian::{
    affine_l2_distance_squared, gaussian_transport_map, gaussian_w2, gaussian_w2_squared, inverse_affine_map,
    map_l2_distance_gaussian, AffineMap, LinearMap, TransportMapPair,
};
