//! Default tolerances and numerical parameters used by the engine.
//!
//! Values here are the ones the engine itself consults; test-side
//! tolerances live next to the tests that assert them.

/// Default fixed integrator step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Boundary events are located by bisection to this accuracy in `t`.
pub const BOUNDARY_BISECT_TOL: f64 = 1e-12;

/// |b(x)| below this counts as "on the boundary" when classifying points.
pub const BOUNDARY_CLASS_TOL: f64 = 1e-10;

/// Frame condition number above which a development aborts as degenerate.
pub const FRAME_COND_LIMIT: f64 = 1e12;

/// Central-difference step for curvature (finite differences of exact
/// Christoffel symbols), scaled by coordinate magnitude.
pub const CURVATURE_FD_STEP: f64 = 1e-5;

/// Central-difference step in the family parameter `u` for the mixed
/// derivative feeding the variation system.
pub const FAMILY_FD_STEP: f64 = 1e-5;

/// Projector fields must satisfy P² = P, g-self-adjointness and trace
/// rank to this accuracy at every sampled point.
pub const PROJECTOR_TOL: f64 = 1e-10;

/// Orthonormal bases supplied to variation families must have Gram
/// matrix within this distance of the identity.
pub const BASIS_ORTHO_TOL: f64 = 1e-12;

/// Complementarity requirement P1 + P2 = I for tangent splitting.
pub const COMPLEMENT_TOL: f64 = 1e-10;

/// Steering / family curves must lie in their distribution to this
/// accuracy where the contract demands membership.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

/// Path-tangency requirement |(I - P)γ'|_g for transport-invariance checks.
pub const TANGENCY_TOL: f64 = 1e-8;

/// Fixed-endpoint homotopies must pin both ends to this accuracy.
pub const ENDPOINT_FIX_TOL: f64 = 1e-8;
