//! Chart-based numerical differential geometry engine.
//!
//! The engine represents a Riemannian manifold in a single coordinate chart
//! and rolls tangent-space curves onto it: developments, geodesics, parallel
//! transport and holonomy, variation fields of development families, the
//! curve-transfer construction between manifolds, and splitting checks for
//! manifolds carrying complementary parallel distributions.
//!
//! All numeric kernels are generic over the scalar type through the [`Real`]
//! trait (`f32` or `f64`); concrete `f64` aliases live at the crate root.

pub mod decomposition;
pub mod expr;
pub mod manifold;
pub mod tol;
pub mod transport;
pub mod variation;

use std::fmt::{Debug, Display, LowerExp};

/// Scalar type the whole engine is generic over.
///
/// `nalgebra::RealField` supplies field arithmetic and the elementary
/// functions; the extra num-traits bounds give literal conversion.
pub trait Real:
    nalgebra::RealField
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Copy
    + Default
    + Display
    + LowerExp
    + Debug
{
    /// Converts an `f64` literal, panicking only on non-finite input.
    fn lit(x: f64) -> Self {
        num_traits::FromPrimitive::from_f64(x).expect("finite literal")
    }
}

impl<T> Real for T where
    T: nalgebra::RealField
        + num_traits::FromPrimitive
        + num_traits::ToPrimitive
        + Copy
        + Default
        + Display
        + LowerExp
        + Debug
{
}

pub use expr::{DualValue, Expr};
pub use manifold::{
    orthonormal_basis, product, ChartManifold, ChartPoint, CurvatureTensor, PointClass, Tangent,
};
pub use transport::{
    develop, develop_with_frame, geodesic, loop_transport, parallel_transport, restart,
    transport_matrix, DevelopmentResult, DevelopmentState, DevelopmentStatus, IntegratorOpts,
    Method, SampledPath, TangentCurve,
};

/// Concrete double-precision aliases for the main engine types.
pub type ChartManifold64 = ChartManifold<f64>;
pub type ChartPoint64 = ChartPoint<f64>;
pub type Tangent64 = Tangent<f64>;
pub type TangentCurve64 = TangentCurve<f64>;
pub type DevelopmentResult64 = DevelopmentResult<f64>;
pub type IntegratorOpts64 = IntegratorOpts<f64>;
pub type Distribution64 = decomposition::Distribution<f64>;
pub type LinearIsometry64 = decomposition::LinearIsometry<f64>;
pub type VariationFamily64 = variation::VariationFamily<f64>;
pub type VariationField64 = variation::VariationField<f64>;
