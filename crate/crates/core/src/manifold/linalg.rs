//! Small dense linear-algebra helpers shared across the engine.

use nalgebra::{DMatrix, DVector};

use crate::Real;

/// Operator 2-norm (largest singular value).
pub fn op_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone().svd(false, false).singular_values[0]
}

/// 2-norm condition number; `None` when numerically singular.
pub fn cond_2<T: Real>(m: &DMatrix<T>) -> Option<T> {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv[0];
    let smin = sv[sv.len() - 1];
    if smin == T::zero() {
        None
    } else {
        Some(smax / smin)
    }
}

/// Largest absolute entry.
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
}

pub fn max_abs_vec<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// ‖m − I‖₂.
pub fn deviation_from_identity<T: Real>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    op_norm(&(m - DMatrix::<T>::identity(n, n)))
}
