//! Fixed-step RK4 and embedded Fehlberg 4(5) kernels on flat state vectors.

use nalgebra::DVector;

use crate::Real;

use super::TransportError;

pub(crate) type Rhs<'a, T> = dyn Fn(T, &DVector<T>) -> Result<DVector<T>, TransportError> + 'a;

/// One classical RK4 step of size `h` from `(t, y)`.
pub(crate) fn rk4_step<T: Real>(
    f: &Rhs<'_, T>,
    t: T,
    y: &DVector<T>,
    h: T,
) -> Result<DVector<T>, TransportError> {
    let half = T::lit(0.5);
    let sixth = T::lit(1.0 / 6.0);
    let two = T::lit(2.0);
    let k1 = f(t, y)?;
    let k2 = f(t + half * h, &(y + &k1 * (half * h)))?;
    let k3 = f(t + half * h, &(y + &k2 * (half * h)))?;
    let k4 = f(t + h, &(y + &k3 * h))?;
    Ok(y + (k1 + k2 * two + k3 * two + k4) * (sixth * h))
}

/// One Fehlberg 4(5) step: returns the fifth-order solution and an
/// estimate of the local error.
pub(crate) fn rkf45_step<T: Real>(
    f: &Rhs<'_, T>,
    t: T,
    y: &DVector<T>,
    h: T,
) -> Result<(DVector<T>, T), TransportError> {
    let c = |v: f64| T::lit(v);
    let k1 = f(t, y)?;
    let k2 = f(t + c(0.25) * h, &(y + &k1 * (c(0.25) * h)))?;
    let k3 = f(
        t + c(3.0 / 8.0) * h,
        &(y + (&k1 * c(3.0 / 32.0) + &k2 * c(9.0 / 32.0)) * h),
    )?;
    let k4 = f(
        t + c(12.0 / 13.0) * h,
        &(y + (&k1 * c(1932.0 / 2197.0) - &k2 * c(7200.0 / 2197.0) + &k3 * c(7296.0 / 2197.0))
            * h),
    )?;
    let k5 = f(
        t + h,
        &(y + (&k1 * c(439.0 / 216.0) - &k2 * c(8.0) + &k3 * c(3680.0 / 513.0)
            - &k4 * c(845.0 / 4104.0))
            * h),
    )?;
    let k6 = f(
        t + c(0.5) * h,
        &(y + (-&k1 * c(8.0 / 27.0) + &k2 * c(2.0) - &k3 * c(3544.0 / 2565.0)
            + &k4 * c(1859.0 / 4104.0)
            - &k5 * c(11.0 / 40.0))
            * h),
    )?;
    let y5 = y + (&k1 * c(16.0 / 135.0)
        + &k3 * c(6656.0 / 12825.0)
        + &k4 * c(28561.0 / 56430.0)
        - &k5 * c(9.0 / 50.0)
        + &k6 * c(2.0 / 55.0))
        * h;
    let y4 = y + (&k1 * c(25.0 / 216.0) + &k3 * c(1408.0 / 2565.0) + &k4 * c(2197.0 / 4104.0)
        - &k5 * c(0.2))
        * h;
    let err = (&y5 - &y4)
        .iter()
        .fold(T::zero(), |acc, &e| acc.max(e.abs()));
    Ok((y5, err))
}
