//! Sampled paths, cubic Hermite interpolation and parallel transport
//! along arbitrary interior curves.

use nalgebra::{DMatrix, DVector};

use crate::manifold::ChartManifold;
use crate::Real;

use super::{rk, DevelopmentResult, IntegratorOpts, Method, TransportError};

/// Cubic Hermite interpolant through `(ts[i], values[i])` with
/// Catmull-Rom tangents (3-point one-sided at the ends).
#[derive(Clone, Debug)]
pub struct HermiteSeries<T> {
    ts: Vec<T>,
    values: Vec<DVector<T>>,
    tangents: Vec<DVector<T>>,
}

impl<T: Real> HermiteSeries<T> {
    pub fn new(ts: Vec<T>, values: Vec<DVector<T>>) -> Self {
        assert_eq!(ts.len(), values.len());
        assert!(ts.len() >= 2, "need at least two samples");
        for w in ts.windows(2) {
            assert!(w[1] > w[0], "sample times strictly increasing");
        }
        let m = ts.len();
        let mut tangents = Vec::with_capacity(m);
        for i in 0..m {
            let tangent = if i == 0 {
                three_point_derivative(&ts[0..3.min(m)], &values[0..3.min(m)], ts[0])
            } else if i == m - 1 {
                let s = m.saturating_sub(3);
                three_point_derivative(&ts[s..m], &values[s..m], ts[m - 1])
            } else {
                (&values[i + 1] - &values[i - 1]) / (ts[i + 1] - ts[i - 1])
            };
            tangents.push(tangent);
        }
        HermiteSeries {
            ts,
            values,
            tangents,
        }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn knots(&self) -> &[T] {
        &self.ts
    }

    fn interval_for(&self, select: T) -> usize {
        let m = self.ts.len();
        // first interval whose right end exceeds `select`
        let mut lo = 0usize;
        let mut hi = m - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.ts[mid + 1] <= select {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo.min(m - 2)
    }

    pub fn value(&self, t: T) -> DVector<T> {
        self.value_select(t, t)
    }

    /// Value at `t`, with the interval chosen by `select` (for knot-
    /// aligned integration the two differ only at interval ends).
    pub fn value_select(&self, t: T, select: T) -> DVector<T> {
        let i = self.interval_for(select);
        let (ta, tb) = (self.ts[i], self.ts[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let three = T::lit(3.0);
        let two = T::lit(2.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        &self.values[i] * h00
            + &self.tangents[i] * (h10 * h)
            + &self.values[i + 1] * h01
            + &self.tangents[i + 1] * (h11 * h)
    }

    pub fn derivative_select(&self, t: T, select: T) -> DVector<T> {
        let i = self.interval_for(select);
        let (ta, tb) = (self.ts[i], self.ts[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let s2 = s * s;
        let six = T::lit(6.0);
        let three = T::lit(3.0);
        let four = T::lit(4.0);
        let two = T::lit(2.0);
        let d00 = six * s2 - six * s;
        let d10 = three * s2 - four * s + T::one();
        let d01 = -six * s2 + six * s;
        let d11 = three * s2 - two * s;
        (&self.values[i] * d00
            + &self.tangents[i] * (d10 * h)
            + &self.values[i + 1] * d01
            + &self.tangents[i + 1] * (d11 * h))
            / h
    }
}

fn three_point_derivative<T: Real>(ts: &[T], values: &[DVector<T>], at: T) -> DVector<T> {
    if ts.len() == 2 {
        return (&values[1] - &values[0]) / (ts[1] - ts[0]);
    }
    // derivative of the Lagrange quadratic through three points
    let (t0, t1, t2) = (ts[0], ts[1], ts[2]);
    let w0 = (at + at - t1 - t2) / ((t0 - t1) * (t0 - t2));
    let w1 = (at + at - t0 - t2) / ((t1 - t0) * (t1 - t2));
    let w2 = (at + at - t0 - t1) / ((t2 - t0) * (t2 - t1));
    &values[0] * w0 + &values[1] * w1 + &values[2] * w2
}

/// An interior curve given by parameter/point samples, interpolated with
/// cubic Hermite polynomials.
#[derive(Clone, Debug)]
pub struct SampledPath<T> {
    series: HermiteSeries<T>,
}

impl<T: Real> SampledPath<T> {
    pub fn new(ts: Vec<T>, points: Vec<DVector<T>>) -> Result<Self, TransportError> {
        if ts.len() < 2 {
            return Err(TransportError::PathTooShort);
        }
        Ok(SampledPath {
            series: HermiteSeries::new(ts, points),
        })
    }

    /// The position samples of a development.
    pub fn from_development(dev: &DevelopmentResult<T>) -> Self {
        let ts = dev.samples.iter().map(|(t, _)| *t).collect();
        let points = dev.samples.iter().map(|(_, s)| s.x.clone()).collect();
        SampledPath {
            series: HermiteSeries::new(ts, points),
        }
    }

    pub fn dim(&self) -> usize {
        self.series.dim()
    }

    pub fn t_start(&self) -> T {
        self.series.ts[0]
    }

    pub fn t_end(&self) -> T {
        *self.series.ts.last().unwrap()
    }

    pub fn start(&self) -> &DVector<T> {
        &self.series.values[0]
    }

    pub fn end(&self) -> &DVector<T> {
        self.series.values.last().unwrap()
    }

    pub fn position(&self, t: T) -> DVector<T> {
        self.series.value(t)
    }

    /// Derivative of the interpolant.
    pub fn velocity(&self, t: T) -> DVector<T> {
        self.series.derivative_select(t, t)
    }

    pub fn knots(&self) -> &[T] {
        self.series.knots()
    }

    /// Same samples traversed backwards.
    pub fn reversed(&self) -> SampledPath<T> {
        let end = self.t_end();
        let start = self.t_start();
        let ts: Vec<T> = self
            .series
            .ts
            .iter()
            .rev()
            .map(|&t| end + start - t)
            .collect();
        let points: Vec<DVector<T>> = self.series.values.iter().rev().cloned().collect();
        SampledPath {
            series: HermiteSeries::new(ts, points),
        }
    }
}

/// Transport matrix along the path: coordinate components at the start
/// map to components at the end. Integrates the frame ODE column-wise
/// with RK4 on knot-aligned substeps.
pub fn transport_matrix<T: Real>(
    m: &ChartManifold<T>,
    path: &SampledPath<T>,
    opts: &IntegratorOpts<T>,
) -> Result<DMatrix<T>, TransportError> {
    transport_matrix_observed(m, path, opts, &mut |_, _| Ok(()))
}

/// Callback receiving the cumulative transport matrix at path knots.
pub type TransportObserver<'a, T> =
    &'a mut dyn FnMut(T, &DMatrix<T>) -> Result<(), TransportError>;

/// As [`transport_matrix`], invoking `observe` with the cumulative
/// transport at the path start and after every knot.
pub fn transport_matrix_observed<T: Real>(
    m: &ChartManifold<T>,
    path: &SampledPath<T>,
    opts: &IntegratorOpts<T>,
    observe: TransportObserver<'_, T>,
) -> Result<DMatrix<T>, TransportError> {
    let n = m.dim();
    if path.dim() != n {
        return Err(TransportError::DimensionMismatch {
            expected: n,
            got: path.dim(),
        });
    }
    if m.is_flat() {
        let id = DMatrix::identity(n, n);
        for &t in path.series.knots() {
            observe(t, &id)?;
        }
        return Ok(id);
    }
    let h_target = match opts.method {
        Method::Rk4 | Method::Rkf45 { .. } => opts.step,
    };
    if h_target.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(TransportError::BadStep);
    }

    // Flattened column-major state of the transported matrix.
    let mut y = DVector::<T>::zeros(n * n);
    for c in 0..n {
        y[c * n + c] = T::one();
    }
    observe(path.t_start(), &DMatrix::identity(n, n))?;

    let knots = path.series.knots().to_vec();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let select = (a + b) * T::lit(0.5);
        let span = b - a;
        let n_steps = (span / h_target)
            .ceil()
            .to_usize()
            .unwrap_or(1)
            .clamp(1, opts.max_steps);
        let h = span / T::from_usize(n_steps).unwrap();
        let rhs = |t: T, y: &DVector<T>| -> Result<DVector<T>, TransportError> {
            let x = path.series.value_select(t, select);
            let vel = path.series.derivative_select(t, select);
            let gamma = m.christoffel_at_coords(x.as_slice())?;
            // a_mat[j][k] = Σ_l Γ^j_{kl} vel^l ; each column c obeys c' = −a·c
            let mut a_mat = DMatrix::zeros(n, n);
            for j in 0..n {
                for k in 0..n {
                    let mut acc = T::zero();
                    for l in 0..n {
                        acc += gamma[j][(k, l)] * vel[l];
                    }
                    a_mat[(j, k)] = acc;
                }
            }
            let mut dy = DVector::zeros(n * n);
            for c in 0..n {
                for j in 0..n {
                    let mut acc = T::zero();
                    for k in 0..n {
                        acc += a_mat[(j, k)] * y[c * n + k];
                    }
                    dy[c * n + j] = -acc;
                }
            }
            Ok(dy)
        };
        for k in 0..n_steps {
            let t0 = a + h * T::from_usize(k).unwrap();
            y = rk::rk4_step(&rhs, t0, &y, h)?;
        }
        observe(b, &DMatrix::from_fn(n, n, |j, c| y[c * n + j]))?;
    }

    Ok(DMatrix::from_fn(n, n, |j, c| y[c * n + j]))
}

/// Parallel transport of `x0` along the sampled path; linear in `x0` and
/// g-norm preserving up to integrator drift.
pub fn parallel_transport<T: Real>(
    m: &ChartManifold<T>,
    path: &SampledPath<T>,
    x0: &DVector<T>,
    opts: &IntegratorOpts<T>,
) -> Result<DVector<T>, TransportError> {
    Ok(transport_matrix(m, path, opts)? * x0)
}

/// Transport matrix around a closed loop made of consecutive legs.
pub fn loop_transport<T: Real>(
    m: &ChartManifold<T>,
    legs: &[&SampledPath<T>],
    opts: &IntegratorOpts<T>,
) -> Result<DMatrix<T>, TransportError> {
    let n = m.dim();
    let mut acc = DMatrix::identity(n, n);
    for leg in legs {
        acc = transport_matrix(m, leg, opts)? * acc;
    }
    Ok(acc)
}
