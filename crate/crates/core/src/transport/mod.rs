//! Development of tangent-space curves: the coupled ODE system for the
//! chart position x^i(t) and the parallel frame x_i^j(t).
//!
//! The frame rows are the parallel extensions E_i of the initial basis
//! vectors; the position obeys dx^i/dt = v^j x_j^i, the frame obeys the
//! parallel-transport equation against the instantaneous velocity. A
//! development is integrated with fixed-step RK4 (or embedded RKF45
//! behind an option), stops at the boundary level set located by
//! bisection, and reports frame-Gram drift as a diagnostic, never
//! correcting it silently.

mod path;
pub(crate) mod rk;

pub use path::{
    loop_transport, parallel_transport, transport_matrix, transport_matrix_observed,
    HermiteSeries, SampledPath,
};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::manifold::{linalg, ChartManifold, ChartPoint, GeometryError, PointClass};
use crate::{tol, Real};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("development base point must be interior, found {0:?}")]
    BaseNotInterior(PointClass),
    #[error("integrator step must be positive")]
    BadStep,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time {0} outside the completed trajectory")]
    TimeBeyondTrajectory(f64),
    #[error("step budget exhausted ({0} steps)")]
    MaxSteps(usize),
    #[error("a sampled path needs at least two samples")]
    PathTooShort,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Integration method. RKF45 adapts its step against the given
/// tolerances; RK4 subdivides each smooth segment uniformly with steps
/// no larger than `IntegratorOpts::step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method<T> {
    Rk4,
    Rkf45 { rel_tol: T, abs_tol: T },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOpts<T> {
    pub step: T,
    pub method: Method<T>,
    pub max_steps: usize,
}

impl<T: Real> Default for IntegratorOpts<T> {
    fn default() -> Self {
        IntegratorOpts {
            step: T::lit(tol::DEFAULT_STEP),
            method: Method::Rk4,
            max_steps: 20_000_000,
        }
    }
}

impl<T: Real> IntegratorOpts<T> {
    pub fn with_step(step: T) -> Self {
        IntegratorOpts {
            step,
            ..Default::default()
        }
    }
}

// ---------------------------------------------------------------------
// Tangent curves
// ---------------------------------------------------------------------

/// Shape of a curve t ↦ v(t) in a fixed tangent space.
#[derive(Clone, Debug)]
pub enum CurveShape<T> {
    Constant(DVector<T>),
    /// One expression in `t` per component.
    Exprs(Vec<Expr>),
    /// Piecewise constant: piece `i` covers `[ends[i-1], ends[i])`.
    Piecewise { ends: Vec<T>, values: Vec<DVector<T>> },
    /// Cubic Hermite interpolation of samples.
    Hermite(HermiteSeries<T>),
    /// matrix · inner(t) — used for frame-transported tail curves and
    /// linear isometry images.
    Transformed {
        matrix: DMatrix<T>,
        inner: Box<CurveShape<T>>,
    },
    /// inner(offset + t) — the tail v_{t0}.
    Shifted { offset: T, inner: Box<CurveShape<T>> },
    Sum(Box<CurveShape<T>>, Box<CurveShape<T>>),
}

impl<T: Real> CurveShape<T> {
    fn dim(&self) -> usize {
        match self {
            CurveShape::Constant(v) => v.len(),
            CurveShape::Exprs(es) => es.len(),
            CurveShape::Piecewise { values, .. } => values[0].len(),
            CurveShape::Hermite(h) => h.dim(),
            CurveShape::Transformed { matrix, .. } => matrix.nrows(),
            CurveShape::Shifted { inner, .. } => inner.dim(),
            CurveShape::Sum(a, _) => a.dim(),
        }
    }

    /// Interior knot/junction times where smoothness may drop.
    fn breakpoints(&self, into: &mut Vec<T>, offset: T) {
        match self {
            CurveShape::Constant(_) | CurveShape::Exprs(_) => {}
            CurveShape::Piecewise { ends, .. } => {
                into.extend(ends.iter().map(|&e| e - offset));
            }
            CurveShape::Hermite(h) => into.extend(h.knots().iter().map(|&k| k - offset)),
            CurveShape::Transformed { inner, .. } => inner.breakpoints(into, offset),
            CurveShape::Shifted { offset: o, inner } => inner.breakpoints(into, offset + *o),
            CurveShape::Sum(a, b) => {
                a.breakpoints(into, offset);
                b.breakpoints(into, offset);
            }
        }
    }

    /// Value at `t`; when `t` sits on a junction, `select` (a time
    /// strictly inside the active segment) picks the piece.
    fn value_at(&self, t: T, select: T) -> Result<DVector<T>, EvalError> {
        match self {
            CurveShape::Constant(v) => Ok(v.clone()),
            CurveShape::Exprs(es) => {
                let mut out = DVector::zeros(es.len());
                for (i, e) in es.iter().enumerate() {
                    out[i] = e.eval(&[], t)?;
                }
                Ok(out)
            }
            CurveShape::Piecewise { ends, values } => {
                let mut idx = ends.len() - 1;
                for (i, &e) in ends.iter().enumerate() {
                    if select < e {
                        idx = i;
                        break;
                    }
                }
                Ok(values[idx].clone())
            }
            CurveShape::Hermite(h) => Ok(h.value_select(t, select)),
            CurveShape::Transformed { matrix, inner } => {
                Ok(matrix * inner.value_at(t, select)?)
            }
            CurveShape::Shifted { offset, inner } => {
                inner.value_at(t + *offset, select + *offset)
            }
            CurveShape::Sum(a, b) => Ok(a.value_at(t, select)? + b.value_at(t, select)?),
        }
    }
}

/// A curve v(t) in the tangent space at `base`, defined on [0, horizon].
///
/// Components are read against the coordinate basis at `base` (or against
/// the explicit initial frame when developed through
/// [`develop_with_frame`]).
#[derive(Clone, Debug)]
pub struct TangentCurve<T> {
    pub base: ChartPoint<T>,
    horizon: T,
    shape: CurveShape<T>,
}

impl<T: Real> TangentCurve<T> {
    pub fn new(base: ChartPoint<T>, shape: CurveShape<T>, horizon: T) -> Self {
        assert_eq!(base.dim(), shape.dim(), "curve dimension matches base");
        assert!(horizon >= T::zero(), "horizon must be non-negative");
        TangentCurve {
            base,
            horizon,
            shape,
        }
    }

    pub fn constant(base: ChartPoint<T>, value: impl Into<Vec<T>>, horizon: T) -> Self {
        let v = DVector::from_vec(value.into());
        TangentCurve::new(base, CurveShape::Constant(v), horizon)
    }

    pub fn from_exprs(base: ChartPoint<T>, components: Vec<Expr>, horizon: T) -> Self {
        for c in &components {
            assert_eq!(c.n_vars(), 0, "curve components are functions of t only");
        }
        TangentCurve::new(base, CurveShape::Exprs(components), horizon)
    }

    /// Piece `i` holds `values[i]` on `[ends[i-1], ends[i])`; the horizon
    /// is the last end.
    pub fn piecewise_constant(base: ChartPoint<T>, pieces: Vec<(T, Vec<T>)>) -> Self {
        assert!(!pieces.is_empty());
        let mut ends = Vec::new();
        let mut values = Vec::new();
        let mut prev = T::zero();
        for (end, value) in pieces {
            assert!(end > prev, "piece ends strictly increasing");
            prev = end;
            ends.push(end);
            values.push(DVector::from_vec(value));
        }
        let horizon = *ends.last().unwrap();
        TangentCurve::new(base, CurveShape::Piecewise { ends, values }, horizon)
    }

    pub fn from_samples(base: ChartPoint<T>, ts: Vec<T>, values: Vec<DVector<T>>) -> Self {
        assert!(
            !ts.is_empty() && ts[0] == T::zero(),
            "sampled curves start at t = 0"
        );
        let series = HermiteSeries::new(ts, values);
        let horizon = *series.knots().last().unwrap();
        TangentCurve::new(base, CurveShape::Hermite(series), horizon)
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn value(&self, t: T) -> Result<DVector<T>, EvalError> {
        self.shape.value_at(t, t)
    }

    /// Same value curve read in the tangent space at another point (the
    /// caller supplies the meaning: transfer constructions pair this
    /// with an initial frame).
    pub fn with_base(&self, base: ChartPoint<T>) -> TangentCurve<T> {
        assert_eq!(base.dim(), self.dim());
        TangentCurve {
            base,
            horizon: self.horizon,
            shape: self.shape.clone(),
        }
    }

    /// Same curve restricted to [0, horizon].
    pub fn truncated(&self, horizon: T) -> TangentCurve<T> {
        assert!(horizon > T::zero() && horizon <= self.horizon);
        TangentCurve {
            base: self.base.clone(),
            horizon,
            shape: self.shape.clone(),
        }
    }

    /// The tail v_{t0}(s) = v(t0 + s), still a curve in the original
    /// tangent space (length zero when t0 is the horizon).
    pub fn tail(&self, t0: T) -> TangentCurve<T> {
        assert!(t0 >= T::zero() && t0 <= self.horizon);
        TangentCurve {
            base: self.base.clone(),
            horizon: self.horizon - t0,
            shape: CurveShape::Shifted {
                offset: t0,
                inner: Box::new(self.shape.clone()),
            },
        }
    }

    /// matrix · v(t) re-based at `base` — a linear map applied pointwise.
    pub fn transformed(&self, base: ChartPoint<T>, matrix: DMatrix<T>) -> TangentCurve<T> {
        assert_eq!(matrix.ncols(), self.dim());
        assert_eq!(matrix.nrows(), base.dim());
        TangentCurve {
            base,
            horizon: self.horizon,
            shape: CurveShape::Transformed {
                matrix,
                inner: Box::new(self.shape.clone()),
            },
        }
    }

    /// Pointwise sum with another curve in the same tangent space.
    pub fn plus(&self, other: &TangentCurve<T>) -> TangentCurve<T> {
        assert_eq!(self.base, other.base, "curves share a tangent space");
        TangentCurve {
            base: self.base.clone(),
            horizon: self.horizon.min(other.horizon),
            shape: CurveShape::Sum(
                Box::new(self.shape.clone()),
                Box::new(other.shape.clone()),
            ),
        }
    }

    /// Sorted interior breakpoints in (0, horizon).
    fn interior_breakpoints(&self) -> Vec<T> {
        let mut pts = Vec::new();
        self.shape.breakpoints(&mut pts, T::zero());
        let eps = T::lit(1e-12);
        pts.retain(|&b| b > eps && b < self.horizon - eps);
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        pts.dedup_by(|a, b| (*a - *b).abs() <= eps);
        pts
    }
}

// ---------------------------------------------------------------------
// Development results
// ---------------------------------------------------------------------

/// Position and parallel frame at one time. Row `i` of `frame` holds the
/// chart components of the parallel vector E_i.
#[derive(Clone, Debug, PartialEq)]
pub struct DevelopmentState<T> {
    pub x: DVector<T>,
    pub frame: DMatrix<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DevelopmentStatus<T> {
    Completed,
    HitBoundary(T),
    LeftChart(T),
    FrameDegenerate(T),
}

impl<T> DevelopmentStatus<T> {
    pub fn is_completed(&self) -> bool {
        matches!(self, DevelopmentStatus::Completed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics<T> {
    /// max over samples of the largest entry drift of the frame's g-Gram
    /// matrix from its initial value.
    pub max_gram_drift: T,
    /// max frame condition number seen along the trajectory.
    pub max_frame_cond: T,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct DevelopmentResult<T> {
    pub samples: Vec<(T, DevelopmentState<T>)>,
    /// Curve value at each sample time (components against the initial
    /// frame) — the v_γ of the transfer construction.
    pub v_samples: Vec<DVector<T>>,
    pub status: DevelopmentStatus<T>,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Real> DevelopmentResult<T> {
    pub fn start(&self) -> &DevelopmentState<T> {
        &self.samples[0].1
    }

    pub fn end_time(&self) -> T {
        self.samples.last().unwrap().0
    }

    pub fn endpoint(&self) -> &DevelopmentState<T> {
        &self.samples.last().unwrap().1
    }

    /// State at an arbitrary time inside the completed interval, by
    /// 4-point Lagrange interpolation of the stored samples (exact on
    /// sample hits).
    pub fn state_at(&self, t: T) -> Result<DevelopmentState<T>, TransportError> {
        let end = self.end_time();
        let eps = T::lit(1e-12) * (T::one() + t.abs());
        if t < -eps || t > end + eps {
            return Err(TransportError::TimeBeyondTrajectory(
                t.to_f64().unwrap_or(f64::NAN),
            ));
        }
        // partition: first index with sample time > t
        let mut lo = 0usize;
        let mut hi = self.samples.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.samples[mid].0 <= t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let k = lo.saturating_sub(1);
        if (self.samples[k].0 - t).abs() <= eps {
            return Ok(self.samples[k].1.clone());
        }
        if k + 1 < self.samples.len() && (self.samples[k + 1].0 - t).abs() <= eps {
            return Ok(self.samples[k + 1].1.clone());
        }
        let first = k.saturating_sub(1).min(self.samples.len().saturating_sub(4));
        let window = &self.samples[first..(first + 4).min(self.samples.len())];
        let n = window[0].1.x.len();
        let mut x = DVector::zeros(n);
        let mut frame = DMatrix::zeros(n, n);
        for (i, (ti, state)) in window.iter().enumerate() {
            let mut weight = T::one();
            for (j, (tj, _)) in window.iter().enumerate() {
                if i != j {
                    weight *= (t - *tj) / (*ti - *tj);
                }
            }
            x += &state.x * weight;
            frame += &state.frame * weight;
        }
        Ok(DevelopmentState { x, frame })
    }

    /// Transport matrix from start to end: components at the start map to
    /// components at the end through the frame, c ↦ Fᵀ(end) F(0)⁻ᵀ c.
    pub fn transport_to_end(&self) -> DMatrix<T> {
        let f0t = self.start().frame.transpose();
        let f1t = self.endpoint().frame.transpose();
        let inv = f0t.try_inverse().expect("initial frame invertible");
        f1t * inv
    }
}

// ---------------------------------------------------------------------
// The development solver
// ---------------------------------------------------------------------

/// Development of `v` from its base point with the coordinate basis as
/// initial frame: samples[0].frame is exactly the identity.
pub fn develop<T: Real>(
    m: &ChartManifold<T>,
    v: &TangentCurve<T>,
    opts: &IntegratorOpts<T>,
) -> Result<DevelopmentResult<T>, TransportError> {
    let n = m.dim();
    develop_with_frame(m, v, &DMatrix::identity(n, n), opts)
}

/// Development with an explicit initial frame: the curve components are
/// read against the rows of `frame0`.
pub fn develop_with_frame<T: Real>(
    m: &ChartManifold<T>,
    v: &TangentCurve<T>,
    frame0: &DMatrix<T>,
    opts: &IntegratorOpts<T>,
) -> Result<DevelopmentResult<T>, TransportError> {
    let n = m.dim();
    if v.base.dim() != n {
        return Err(TransportError::DimensionMismatch {
            expected: n,
            got: v.base.dim(),
        });
    }
    if opts.step.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(TransportError::BadStep);
    }
    let class = m.inside(&v.base);
    if class != PointClass::Interior {
        return Err(TransportError::BaseNotInterior(class));
    }

    let state_len = n + n * n;
    let mut y = DVector::zeros(state_len);
    for i in 0..n {
        y[i] = v.base.coords[i];
    }
    for i in 0..n {
        for j in 0..n {
            y[n + i * n + j] = frame0[(i, j)];
        }
    }

    let g0 = m.metric_at_coords(v.base.coords.as_slice())?;
    let gram0 = frame0 * &g0 * frame0.transpose();

    let mut run = Run {
        m,
        v,
        opts,
        n,
        gram0,
        samples: vec![(T::zero(), unpack(n, &y))],
        v_samples: Vec::new(),
        status: DevelopmentStatus::Completed,
        max_gram_drift: T::zero(),
        max_frame_cond: linalg::cond_2(frame0).unwrap_or(T::lit(f64::INFINITY)),
        steps: 0,
    };

    // t = 0 curve value, selected from inside the first segment.
    let bps = v.interior_breakpoints();
    let first_end = bps.first().copied().unwrap_or(v.horizon);
    run.v_samples
        .push(v.shape.value_at(T::zero(), first_end * T::lit(0.5))?);

    let mut t = T::zero();
    let mut segment_start = T::zero();
    for end in bps.into_iter().chain(std::iter::once(v.horizon)) {
        let done = run.integrate_segment(&mut y, segment_start, end)?;
        if done {
            return Ok(run.finish());
        }
        segment_start = end;
        t = end;
    }
    debug_assert!(t == v.horizon);
    Ok(run.finish())
}

struct Run<'a, T: Real> {
    m: &'a ChartManifold<T>,
    v: &'a TangentCurve<T>,
    opts: &'a IntegratorOpts<T>,
    n: usize,
    gram0: DMatrix<T>,
    samples: Vec<(T, DevelopmentState<T>)>,
    v_samples: Vec<DVector<T>>,
    status: DevelopmentStatus<T>,
    max_gram_drift: T,
    max_frame_cond: T,
    steps: usize,
}

fn unpack<T: Real>(n: usize, y: &DVector<T>) -> DevelopmentState<T> {
    let x = DVector::from_fn(n, |i, _| y[i]);
    let frame = DMatrix::from_fn(n, n, |i, j| y[n + i * n + j]);
    DevelopmentState { x, frame }
}

/// Right-hand side of the coupled development system on the flat state
/// [x | frame rows].
fn dev_rhs<'a, T: Real>(
    m: &'a ChartManifold<T>,
    v: &'a TangentCurve<T>,
    n: usize,
    select: T,
) -> impl Fn(T, &DVector<T>) -> Result<DVector<T>, TransportError> + 'a {
    let flat = m.is_flat();
    move |t: T, y: &DVector<T>| {
        let x: Vec<T> = (0..n).map(|i| y[i]).collect();
        if !m.in_domain(&x) {
            return Err(TransportError::Geometry(GeometryError::OutOfDomain(
                format!("{:?}", x),
            )));
        }
        let vv = v.shape.value_at(t, select)?;
        let mut dy = DVector::zeros(n + n * n);
        // w^j = Σ_i v^i x_i^j  (coordinate velocity)
        let mut w = vec![T::zero(); n];
        for j in 0..n {
            let mut acc = T::zero();
            for i in 0..n {
                acc += vv[i] * y[n + i * n + j];
            }
            w[j] = acc;
            dy[j] = acc;
        }
        if !flat {
            let gamma = m.christoffel_at_coords(&x)?;
            // a[j][k] = Σ_l Γ^j_{kl} w^l ; dF = −F·aᵀ row-wise
            for i in 0..n {
                for j in 0..n {
                    let mut acc = T::zero();
                    for k in 0..n {
                        let mut al = T::zero();
                        for l in 0..n {
                            al += gamma[j][(k, l)] * w[l];
                        }
                        acc += y[n + i * n + k] * al;
                    }
                    dy[n + i * n + j] = -acc;
                }
            }
        }
        Ok(dy)
    }
}

impl<'a, T: Real> Run<'a, T> {
    /// Integrates one smooth segment. Returns true when an event stopped
    /// the run.
    fn integrate_segment(
        &mut self,
        y: &mut DVector<T>,
        a: T,
        b: T,
    ) -> Result<bool, TransportError> {
        if b <= a {
            return Ok(false);
        }
        let select = (a + b) * T::lit(0.5);
        let rhs = dev_rhs(self.m, self.v, self.n, select);
        match self.opts.method {
            Method::Rk4 => {
                let span = b - a;
                let n_steps = (span / self.opts.step)
                    .ceil()
                    .to_usize()
                    .unwrap_or(usize::MAX)
                    .max(1);
                if n_steps == usize::MAX {
                    return Err(TransportError::MaxSteps(self.opts.max_steps));
                }
                let h = span / T::from_usize(n_steps).unwrap();
                for k in 0..n_steps {
                    let t0 = a + h * T::from_usize(k).unwrap();
                    let t1 = if k + 1 == n_steps {
                        b
                    } else {
                        a + h * T::from_usize(k + 1).unwrap()
                    };
                    let stepped = rk::rk4_step(&rhs, t0, y, t1 - t0);
                    if self.accept(&rhs, y, t0, t1, stepped, select)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Method::Rkf45 { rel_tol, abs_tol } => {
                let mut t = a;
                let mut h = self.opts.step.min(b - a);
                while t < b - T::lit(1e-14) * (T::one() + b.abs()) {
                    h = h.min(b - t);
                    let (y5, err) = rk::rkf45_step(&rhs, t, y, h)?;
                    let scale = abs_tol + rel_tol * linalg::max_abs_vec(y);
                    if err > scale && h > T::lit(1e-12) {
                        let shrink = T::lit(0.9)
                            * (scale / err).powf(T::lit(0.2)).max(T::lit(0.1));
                        h *= shrink;
                        continue;
                    }
                    let t1 = (t + h).min(b);
                    if self.accept(&rhs, y, t, t1, Ok(y5), select)? {
                        return Ok(true);
                    }
                    t = t1;
                    if err > T::zero() {
                        let grow = T::lit(0.9) * (scale / err).powf(T::lit(0.2));
                        h *= grow.clamp(T::lit(0.1), T::lit(5.0));
                    } else {
                        h *= T::lit(5.0);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Event checks for one proposed step; pushes the accepted sample.
    /// Returns true when the run stops here.
    fn accept(
        &mut self,
        rhs: &rk::Rhs<'_, T>,
        y: &mut DVector<T>,
        t0: T,
        t1: T,
        stepped: Result<DVector<T>, TransportError>,
        select: T,
    ) -> Result<bool, TransportError> {
        self.steps += 1;
        if self.steps > self.opts.max_steps {
            return Err(TransportError::MaxSteps(self.opts.max_steps));
        }
        let h = t1 - t0;
        let n = self.n;

        let y1 = match stepped {
            Ok(y1) => y1,
            Err(_) => {
                // The full step failed to evaluate: locate the chart exit.
                let t_exit = self.bisect_feasible(rhs, y, t0, h);
                let y_exit = self.partial(rhs, y, t0, t_exit - t0);
                self.push_sample(t_exit, &y_exit, select)?;
                *y = y_exit;
                self.status = DevelopmentStatus::LeftChart(t_exit);
                return Ok(true);
            }
        };

        let x1: Vec<T> = (0..n).map(|i| y1[i]).collect();
        if !self.m.in_domain(&x1) {
            let t_exit = self.bisect_feasible(rhs, y, t0, h);
            let y_exit = self.partial(rhs, y, t0, t_exit - t0);
            self.push_sample(t_exit, &y_exit, select)?;
            *y = y_exit;
            self.status = DevelopmentStatus::LeftChart(t_exit);
            return Ok(true);
        }

        if let Some(b1) = self.m.boundary_value(&x1) {
            let b1 = b1?;
            if b1 <= T::zero() {
                let (t_star, y_star) = self.bisect_boundary(rhs, y, t0, h, t1, y1.clone());
                self.push_sample(t_star, &y_star, select)?;
                *y = y_star;
                self.status = DevelopmentStatus::HitBoundary(t_star);
                return Ok(true);
            }
        }

        let frame = DMatrix::from_fn(n, n, |i, j| y1[n + i * n + j]);
        let cond = linalg::cond_2(&frame).unwrap_or(T::lit(f64::INFINITY));
        self.max_frame_cond = self.max_frame_cond.max(cond);
        if cond > T::lit(tol::FRAME_COND_LIMIT) {
            self.push_sample(t1, &y1, select)?;
            *y = y1;
            self.status = DevelopmentStatus::FrameDegenerate(t1);
            return Ok(true);
        }

        self.push_sample(t1, &y1, select)?;
        *y = y1;
        Ok(false)
    }

    fn partial(&self, rhs: &rk::Rhs<'_, T>, y: &DVector<T>, t0: T, s: T) -> DVector<T> {
        if s <= T::zero() {
            return y.clone();
        }
        rk::rk4_step(rhs, t0, y, s).unwrap_or_else(|_| y.clone())
    }

    /// Largest time in [t0, t0+h] whose partial step stays evaluable and
    /// inside the chart domain.
    fn bisect_feasible(&self, rhs: &rk::Rhs<'_, T>, y: &DVector<T>, t0: T, h: T) -> T {
        let n = self.n;
        let ok = |s: T| -> bool {
            if s <= T::zero() {
                return true;
            }
            match rk::rk4_step(rhs, t0, y, s) {
                Err(_) => false,
                Ok(ys) => {
                    let xs: Vec<T> = (0..n).map(|i| ys[i]).collect();
                    self.m.in_domain(&xs)
                }
            }
        };
        let mut lo = T::zero();
        let mut hi = h;
        for _ in 0..64 {
            if hi - lo <= T::lit(tol::BOUNDARY_BISECT_TOL) {
                break;
            }
            let mid = (lo + hi) * T::lit(0.5);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        t0 + lo
    }

    /// Boundary crossing time within the step, bisected to 1e-12 in t.
    fn bisect_boundary(
        &self,
        rhs: &rk::Rhs<'_, T>,
        y: &DVector<T>,
        t0: T,
        h: T,
        t1: T,
        y1: DVector<T>,
    ) -> (T, DVector<T>) {
        let n = self.n;
        let bval = |ys: &DVector<T>| -> T {
            let xs: Vec<T> = (0..n).map(|i| ys[i]).collect();
            match self.m.boundary_value(&xs) {
                Some(Ok(b)) => b,
                // Treat evaluation failure as the far side.
                _ => -T::one(),
            }
        };
        let mut lo = T::zero();
        let mut hi = h;
        let mut y_hi = y1;
        for _ in 0..64 {
            if hi - lo <= T::lit(tol::BOUNDARY_BISECT_TOL) {
                break;
            }
            let mid = (lo + hi) * T::lit(0.5);
            let y_mid = self.partial(rhs, y, t0, mid);
            if bval(&y_mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
                y_hi = y_mid;
            }
        }
        let _ = t1;
        (t0 + hi, y_hi)
    }

    fn push_sample(&mut self, t: T, y: &DVector<T>, select: T) -> Result<(), TransportError> {
        let state = unpack(self.n, y);
        let g = self.m.metric_at_coords(state.x.as_slice())?;
        let gram = &state.frame * g * state.frame.transpose();
        let drift = linalg::max_abs(&(&gram - &self.gram0));
        self.max_gram_drift = self.max_gram_drift.max(drift);
        self.v_samples.push(self.v.shape.value_at(t, select)?);
        self.samples.push((t, state));
        Ok(())
    }

    fn finish(self) -> DevelopmentResult<T> {
        DevelopmentResult {
            samples: self.samples,
            v_samples: self.v_samples,
            status: self.status,
            diagnostics: Diagnostics {
                max_gram_drift: self.max_gram_drift,
                max_frame_cond: self.max_frame_cond,
                steps: self.steps,
            },
        }
    }
}

/// Geodesic through `p` with initial velocity `v0`: the development of
/// the constant curve.
pub fn geodesic<T: Real>(
    m: &ChartManifold<T>,
    p: &ChartPoint<T>,
    v0: impl Into<Vec<T>>,
    horizon: T,
    opts: &IntegratorOpts<T>,
) -> Result<DevelopmentResult<T>, TransportError> {
    develop(m, &TangentCurve::constant(p.clone(), v0, horizon), opts)
}

/// Restart identity: develops the tail of `v` from the state at `t0`,
/// transporting the tail curve through the stored frame. The endpoint
/// agrees with the uninterrupted development.
pub fn restart<T: Real>(
    m: &ChartManifold<T>,
    result: &DevelopmentResult<T>,
    t0: T,
    v_tail: &TangentCurve<T>,
    opts: &IntegratorOpts<T>,
) -> Result<DevelopmentResult<T>, TransportError> {
    let state = result.state_at(t0)?;
    let q = ChartPoint {
        coords: state.x.clone(),
    };
    let transported = v_tail.transformed(q, state.frame.transpose());
    develop(m, &transported, opts)
}
