//! Riemannian manifolds presented in a single coordinate chart.
//!
//! A [`ChartManifold`] carries its dimension, a metric tensor field, an
//! optional chart-domain predicate, an optional boundary level set
//! (interior where the function is positive) and, for torus-like members
//! of the catalog, the list of axes understood modulo 1 when reporting.
//!
//! The metric is either a constant matrix (flat members), a symmetric
//! matrix of parsed expressions, or a block product of the two. First
//! derivatives of the metric come from forward-mode differentiation of
//! the entry expressions, which makes Christoffel symbols exact; the
//! curvature tensor is obtained by central finite differences of those
//! exact symbols.

pub(crate) mod linalg;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::{tol, Real};

/// A point in the chart, given by its coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint<T> {
    pub coords: DVector<T>,
}

impl<T: Real> ChartPoint<T> {
    pub fn new(coords: impl Into<Vec<T>>) -> Self {
        ChartPoint {
            coords: DVector::from_vec(coords.into()),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A tangent vector: coefficients against the coordinate basis at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tangent<T> {
    pub base: ChartPoint<T>,
    pub components: DVector<T>,
}

impl<T: Real> Tangent<T> {
    pub fn new(base: ChartPoint<T>, components: impl Into<Vec<T>>) -> Self {
        let components = DVector::from_vec(components.into());
        assert_eq!(base.dim(), components.len());
        Tangent { base, components }
    }
}

/// Classification of a chart point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointClass {
    Interior,
    Boundary,
    Outside,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point outside the chart domain: {0}")]
    OutOfDomain(String),
    #[error("metric not invertible at the requested point")]
    NotInvertible,
    #[error("corner product unsupported: both factors have boundary")]
    CornerProduct,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Metric tensor field in chart coordinates.
#[derive(Clone, Debug)]
pub enum MetricField<T> {
    /// Constant coefficients: flat in these coordinates.
    Constant(DMatrix<T>),
    /// Symmetric matrix of expressions, row-major `n × n`. Entries are
    /// mirrored from the upper triangle at construction, so symmetry is
    /// exact.
    Exprs { n: usize, entries: Vec<Expr> },
    /// Block-diagonal product metric; the second block sees the
    /// coordinate slice starting at `na`.
    Block {
        a: Box<MetricField<T>>,
        na: usize,
        b: Box<MetricField<T>>,
        nb: usize,
    },
}

impl<T: Real> MetricField<T> {
    fn dim(&self) -> usize {
        match self {
            MetricField::Constant(m) => m.nrows(),
            MetricField::Exprs { n, .. } => *n,
            MetricField::Block { na, nb, .. } => na + nb,
        }
    }

    fn is_flat(&self) -> bool {
        match self {
            MetricField::Constant(_) => true,
            MetricField::Exprs { .. } => false,
            MetricField::Block { a, b, .. } => a.is_flat() && b.is_flat(),
        }
    }

    fn eval(&self, x: &[T]) -> Result<DMatrix<T>, EvalError> {
        match self {
            MetricField::Constant(m) => Ok(m.clone()),
            MetricField::Exprs { n, entries } => {
                let mut g = DMatrix::zeros(*n, *n);
                for i in 0..*n {
                    for j in 0..*n {
                        g[(i, j)] = entries[i * n + j].eval(x, T::zero())?;
                    }
                }
                Ok(g)
            }
            MetricField::Block { a, na, b, nb } => {
                let ga = a.eval(&x[..*na])?;
                let gb = b.eval(&x[*na..*na + *nb])?;
                let n = na + nb;
                let mut g = DMatrix::zeros(n, n);
                g.view_mut((0, 0), (*na, *na)).copy_from(&ga);
                g.view_mut((*na, *na), (*nb, *nb)).copy_from(&gb);
                Ok(g)
            }
        }
    }

    /// ∂ₖ g as one matrix per coordinate direction, exact via dual numbers.
    fn grad(&self, x: &[T]) -> Result<Vec<DMatrix<T>>, EvalError> {
        let n = self.dim();
        match self {
            MetricField::Constant(_) => Ok(vec![DMatrix::zeros(n, n); n]),
            MetricField::Exprs { n, entries } => {
                let mut out = vec![DMatrix::zeros(*n, *n); *n];
                for i in 0..*n {
                    for j in 0..*n {
                        let (_, grad) = entries[i * n + j].eval_with_grad(x, T::zero())?;
                        for k in 0..*n {
                            out[k][(i, j)] = grad[k];
                        }
                    }
                }
                Ok(out)
            }
            MetricField::Block { a, na, b, nb } => {
                let da = a.grad(&x[..*na])?;
                let db = b.grad(&x[*na..*na + *nb])?;
                let mut out = vec![DMatrix::zeros(n, n); n];
                for k in 0..*na {
                    out[k].view_mut((0, 0), (*na, *na)).copy_from(&da[k]);
                }
                for k in 0..*nb {
                    out[na + k]
                        .view_mut((*na, *na), (*nb, *nb))
                        .copy_from(&db[k]);
                }
                Ok(out)
            }
        }
    }
}

/// Lowered curvature tensor R_{ijkl} = ⟨R(∂_i,∂_j)∂_k, ∂_l⟩ at a point.
#[derive(Clone, Debug)]
pub struct CurvatureTensor<T> {
    pub n: usize,
    comp: Vec<T>,
}

impl<T: Real> CurvatureTensor<T> {
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.comp[((i * self.n + j) * self.n + k) * self.n + l]
    }

    /// R(X,Y,Z,W) contracted on coordinate components.
    pub fn apply(&self, x: &DVector<T>, y: &DVector<T>, z: &DVector<T>, w: &DVector<T>) -> T {
        let n = self.n;
        let mut acc = T::zero();
        for i in 0..n {
            if x[i] == T::zero() {
                continue;
            }
            for j in 0..n {
                if y[j] == T::zero() {
                    continue;
                }
                for k in 0..n {
                    for l in 0..n {
                        acc += x[i] * y[j] * z[k] * w[l] * self.get(i, j, k, l);
                    }
                }
            }
        }
        acc
    }

    /// Sectional curvature of span{X, Y} for the metric `g` at the point.
    pub fn sectional(&self, g: &DMatrix<T>, x: &DVector<T>, y: &DVector<T>) -> T {
        let num = self.apply(x, y, y, x);
        let gxx = (g * x).dot(x);
        let gyy = (g * y).dot(y);
        let gxy = (g * x).dot(y);
        num / (gxx * gyy - gxy * gxy)
    }

    /// Worst violation of the index symmetries: antisymmetry in (i,j) and
    /// (k,l), pair symmetry and the first Bianchi identity.
    pub fn symmetry_residual(&self) -> T {
        let n = self.n;
        let mut worst = T::zero();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let r = self.get(i, j, k, l);
                        worst = worst.max((r + self.get(j, i, k, l)).abs());
                        worst = worst.max((r + self.get(i, j, l, k)).abs());
                        worst = worst.max((r - self.get(k, l, i, j)).abs());
                        let bianchi = r + self.get(j, k, i, l) + self.get(k, i, j, l);
                        worst = worst.max(bianchi.abs());
                    }
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.comp.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }
}

/// A Riemannian manifold in one chart, possibly with boundary.
#[derive(Clone, Debug)]
pub struct ChartManifold<T> {
    name: String,
    dim: usize,
    metric: MetricField<T>,
    /// Chart-domain predicates: every expression must be positive.
    domain: Vec<Expr>,
    /// Boundary level set: interior where positive, boundary at zero.
    boundary: Option<Expr>,
    /// Axes understood modulo 1 when reporting distances (never inside
    /// ODE state).
    periodic: Vec<usize>,
}

impl<T: Real> ChartManifold<T> {
    pub fn new(
        name: impl Into<String>,
        metric: MetricField<T>,
        domain: Vec<Expr>,
        boundary: Option<Expr>,
        periodic: Vec<usize>,
    ) -> Self {
        let dim = metric.dim();
        ChartManifold {
            name: name.into(),
            dim,
            metric,
            domain,
            boundary,
            periodic,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn periodic_axes(&self) -> &[usize] {
        &self.periodic
    }

    pub fn has_boundary(&self) -> bool {
        self.boundary.is_some()
    }

    pub fn is_flat(&self) -> bool {
        self.metric.is_flat()
    }

    fn check_dim(&self, p: &ChartPoint<T>) -> Result<(), GeometryError> {
        if p.dim() != self.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                got: p.dim(),
            });
        }
        Ok(())
    }

    /// True when the coordinates satisfy every chart-domain predicate.
    pub fn in_domain(&self, x: &[T]) -> bool {
        self.domain.iter().all(|d| match d.eval(x, T::zero()) {
            Ok(v) => v > T::zero(),
            Err(_) => false,
        })
    }

    /// Boundary function value, when the manifold has a boundary.
    pub fn boundary_value(&self, x: &[T]) -> Option<Result<T, EvalError>> {
        self.boundary.as_ref().map(|b| b.eval(x, T::zero()))
    }

    /// Classifies a point against the chart domain and the boundary level
    /// set (tolerance [`tol::BOUNDARY_CLASS_TOL`]).
    pub fn inside(&self, p: &ChartPoint<T>) -> PointClass {
        let x = p.coords.as_slice();
        if !self.in_domain(x) {
            return PointClass::Outside;
        }
        match self.boundary_value(x) {
            None => PointClass::Interior,
            Some(Err(_)) => PointClass::Outside,
            Some(Ok(b)) => {
                let eps = T::lit(tol::BOUNDARY_CLASS_TOL);
                if b.abs() <= eps {
                    PointClass::Boundary
                } else if b > T::zero() {
                    PointClass::Interior
                } else {
                    PointClass::Outside
                }
            }
        }
    }

    /// Metric matrix at `p`.
    pub fn metric_at(&self, p: &ChartPoint<T>) -> Result<DMatrix<T>, GeometryError> {
        self.check_dim(p)?;
        let x = p.coords.as_slice();
        if !self.in_domain(x) {
            return Err(GeometryError::OutOfDomain(format!("{:?}", x)));
        }
        Ok(self.metric.eval(x)?)
    }

    pub(crate) fn metric_at_coords(&self, x: &[T]) -> Result<DMatrix<T>, GeometryError> {
        Ok(self.metric.eval(x)?)
    }

    /// g(v, w) for tangent components at `p`.
    pub fn inner(
        &self,
        p: &ChartPoint<T>,
        v: &DVector<T>,
        w: &DVector<T>,
    ) -> Result<T, GeometryError> {
        let g = self.metric_at(p)?;
        Ok((&g * v).dot(w))
    }

    /// g-norm of tangent components at `p`.
    pub fn norm(&self, p: &ChartPoint<T>, v: &DVector<T>) -> Result<T, GeometryError> {
        Ok(self.inner(p, v, v)?.sqrt())
    }

    /// Exact metric derivatives ∂ₖg at `p`, one matrix per direction.
    pub fn metric_grad_at(&self, p: &ChartPoint<T>) -> Result<Vec<DMatrix<T>>, GeometryError> {
        self.check_dim(p)?;
        Ok(self.metric.grad(p.coords.as_slice())?)
    }

    /// Christoffel symbols Γ^j_{kl} at `p` (one matrix per upper index),
    /// from the Levi-Civita formula on exact metric derivatives.
    pub fn christoffel(&self, p: &ChartPoint<T>) -> Result<Vec<DMatrix<T>>, GeometryError> {
        self.check_dim(p)?;
        self.christoffel_at_coords(p.coords.as_slice())
    }

    pub(crate) fn christoffel_at_coords(&self, x: &[T]) -> Result<Vec<DMatrix<T>>, GeometryError> {
        let n = self.dim;
        if self.metric.is_flat() {
            return Ok(vec![DMatrix::zeros(n, n); n]);
        }
        let g = self.metric.eval(x)?;
        let ginv = g.try_inverse().ok_or(GeometryError::NotInvertible)?;
        let dg = self.metric.grad(x)?;
        let mut gamma = vec![DMatrix::zeros(n, n); n];
        let half = T::lit(0.5);
        for j in 0..n {
            for k in 0..n {
                for l in 0..=k {
                    let mut acc = T::zero();
                    for m in 0..n {
                        acc += ginv[(j, m)] * (dg[k][(m, l)] + dg[l][(m, k)] - dg[m][(k, l)]);
                    }
                    let value = half * acc;
                    gamma[j][(k, l)] = value;
                    gamma[j][(l, k)] = value;
                }
            }
        }
        Ok(gamma)
    }

    /// Lowered curvature tensor at an interior point, from central finite
    /// differences of the exact Christoffel symbols.
    pub fn curvature_at(&self, p: &ChartPoint<T>) -> Result<CurvatureTensor<T>, GeometryError> {
        self.check_dim(p)?;
        let x = p.coords.as_slice();
        if !self.in_domain(x) {
            return Err(GeometryError::OutOfDomain(format!("{:?}", x)));
        }
        self.curvature_at_coords(x)
    }

    pub(crate) fn curvature_at_coords(&self, x: &[T]) -> Result<CurvatureTensor<T>, GeometryError> {
        let n = self.dim;
        if self.metric.is_flat() {
            return Ok(CurvatureTensor {
                n,
                comp: vec![T::zero(); n * n * n * n],
            });
        }
        let g = self.metric.eval(x)?;
        let gamma = self.christoffel_at_coords(x)?;

        // dgamma[m][j][(k,l)] ≈ ∂_m Γ^j_{kl}, step scaled per axis.
        let mut dgamma = Vec::with_capacity(n);
        for m in 0..n {
            let h = T::lit(tol::CURVATURE_FD_STEP) * (T::one() + x[m].abs());
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[m] += h;
            lo[m] -= h;
            let ghi = self.christoffel_at_coords(&hi)?;
            let glo = self.christoffel_at_coords(&lo)?;
            let scale = T::one() / (h + h);
            let diff: Vec<DMatrix<T>> = ghi
                .iter()
                .zip(&glo)
                .map(|(a, b)| (a - b) * scale)
                .collect();
            dgamma.push(diff);
        }

        let mut comp = vec![T::zero(); n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    // R(∂_i,∂_j)∂_k = Rop^l_{ijk} ∂_l
                    for l in 0..n {
                        let mut rop = dgamma[i][l][(j, k)] - dgamma[j][l][(i, k)];
                        for m in 0..n {
                            rop += gamma[m][(j, k)] * gamma[l][(i, m)]
                                - gamma[m][(i, k)] * gamma[l][(j, m)];
                        }
                        // lower: R_{ijkl} = g_{lm} Rop^m_{ijk}
                        for q in 0..n {
                            comp[((i * n + j) * n + k) * n + q] += g[(q, l)] * rop;
                        }
                    }
                }
            }
        }
        Ok(CurvatureTensor { n, comp })
    }

    /// Torus-aware distance between coordinate vectors: periodic axes are
    /// compared modulo 1. Reporting only; never used inside ODE state.
    pub fn report_distance(&self, a: &DVector<T>, b: &DVector<T>) -> T {
        let mut acc = T::zero();
        for i in 0..self.dim {
            let mut d = (a[i] - b[i]).abs();
            if self.periodic.contains(&i) {
                d -= d.floor();
                d = d.min(T::one() - d);
            }
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// Product manifold with block-diagonal metric. Fails when both factors
/// have boundary: that product is a manifold with corners.
pub fn product<T: Real>(
    a: &ChartManifold<T>,
    b: &ChartManifold<T>,
) -> Result<ChartManifold<T>, GeometryError> {
    if a.boundary.is_some() && b.boundary.is_some() {
        return Err(GeometryError::CornerProduct);
    }
    let (na, nb) = (a.dim, b.dim);
    let n = na + nb;
    let vars: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();

    let metric = match (&a.metric, &b.metric) {
        (MetricField::Constant(ma), MetricField::Constant(mb)) => {
            let mut m = DMatrix::zeros(n, n);
            m.view_mut((0, 0), (na, na)).copy_from(ma);
            m.view_mut((na, na), (nb, nb)).copy_from(mb);
            MetricField::Constant(m)
        }
        _ => MetricField::Block {
            a: Box::new(a.metric.clone()),
            na,
            b: Box::new(b.metric.clone()),
            nb,
        },
    };

    let mut domain: Vec<Expr> = a
        .domain
        .iter()
        .map(|d| d.reindex_vars(0, &vars))
        .collect();
    domain.extend(b.domain.iter().map(|d| d.reindex_vars(na, &vars)));

    let boundary = match (&a.boundary, &b.boundary) {
        (Some(ba), None) => Some(ba.reindex_vars(0, &vars)),
        (None, Some(bb)) => Some(bb.reindex_vars(na, &vars)),
        (None, None) => None,
        (Some(_), Some(_)) => unreachable!("rejected above"),
    };

    let mut periodic = a.periodic.clone();
    periodic.extend(b.periodic.iter().map(|&i| i + na));

    Ok(ChartManifold::new(
        format!("product({}, {})", a.name, b.name),
        metric,
        domain,
        boundary,
        periodic,
    ))
}

/// Gram-Schmidt on the coordinate basis: returns a matrix whose rows are
/// a g-orthonormal basis of the tangent space at `p`.
pub fn orthonormal_basis<T: Real>(
    m: &ChartManifold<T>,
    p: &ChartPoint<T>,
) -> Result<DMatrix<T>, GeometryError> {
    let n = m.dim();
    let g = m.metric_at(p)?;
    let mut rows: Vec<DVector<T>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = T::one();
        for prev in &rows {
            let coeff = (&g * &e).dot(prev);
            e -= prev * coeff;
        }
        let norm = (&g * &e).dot(&e).sqrt();
        if norm == T::zero() {
            return Err(GeometryError::NotInvertible);
        }
        rows.push(e / norm);
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------

/// Flat R^n.
pub fn euclidean<T: Real>(n: usize) -> ChartManifold<T> {
    ChartManifold::new(
        format!("euclidean({n})"),
        MetricField::Constant(DMatrix::identity(n, n)),
        vec![],
        None,
        vec![],
    )
}

/// Round 2-sphere of the given radius in its stereographic chart:
/// g = 4R⁴/(R² + |x|²)² δ.
pub fn sphere_stereo<T: Real>(radius: f64) -> ChartManifold<T> {
    let r2 = radius * radius;
    let coeff = 4.0 * r2 * r2;
    let diag = format!("{coeff}/(({r2} + x0*x0 + x1*x1)^2)");
    let entries = metric_exprs_from_upper(2, |i, j| {
        if i == j {
            diag.clone()
        } else {
            "0".to_string()
        }
    });
    ChartManifold::new(
        format!("sphere_stereo({radius})"),
        MetricField::Exprs { n: 2, entries },
        vec![],
        None,
        vec![],
    )
}

/// Hyperbolic upper half-plane: g = δ / x1², domain x1 > 0.
pub fn hyperbolic_halfplane<T: Real>() -> ChartManifold<T> {
    let entries = metric_exprs_from_upper(2, |i, j| {
        if i == j {
            "1/(x1*x1)".to_string()
        } else {
            "0".to_string()
        }
    });
    ChartManifold::new(
        "hyperbolic_halfplane",
        MetricField::Exprs { n: 2, entries },
        vec![Expr::parse("x1", 2).expect("static expression")],
        None,
        vec![],
    )
}

/// Flat n-torus: flat metric, all coordinates modulo 1 for reporting.
pub fn flat_torus<T: Real>(n: usize) -> ChartManifold<T> {
    ChartManifold::new(
        format!("flat_torus({n})"),
        MetricField::Constant(DMatrix::identity(n, n)),
        vec![],
        None,
        (0..n).collect(),
    )
}

/// The interval [0, L] with the flat metric; boundary at both ends.
pub fn slab<T: Real>(length: f64) -> ChartManifold<T> {
    ChartManifold::new(
        format!("slab({length})"),
        MetricField::Constant(DMatrix::identity(1, 1)),
        vec![],
        Some(Expr::parse(&format!("x0*({length} - x0)"), 1).expect("static expression")),
        vec![],
    )
}

/// [0,1] × R² with the flat metric; the last two coordinates are reported
/// modulo 1. Carries the slope-`r` pair of parallel distributions built by
/// `decomposition::slab_torus_distributions`.
pub fn slab_torus<T: Real>(r: f64) -> ChartManifold<T> {
    ChartManifold::new(
        format!("slab_torus({r})"),
        MetricField::Constant(DMatrix::identity(3, 3)),
        vec![],
        Some(Expr::parse("x0*(1 - x0)", 3).expect("static expression")),
        vec![1, 2],
    )
}

/// Manifold from a user-supplied expression metric. `entries` is the full
/// matrix of sources; only the upper triangle is read and mirrored.
pub fn from_exprs<T: Real>(
    name: impl Into<String>,
    dim: usize,
    entries: &[Vec<String>],
    domain: Vec<Expr>,
    boundary: Option<Expr>,
) -> Result<ChartManifold<T>, crate::expr::ParseError> {
    let mut parsed = vec![Expr::number(0.0); dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let e = Expr::parse(&entries[i][j], dim)?;
            parsed[i * dim + j] = e.clone();
            parsed[j * dim + i] = e;
        }
    }
    Ok(ChartManifold::new(
        name,
        MetricField::Exprs {
            n: dim,
            entries: parsed,
        },
        domain,
        boundary,
        vec![],
    ))
}

fn metric_exprs_from_upper(n: usize, source: impl Fn(usize, usize) -> String) -> Vec<Expr> {
    let mut entries = vec![Expr::number(0.0); n * n];
    for i in 0..n {
        for j in i..n {
            let e = Expr::parse(&source(i, j), n).expect("catalog metric entry parses");
            entries[i * n + j] = e.clone();
            entries[j * n + i] = e;
        }
    }
    entries
}
