//! Parallel distributions and splitting checks: tangent splitting,
//! parallelism residuals, parallelogram/holonomy identities for
//! complementary parallel distributions, curvature splitting and its
//! transport invariance, the curve-transfer construction between
//! manifolds, a numerically sampled local product isometry, and leaf
//! tracing with recurrence statistics.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::manifold::{
    linalg, orthonormal_basis, ChartManifold, ChartPoint, GeometryError, Tangent,
};
use crate::transport::{
    develop, develop_with_frame, geodesic, transport_matrix_observed, DevelopmentResult,
    DevelopmentStatus, IntegratorOpts, SampledPath, TangentCurve, TransportError,
};
use crate::variation::{VariationError, VariationFamily};
use crate::{tol, Real};

#[derive(Clone, Debug, Error)]
pub enum DecompositionError {
    #[error("distributions are not complementary: |P1 + P2 - I| = {residual}")]
    ComplementarityViolated { residual: f64 },
    #[error("curve leaves its distribution: membership residual {residual}")]
    MembershipViolated { residual: f64 },
    #[error("path is not tangential to the distribution: residual {residual}")]
    TangencyViolated { residual: f64 },
    #[error("homotopy endpoints are not fixed: spread {spread}")]
    EndpointsNotFixed { spread: f64 },
    #[error("distribution is not parallel along probe paths: residual {residual}")]
    NotParallel { residual: f64 },
    #[error("curve does not start at the isometry's source point")]
    SourceMismatch,
    #[error("projector violates its invariants: residual {residual}")]
    ProjectorInvariant { residual: f64 },
    #[error("development truncated: {0}")]
    Truncated(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
enum ProjectorField<T> {
    Constant(DMatrix<T>),
    Exprs { n: usize, entries: Vec<Expr> },
}

/// A rank-k subbundle of the tangent bundle, given by a projector field.
#[derive(Clone, Debug)]
pub struct Distribution<T> {
    projector: ProjectorField<T>,
    pub rank: usize,
}

impl<T: Real> Distribution<T> {
    pub fn constant(projector: DMatrix<T>, rank: usize) -> Self {
        assert_eq!(projector.nrows(), projector.ncols());
        Distribution {
            projector: ProjectorField::Constant(projector),
            rank,
        }
    }

    /// Projector with entries given by expressions over the chart
    /// coordinates (row-major n×n).
    pub fn from_exprs(n: usize, entries: Vec<Expr>, rank: usize) -> Self {
        assert_eq!(entries.len(), n * n);
        Distribution {
            projector: ProjectorField::Exprs { n, entries },
            rank,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.projector {
            ProjectorField::Constant(m) => m.nrows(),
            ProjectorField::Exprs { n, .. } => *n,
        }
    }

    pub fn projector_at(&self, x: &[T]) -> Result<DMatrix<T>, EvalError> {
        match &self.projector {
            ProjectorField::Constant(m) => Ok(m.clone()),
            ProjectorField::Exprs { n, entries } => {
                let mut p = DMatrix::zeros(*n, *n);
                for i in 0..*n {
                    for j in 0..*n {
                        p[(i, j)] = entries[i * n + j].eval(x, T::zero())?;
                    }
                }
                Ok(p)
            }
        }
    }

    /// Worst violation of P² = P, g-self-adjointness (gP symmetric) and
    /// trace P = rank at a point.
    pub fn invariants_residual(
        &self,
        m: &ChartManifold<T>,
        p: &ChartPoint<T>,
    ) -> Result<T, DecompositionError> {
        let x = p.coords.as_slice();
        let proj = self.projector_at(x)?;
        let g = m.metric_at(p)?;
        let idem = linalg::max_abs(&(&proj * &proj - &proj));
        let gp = &g * &proj;
        let sym = linalg::max_abs(&(&gp - gp.transpose()));
        let trace = (proj.trace() - T::from_usize(self.rank).unwrap()).abs();
        Ok(idem.max(sym).max(trace))
    }

    /// g-orthonormal basis of the image of P at `p`, as matrix columns.
    pub fn basis_at(
        &self,
        m: &ChartManifold<T>,
        p: &ChartPoint<T>,
    ) -> Result<DMatrix<T>, DecompositionError> {
        let n = self.dim();
        let x = p.coords.as_slice();
        let proj = self.projector_at(x)?;
        let g = m.metric_at(p)?;
        let mut cols: Vec<DVector<T>> = Vec::with_capacity(self.rank);
        // project the coordinate basis, keep the independent directions
        for c in 0..n {
            if cols.len() == self.rank {
                break;
            }
            let mut v = proj.column(c).clone_owned();
            for prev in &cols {
                let coeff = (&g * &v).dot(prev);
                v -= prev * coeff;
            }
            let norm = (&g * &v).dot(&v).sqrt();
            if norm > T::lit(1e-8) {
                cols.push(v / norm);
            }
        }
        if cols.len() != self.rank {
            return Err(DecompositionError::ProjectorInvariant {
                residual: f64::NAN,
            });
        }
        Ok(DMatrix::from_fn(n, self.rank, |i, c| cols[c][i]))
    }
}

/// The slope-r pair of parallel distributions on `slab_torus(r)`:
/// T1 = span{∂0, ∂1 + r ∂2} (contains the boundary normals),
/// T2 = span{−r ∂1 + ∂2}.
pub fn slab_torus_distributions<T: Real>(r: f64) -> (Distribution<T>, Distribution<T>) {
    let denom = 1.0 + r * r;
    let mut p2 = DMatrix::zeros(3, 3);
    p2[(1, 1)] = T::lit(r * r / denom);
    p2[(1, 2)] = T::lit(-r / denom);
    p2[(2, 1)] = T::lit(-r / denom);
    p2[(2, 2)] = T::lit(1.0 / denom);
    let p1 = DMatrix::identity(3, 3) - &p2;
    (Distribution::constant(p1, 2), Distribution::constant(p2, 1))
}

/// Factor distributions of a product chart: the first `na` coordinates
/// against the rest.
pub fn factor_distributions<T: Real>(na: usize, nb: usize) -> (Distribution<T>, Distribution<T>) {
    let n = na + nb;
    let mut p1 = DMatrix::zeros(n, n);
    for i in 0..na {
        p1[(i, i)] = T::one();
    }
    let p2 = DMatrix::identity(n, n) - &p1;
    (Distribution::constant(p1, na), Distribution::constant(p2, nb))
}

fn check_complementary<T: Real>(
    d1: &Distribution<T>,
    d2: &Distribution<T>,
    x: &[T],
) -> Result<(DMatrix<T>, DMatrix<T>), DecompositionError> {
    let p1 = d1.projector_at(x)?;
    let p2 = d2.projector_at(x)?;
    let n = p1.nrows();
    let resid = linalg::max_abs(&(&p1 + &p2 - DMatrix::<T>::identity(n, n)));
    if resid > T::lit(tol::COMPLEMENT_TOL) {
        return Err(DecompositionError::ComplementarityViolated {
            residual: to_f64(resid),
        });
    }
    Ok((p1, p2))
}

/// Splits a tangent vector against complementary distributions:
/// returns (P1 w, P2 w).
pub fn split_tangent<T: Real>(
    d1: &Distribution<T>,
    d2: &Distribution<T>,
    w: &Tangent<T>,
) -> Result<(Tangent<T>, Tangent<T>), DecompositionError> {
    let (p1, p2) = check_complementary(d1, d2, w.base.coords.as_slice())?;
    let w1 = &p1 * &w.components;
    let w2 = &p2 * &w.components;
    Ok((
        Tangent {
            base: w.base.clone(),
            components: w1,
        },
        Tangent {
            base: w.base.clone(),
            components: w2,
        },
    ))
}

// ---------------------------------------------------------------------
// Parallelism of a distribution along a path
// ---------------------------------------------------------------------

/// Residual of D being preserved by parallel transport along the path:
/// max over a g-orthonormal basis X0 of D(start) and over path knots of
/// |(I − P(γ(t))) X(t)|_g.
pub fn check_parallel<T: Real>(
    m: &ChartManifold<T>,
    d: &Distribution<T>,
    path: &SampledPath<T>,
    opts: &IntegratorOpts<T>,
) -> Result<T, DecompositionError> {
    let start = ChartPoint {
        coords: path.start().clone(),
    };
    let basis = d.basis_at(m, &start)?;
    let mut worst = T::zero();
    let mut observe = |t: T, cum: &DMatrix<T>| -> Result<(), TransportError> {
        let x = path.position(t);
        let g = m
            .metric_at_coords(x.as_slice())
            .map_err(TransportError::Geometry)?;
        let p = d
            .projector_at(x.as_slice())
            .map_err(TransportError::Eval)?;
        let transported = cum * &basis;
        for c in 0..basis.ncols() {
            let v = transported.column(c).clone_owned();
            let off = &v - &p * &v;
            let norm = (&g * &off).dot(&off).sqrt();
            worst = worst.max(norm);
        }
        Ok(())
    };
    transport_matrix_observed(m, path, opts, &mut observe)?;
    Ok(worst)
}

// ---------------------------------------------------------------------
// Parallelogram / holonomy identities
// ---------------------------------------------------------------------

/// Outcome of the two-leg versus diagonal comparison.
#[derive(Clone, Debug)]
pub struct SplitReport<T> {
    /// Max pairwise chart distance between the three composite endpoints.
    pub endpoint_mismatch: T,
    /// Max over the two closed curves of ‖loop transport − I‖₂ in a
    /// g-orthonormal frame at p.
    pub holonomy_deviation: T,
    /// Per-leg trajectories, by construction order:
    /// diagonal, leg1, leg1→2, leg2, leg2→1.
    pub legs: Vec<(String, DevelopmentResult<T>)>,
}

impl<T: Real> SplitReport<T> {
    pub fn all_completed(&self) -> bool {
        self.legs.iter().all(|(_, dev)| dev.status.is_completed())
    }

    pub fn statuses(&self) -> Vec<(String, String)> {
        self.legs
            .iter()
            .map(|(name, dev)| (name.clone(), format!("{:?}", dev.status)))
            .collect()
    }
}

fn membership_residual<T: Real>(
    m: &ChartManifold<T>,
    proj: &DMatrix<T>,
    p: &ChartPoint<T>,
    v: &TangentCurve<T>,
    horizon: T,
) -> Result<T, DecompositionError> {
    let g = m.metric_at(p)?;
    let mut worst = T::zero();
    let samples = 32;
    for k in 0..=samples {
        let t = horizon * T::from_usize(k).unwrap() / T::from_usize(samples).unwrap();
        let val = v.value(t)?;
        let off = &val - proj * &val;
        worst = worst.max((&g * &off).dot(&off).sqrt());
    }
    Ok(worst)
}

/// Develops v1+v2 along the diagonal and through both leg orders,
/// reporting the endpoint mismatch and the holonomy deviation of the
/// two closed curves. For complementary parallel distributions both
/// quantities vanish; the residuals measure how far that law is from
/// holding.
#[allow(clippy::too_many_arguments)]
pub fn parallelogram_check<T: Real>(
    m: &ChartManifold<T>,
    d1: &Distribution<T>,
    d2: &Distribution<T>,
    p: &ChartPoint<T>,
    v1: &TangentCurve<T>,
    v2: &TangentCurve<T>,
    t: T,
    opts: &IntegratorOpts<T>,
) -> Result<SplitReport<T>, DecompositionError> {
    let (p1, p2) = check_complementary(d1, d2, p.coords.as_slice())?;
    let m1 = membership_residual(m, &p1, p, v1, t)?;
    let m2 = membership_residual(m, &p2, p, v2, t)?;
    let resid = m1.max(m2);
    if resid > T::lit(tol::MEMBERSHIP_TOL) {
        return Err(DecompositionError::MembershipViolated {
            residual: to_f64(resid),
        });
    }

    let diag = develop(m, &v1.plus(v2).truncated(t), opts)?;

    let leg1 = develop(m, &v1.truncated(t), opts)?;
    let leg12 = if leg1.status.is_completed() {
        let q1 = ChartPoint {
            coords: leg1.endpoint().x.clone(),
        };
        let tail = v2.truncated(t).transformed(q1, leg1.endpoint().frame.transpose());
        Some(develop(m, &tail, opts)?)
    } else {
        None
    };

    let leg2 = develop(m, &v2.truncated(t), opts)?;
    let leg21 = if leg2.status.is_completed() {
        let q2 = ChartPoint {
            coords: leg2.endpoint().x.clone(),
        };
        let tail = v1.truncated(t).transformed(q2, leg2.endpoint().frame.transpose());
        Some(develop(m, &tail, opts)?)
    } else {
        None
    };

    // endpoint mismatch over whatever endpoints completed
    let mut endpoints: Vec<DVector<T>> = vec![diag.endpoint().x.clone()];
    if let Some(l) = &leg12 {
        endpoints.push(l.endpoint().x.clone());
    }
    if let Some(l) = &leg21 {
        endpoints.push(l.endpoint().x.clone());
    }
    let mut mismatch = T::zero();
    for i in 0..endpoints.len() {
        for j in i + 1..endpoints.len() {
            mismatch = mismatch.max((&endpoints[i] - &endpoints[j]).norm());
        }
    }

    // loop transports expressed in a g-orthonormal frame at p
    let basis = orthonormal_basis(m, p)?;
    let bt = basis.transpose();
    let bt_inv = bt.clone().try_inverse().ok_or(GeometryError::NotInvertible)?;
    let diag_rev = diag
        .transport_to_end()
        .try_inverse()
        .ok_or(GeometryError::NotInvertible)?;
    let mut deviation = T::zero();
    for (first, second) in [(&leg1, &leg12), (&leg2, &leg21)] {
        if let Some(second) = second {
            let loop_mat = &diag_rev * second.transport_to_end() * first.transport_to_end();
            let in_frame = &bt_inv * loop_mat * &bt;
            deviation = deviation.max(linalg::deviation_from_identity(&in_frame));
        }
    }

    let mut legs = vec![
        ("diagonal".to_string(), diag),
        ("leg1".to_string(), leg1),
    ];
    if let Some(l) = leg12 {
        legs.push(("leg1_then_2".to_string(), l));
    }
    legs.push(("leg2".to_string(), leg2));
    if let Some(l) = leg21 {
        legs.push(("leg2_then_1".to_string(), l));
    }

    Ok(SplitReport {
        endpoint_mismatch: mismatch,
        holonomy_deviation: deviation,
        legs,
    })
}

// ---------------------------------------------------------------------
// Curvature splitting
// ---------------------------------------------------------------------

/// max |R(X,Y,Z,W) − R(X1,Y1,Z1,W1) − R(X2,Y2,Z2,W2)| over the supplied
/// quadruples, split through the projectors at `p`.
pub fn curvature_split_check<T: Real>(
    m: &ChartManifold<T>,
    d1: &Distribution<T>,
    d2: &Distribution<T>,
    p: &ChartPoint<T>,
    quads: &[[DVector<T>; 4]],
) -> Result<T, DecompositionError> {
    let (p1, p2) = check_complementary(d1, d2, p.coords.as_slice())?;
    let r = m.curvature_at(p)?;
    let mut worst = T::zero();
    for quad in quads {
        let whole = r.apply(&quad[0], &quad[1], &quad[2], &quad[3]);
        let a: Vec<DVector<T>> = quad.iter().map(|v| &p1 * v).collect();
        let b: Vec<DVector<T>> = quad.iter().map(|v| &p2 * v).collect();
        let part1 = r.apply(&a[0], &a[1], &a[2], &a[3]);
        let part2 = r.apply(&b[0], &b[1], &b[2], &b[3]);
        worst = worst.max((whole - part1 - part2).abs());
    }
    Ok(worst)
}

/// max |R(X1,Y1,Z1,W1) − R(PX1,PY1,PZ1,PW1)| with P the parallel
/// transport along a path tangential to D2 and quadruples in D1(start).
pub fn curvature_transport_invariance_check<T: Real>(
    m: &ChartManifold<T>,
    d1: &Distribution<T>,
    d2: &Distribution<T>,
    path: &SampledPath<T>,
    quads: &[[DVector<T>; 4]],
    opts: &IntegratorOpts<T>,
) -> Result<T, DecompositionError> {
    let _ = d1;
    // tangency of the path to D2 at its knots
    let mut tangency = T::zero();
    for &t in path.knots() {
        let vel = path.velocity(t);
        let x = path.position(t);
        let g = m.metric_at_coords(x.as_slice())?;
        let p2 = d2.projector_at(x.as_slice())?;
        let off = &vel - &p2 * &vel;
        let speed = (&g * &vel).dot(&vel).sqrt();
        let resid = (&g * &off).dot(&off).sqrt() / (T::one() + speed);
        tangency = tangency.max(resid);
    }
    if tangency > T::lit(tol::TANGENCY_TOL) {
        return Err(DecompositionError::TangencyViolated {
            residual: to_f64(tangency),
        });
    }

    let start = ChartPoint {
        coords: path.start().clone(),
    };
    let end = ChartPoint {
        coords: path.end().clone(),
    };
    let r_start = m.curvature_at(&start)?;
    let r_end = m.curvature_at(&end)?;
    let transport = crate::transport::transport_matrix(m, path, opts)?;
    let mut worst = T::zero();
    for quad in quads {
        let before = r_start.apply(&quad[0], &quad[1], &quad[2], &quad[3]);
        let moved: Vec<DVector<T>> = quad.iter().map(|v| &transport * v).collect();
        let after = r_end.apply(&moved[0], &moved[1], &moved[2], &moved[3]);
        worst = worst.max((before - after).abs());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------
// Linear isometries and the transfer construction
// ---------------------------------------------------------------------

/// A linear isometry between tangent spaces, as a matrix on coordinate
/// components.
#[derive(Clone, Debug)]
pub struct LinearIsometry<T> {
    pub matrix: DMatrix<T>,
    pub source: ChartPoint<T>,
    pub target: ChartPoint<T>,
}

impl<T: Real> LinearIsometry<T> {
    pub fn identity(p: &ChartPoint<T>) -> Self {
        let n = p.dim();
        LinearIsometry {
            matrix: DMatrix::identity(n, n),
            source: p.clone(),
            target: p.clone(),
        }
    }

    /// |Aᵀ g̃(target) A − g(source)|: zero for an exact isometry.
    pub fn pullback_residual(
        &self,
        m_src: &ChartManifold<T>,
        m_tgt: &ChartManifold<T>,
    ) -> Result<T, GeometryError> {
        let g_src = m_src.metric_at(&self.source)?;
        let g_tgt = m_tgt.metric_at(&self.target)?;
        let pulled = self.matrix.transpose() * g_tgt * &self.matrix;
        Ok(linalg::max_abs(&(pulled - g_src)))
    }
}

/// Result of transferring one curve.
#[derive(Clone, Debug)]
pub struct CahTransfer<T> {
    pub endpoint: ChartPoint<T>,
    pub tau: LinearIsometry<T>,
    pub status: DevelopmentStatus<T>,
    pub target_dev: DevelopmentResult<T>,
}

/// Transfers `gamma` (a development in the source manifold starting at
/// the isometry's source point) into the target manifold: develops
/// φ(v_γ) from the target point and composes the transport isometry
/// τ = P̃₀¹ ∘ φ ∘ P₁⁰.
pub fn cah_transfer<T: Real>(
    m_src: &ChartManifold<T>,
    m_tgt: &ChartManifold<T>,
    phi: &LinearIsometry<T>,
    gamma: &DevelopmentResult<T>,
    opts: &IntegratorOpts<T>,
) -> Result<CahTransfer<T>, DecompositionError> {
    let start = &gamma.start().x;
    if (start - &phi.source.coords).norm() > T::lit(1e-9) {
        return Err(DecompositionError::SourceMismatch);
    }
    let start_class = m_src.inside(&phi.source);
    if start_class != crate::manifold::PointClass::Interior {
        return Err(DecompositionError::Transport(
            TransportError::BaseNotInterior(start_class),
        ));
    }

    // φ(v_γ): the stored curve values mapped through φ, interpolated on
    // the sample grid.
    let ts: Vec<T> = gamma.samples.iter().map(|(t, _)| *t).collect();
    let values: Vec<DVector<T>> = gamma
        .v_samples
        .iter()
        .map(|v| &phi.matrix * v)
        .collect();
    let curve = TangentCurve::from_samples(phi.target.clone(), ts, values);
    let target_dev = develop(m_tgt, &curve, opts)?;

    let t_tau = gamma.end_time().min(target_dev.end_time());
    let src_state = gamma.state_at(t_tau)?;
    let tgt_state = target_dev.state_at(t_tau)?;
    // τ = F̃ᵀ · φ · (Fᵀ)⁻¹ on coordinate components
    let ft_inv = src_state
        .frame
        .transpose()
        .try_inverse()
        .ok_or(GeometryError::NotInvertible)?;
    let tau_matrix = tgt_state.frame.transpose() * &phi.matrix * ft_inv;
    let tau = LinearIsometry {
        matrix: tau_matrix,
        source: ChartPoint {
            coords: src_state.x,
        },
        target: ChartPoint {
            coords: tgt_state.x.clone(),
        },
    };

    Ok(CahTransfer {
        endpoint: ChartPoint { coords: tgt_state.x },
        tau,
        status: target_dev.status,
        target_dev,
    })
}

/// Per-slice endpoints of a transferred fixed-endpoint homotopy.
#[derive(Clone, Debug)]
pub struct WelldefinedReport<T> {
    pub us: Vec<T>,
    pub endpoints: Vec<DVector<T>>,
    /// max chart distance of the transferred endpoint from the u=0 one.
    pub spread: T,
}

/// Transfers every slice of a fixed-endpoint homotopy and measures the
/// spread of the transferred endpoints: zero exactly when the transfer
/// map is well defined along this homotopy.
pub fn cah_welldefined_check<T: Real>(
    m_src: &ChartManifold<T>,
    m_tgt: &ChartManifold<T>,
    phi: &LinearIsometry<T>,
    fam: &VariationFamily<T>,
    n_slices: usize,
    opts: &IntegratorOpts<T>,
) -> Result<WelldefinedReport<T>, DecompositionError> {
    assert!(n_slices >= 2);
    if (&fam.base.coords - &phi.source.coords).norm() > T::lit(1e-9) {
        return Err(DecompositionError::SourceMismatch);
    }
    // φ(e_i) as rows: the transferred initial frame.
    let target_frame = &fam.basis * phi.matrix.transpose();

    let mut us = Vec::with_capacity(n_slices);
    let mut src_endpoints: Vec<DVector<T>> = Vec::with_capacity(n_slices);
    let mut endpoints: Vec<DVector<T>> = Vec::with_capacity(n_slices);
    for k in 0..n_slices {
        let u = T::from_usize(k).unwrap() / T::from_usize(n_slices - 1).unwrap();
        let curve = fam.curve_at(u);
        let src_dev = develop_with_frame(m_src, &curve, &fam.basis, opts)?;
        if !src_dev.status.is_completed() {
            return Err(DecompositionError::Truncated(format!(
                "source slice u={}: {:?}",
                to_f64(u),
                src_dev.status
            )));
        }
        src_endpoints.push(src_dev.endpoint().x.clone());

        let tgt_curve = curve.with_base(phi.target.clone());
        let tgt_dev = develop_with_frame(m_tgt, &tgt_curve, &target_frame, opts)?;
        if !tgt_dev.status.is_completed() {
            return Err(DecompositionError::Truncated(format!(
                "target slice u={}: {:?}",
                to_f64(u),
                tgt_dev.status
            )));
        }
        endpoints.push(tgt_dev.endpoint().x.clone());
        us.push(u);
    }

    // the homotopy must really fix its endpoints in the source
    let mut fix_spread = T::zero();
    for e in &src_endpoints {
        fix_spread = fix_spread.max((e - &src_endpoints[0]).norm());
    }
    if fix_spread > T::lit(tol::ENDPOINT_FIX_TOL) {
        return Err(DecompositionError::EndpointsNotFixed {
            spread: to_f64(fix_spread),
        });
    }

    let mut spread = T::zero();
    for e in &endpoints {
        spread = spread.max((e - &endpoints[0]).norm());
    }
    Ok(WelldefinedReport {
        us,
        endpoints,
        spread,
    })
}

// ---------------------------------------------------------------------
// Local product isometry sampling
// ---------------------------------------------------------------------

/// Sampled composite-development map and its metric pullback residual.
#[derive(Clone, Debug)]
pub struct DerhamReport<T> {
    /// Grid shape: one entry per parameter axis (axes1 then axes2).
    pub grid_dims: Vec<usize>,
    /// Parameter spacing per axis.
    pub spacing: T,
    /// f(w1,w2) per grid node (row-major over the axes), None when a
    /// development truncated.
    pub map_values: Vec<Option<DVector<T>>>,
    /// max |FD-Gram of f − block Gram of the leaf maps| over interior
    /// grid nodes.
    pub pullback_residual: T,
    /// max |dev(dev(p,w1),w2) − dev(dev(p,w2),w1)| over the grid.
    pub order_mismatch: T,
    pub invalid_cells: usize,
    /// check_parallel residuals of the two distributions on probe paths.
    pub parallel_residuals: (T, T),
}

/// Samples f(w1,w2) = dev(dev(p,w1)(1), w2)(1) over a structured grid in
/// D1(p)×D2(p) and compares its finite-difference Gram matrix against
/// the block Gram of the factor maps.
#[allow(clippy::too_many_arguments)]
pub fn derham_local_isometry<T: Real>(
    m: &ChartManifold<T>,
    d1: &Distribution<T>,
    d2: &Distribution<T>,
    p: &ChartPoint<T>,
    axes1: &[DVector<T>],
    axes2: &[DVector<T>],
    half_extent: T,
    n_per_axis: usize,
    parallel_tol: T,
    opts: &IntegratorOpts<T>,
) -> Result<DerhamReport<T>, DecompositionError> {
    assert!(n_per_axis >= 3, "need interior nodes for differences");
    check_complementary(d1, d2, p.coords.as_slice())?;

    // parallelism probe: developments from p along each axis
    let mut parallel_residuals = (T::zero(), T::zero());
    for (dist, slot) in [(d1, 0), (d2, 1)] {
        let mut worst = T::zero();
        for axis in axes1.iter().chain(axes2.iter()) {
            let dev = geodesic(m, p, axis.as_slice().to_vec(), half_extent, opts)?;
            if !dev.status.is_completed() {
                continue;
            }
            let path = SampledPath::from_development(&dev);
            worst = worst.max(check_parallel(m, dist, &path, opts)?);
        }
        if slot == 0 {
            parallel_residuals.0 = worst;
        } else {
            parallel_residuals.1 = worst;
        }
        if worst > parallel_tol {
            return Err(DecompositionError::NotParallel {
                residual: to_f64(worst),
            });
        }
    }

    let k1 = axes1.len();
    let k2 = axes2.len();
    let k = k1 + k2;
    let grid_dims = vec![n_per_axis; k];
    let spacing = (half_extent + half_extent) / T::from_usize(n_per_axis - 1).unwrap();
    let n_nodes: usize = grid_dims.iter().product();

    let offset = |idx: usize| -> T {
        T::from_usize(idx).unwrap() * spacing - half_extent
    };
    let node_params = |mut flat: usize| -> Vec<usize> {
        let mut out = vec![0usize; k];
        for axis in (0..k).rev() {
            out[axis] = flat % n_per_axis;
            flat /= n_per_axis;
        }
        out
    };

    let composite = |w1: &DVector<T>, w2: &DVector<T>| -> Result<Option<DVector<T>>, DecompositionError> {
        let one = T::one();
        let leg1 = geodesic(m, p, w1.as_slice().to_vec(), one, opts)?;
        if !leg1.status.is_completed() {
            return Ok(None);
        }
        let q1 = ChartPoint {
            coords: leg1.endpoint().x.clone(),
        };
        let moved = leg1.endpoint().frame.transpose() * w2;
        let leg2 = geodesic(m, &q1, moved.as_slice().to_vec(), one, opts)?;
        if !leg2.status.is_completed() {
            return Ok(None);
        }
        Ok(Some(leg2.endpoint().x.clone()))
    };

    let vec_from = |axes: &[DVector<T>], params: &[usize], base_axis: usize| -> DVector<T> {
        let n = m.dim();
        let mut w = DVector::zeros(n);
        for (i, axis) in axes.iter().enumerate() {
            w += axis * offset(params[base_axis + i]);
        }
        w
    };

    // evaluate f over the grid, both composition orders
    let mut map_values: Vec<Option<DVector<T>>> = Vec::with_capacity(n_nodes);
    let mut order_mismatch = T::zero();
    let mut invalid = 0usize;
    // zero-vector developments are degenerate geodesics; guard the zero
    // w1/w2 by skipping the leg (dev of 0 is the constant point)
    let composite_or_point = |w1: &DVector<T>, w2: &DVector<T>| -> Result<Option<DVector<T>>, DecompositionError> {
        let zero1 = w1.norm() == T::zero();
        let zero2 = w2.norm() == T::zero();
        match (zero1, zero2) {
            (true, true) => Ok(Some(p.coords.clone())),
            (true, false) => {
                let leg = geodesic(m, p, w2.as_slice().to_vec(), T::one(), opts)?;
                Ok(leg.status.is_completed().then(|| leg.endpoint().x.clone()))
            }
            (false, _) => composite(w1, w2),
        }
    };

    for flat in 0..n_nodes {
        let params = node_params(flat);
        let w1 = vec_from(axes1, &params, 0);
        let w2 = vec_from(axes2, &params, k1);
        let f12 = composite_or_point(&w1, &w2)?;
        let f21 = {
            let zero2 = w2.norm() == T::zero();
            if zero2 {
                composite_or_point(&w2, &w1).and_then(|v| match v {
                    Some(_) => {
                        let leg = geodesic(m, p, w1.as_slice().to_vec(), T::one(), opts)?;
                        Ok(leg.status.is_completed().then(|| leg.endpoint().x.clone()))
                    }
                    None => Ok(None),
                })?
            } else {
                let leg1 = geodesic(m, p, w2.as_slice().to_vec(), T::one(), opts)?;
                if leg1.status.is_completed() {
                    let q = ChartPoint {
                        coords: leg1.endpoint().x.clone(),
                    };
                    let moved = leg1.endpoint().frame.transpose() * &w1;
                    if moved.norm() == T::zero() {
                        Some(q.coords.clone())
                    } else {
                        let leg2 = geodesic(m, &q, moved.as_slice().to_vec(), T::one(), opts)?;
                        leg2.status.is_completed().then(|| leg2.endpoint().x.clone())
                    }
                } else {
                    None
                }
            }
        };
        match (&f12, &f21) {
            (Some(a), Some(b)) => order_mismatch = order_mismatch.max((a - b).norm()),
            _ => invalid += 1,
        }
        map_values.push(f12);
    }

    // factor maps on the marginal grids
    let marginal = |axes: &[DVector<T>]| -> Result<Vec<Option<DVector<T>>>, DecompositionError> {
        let count = n_per_axis.pow(axes.len() as u32);
        let mut out = Vec::with_capacity(count);
        for flat in 0..count {
            let mut rest = flat;
            let mut params = vec![0usize; axes.len()];
            for axis in (0..axes.len()).rev() {
                params[axis] = rest % n_per_axis;
                rest /= n_per_axis;
            }
            let mut w = DVector::zeros(m.dim());
            for (i, axis) in axes.iter().enumerate() {
                w += axis * offset(params[i]);
            }
            if w.norm() == T::zero() {
                out.push(Some(p.coords.clone()));
                continue;
            }
            let leg = geodesic(m, p, w.as_slice().to_vec(), T::one(), opts)?;
            out.push(leg.status.is_completed().then(|| leg.endpoint().x.clone()));
        }
        Ok(out)
    };
    let f1_values = marginal(axes1)?;
    let f2_values = marginal(axes2)?;

    // FD Gram matrices: central differences with the grid spacing
    let fd_gram = |values: &[Option<DVector<T>>],
                   dims: usize,
                   params: &[usize]|
     -> Result<Option<DMatrix<T>>, DecompositionError> {
        // interior check
        if params.iter().any(|&q| q == 0 || q == n_per_axis - 1) {
            return Ok(None);
        }
        let flat_of = |params: &[usize]| -> usize {
            params.iter().fold(0usize, |acc, &q| acc * n_per_axis + q)
        };
        let center = match &values[flat_of(params)] {
            Some(c) => c.clone(),
            None => return Ok(None),
        };
        let mut diffs: Vec<DVector<T>> = Vec::with_capacity(dims);
        for axis in 0..dims {
            let mut hi = params.to_vec();
            let mut lo = params.to_vec();
            hi[axis] += 1;
            lo[axis] -= 1;
            match (&values[flat_of(&hi)], &values[flat_of(&lo)]) {
                (Some(h), Some(l)) => diffs.push((h - l) / (spacing + spacing)),
                _ => return Ok(None),
            }
        }
        let g = m.metric_at_coords(center.as_slice())?;
        let mut gram = DMatrix::zeros(dims, dims);
        for i in 0..dims {
            for j in 0..dims {
                gram[(i, j)] = (&g * &diffs[i]).dot(&diffs[j]);
            }
        }
        Ok(Some(gram))
    };

    let mut pullback_residual = T::zero();
    for flat in 0..n_nodes {
        let params = node_params(flat);
        let full = match fd_gram(&map_values, k, &params)? {
            Some(g) => g,
            None => continue,
        };
        let g1 = match fd_gram(&f1_values, k1, &params[..k1])? {
            Some(g) => g,
            None => continue,
        };
        let g2 = match fd_gram(&f2_values, k2, &params[k1..])? {
            Some(g) => g,
            None => continue,
        };
        let mut block = DMatrix::zeros(k, k);
        block.view_mut((0, 0), (k1, k1)).copy_from(&g1);
        block.view_mut((k1, k1), (k2, k2)).copy_from(&g2);
        pullback_residual = pullback_residual.max(linalg::max_abs(&(full - block)));
    }

    Ok(DerhamReport {
        grid_dims,
        spacing,
        map_values,
        pullback_residual,
        order_mismatch,
        invalid_cells: invalid,
        parallel_residuals,
    })
}

// ---------------------------------------------------------------------
// Leaf tracing
// ---------------------------------------------------------------------

/// A traced leaf with its tangency diagnostic and recurrence statistics
/// (torus-aware; recurrence is only reported when the manifold has
/// periodic axes).
#[derive(Clone, Debug)]
pub struct LeafTrace<T> {
    pub dev: DevelopmentResult<T>,
    /// max over samples of |(I − P(γ(t))) γ'(t)|_g.
    pub tangency_residual: T,
    pub min_return_distance: Option<T>,
    pub min_return_time: Option<T>,
    pub coverage_fraction: Option<T>,
}

/// Options for the recurrence statistics.
#[derive(Clone, Copy, Debug)]
pub struct RecurrenceOpts<T> {
    /// Returns are only counted after this time.
    pub t_min: T,
    /// Ball radius of the ε-net coverage estimate.
    pub epsilon: T,
    /// Coverage grid resolution per periodic axis.
    pub grid_per_axis: usize,
}

impl<T: Real> Default for RecurrenceOpts<T> {
    fn default() -> Self {
        RecurrenceOpts {
            t_min: T::lit(0.5),
            epsilon: T::lit(0.05),
            grid_per_axis: 100,
        }
    }
}

/// Develops a steering curve constrained to the distribution and gathers
/// recurrence statistics of the projected orbit.
pub fn leaf_trace<T: Real>(
    m: &ChartManifold<T>,
    d: &Distribution<T>,
    steering: &TangentCurve<T>,
    rec: &RecurrenceOpts<T>,
    opts: &IntegratorOpts<T>,
) -> Result<LeafTrace<T>, DecompositionError> {
    let p = steering.base.clone();
    let proj0 = d.projector_at(p.coords.as_slice())?;
    let membership = membership_residual(m, &proj0, &p, steering, steering.horizon())?;
    if membership > T::lit(tol::MEMBERSHIP_TOL) {
        return Err(DecompositionError::MembershipViolated {
            residual: to_f64(membership),
        });
    }

    let dev = develop(m, steering, opts)?;

    // tangency along the way: γ' = Fᵀ v at each sample
    let mut tangency = T::zero();
    for ((_, state), v) in dev.samples.iter().zip(&dev.v_samples) {
        let vel = state.frame.transpose() * v;
        let x = state.x.as_slice();
        let pmat = d.projector_at(x)?;
        let g = m.metric_at_coords(x)?;
        let off = &vel - &pmat * &vel;
        tangency = tangency.max((&g * &off).dot(&off).sqrt());
    }

    let periodic = m.periodic_axes();
    let (min_return_distance, min_return_time, coverage_fraction) = if periodic.is_empty() {
        (None, None, None)
    } else {
        let mut best = T::lit(f64::INFINITY);
        let mut best_t = T::zero();
        for (t, state) in &dev.samples {
            if *t < rec.t_min {
                continue;
            }
            let dist = m.report_distance(&state.x, &p.coords);
            if dist < best {
                best = dist;
                best_t = *t;
            }
        }
        // refine the closest approach between samples on the
        // interpolated trajectory
        if best.is_finite() && dev.samples.len() >= 2 {
            let path = SampledPath::from_development(&dev);
            let lo = (best_t - T::lit(tol::DEFAULT_STEP)).max(rec.t_min).max(path.t_start());
            let hi = (best_t + T::lit(tol::DEFAULT_STEP)).min(path.t_end());
            let (t_star, d_star) = refine_min(
                |t| m.report_distance(&path.position(t), &p.coords),
                lo,
                hi,
            );
            if d_star < best {
                best = d_star;
                best_t = t_star;
            }
        }

        // ε-net coverage of the projected torus by balls around the orbit
        let fraction = coverage_fraction(m, &dev, periodic, rec);
        (Some(best), Some(best_t), Some(fraction))
    };

    Ok(LeafTrace {
        dev,
        tangency_residual: tangency,
        min_return_distance,
        min_return_time,
        coverage_fraction,
    })
}

/// Golden-section minimisation of a unimodal bracket.
fn refine_min<T: Real>(f: impl Fn(T) -> T, mut lo: T, mut hi: T) -> (T, T) {
    let phi = T::lit(0.618_033_988_749_894_8);
    let mut a = hi - (hi - lo) * phi;
    let mut b = lo + (hi - lo) * phi;
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..90 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - (hi - lo) * phi;
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + (hi - lo) * phi;
            fb = f(b);
        }
    }
    let mid = (lo + hi) * T::lit(0.5);
    (mid, f(mid))
}

fn coverage_fraction<T: Real>(
    m: &ChartManifold<T>,
    dev: &DevelopmentResult<T>,
    periodic: &[usize],
    rec: &RecurrenceOpts<T>,
) -> T {
    let _ = m;
    let d = periodic.len();
    let grid = rec.grid_per_axis;
    let eps = rec.epsilon;

    // Subsample the orbit so consecutive points are ≲ ε/2 apart.
    let mut pts: Vec<Vec<T>> = Vec::new();
    let mut last: Option<Vec<T>> = None;
    let half_eps = eps * T::lit(0.5);
    for (_, state) in &dev.samples {
        let q: Vec<T> = periodic
            .iter()
            .map(|&axis| {
                let v = state.x[axis];
                v - v.floor()
            })
            .collect();
        let keep = match &last {
            None => true,
            Some(prev) => {
                let mut acc = T::zero();
                for (a, b) in q.iter().zip(prev) {
                    let mut diff = (*a - *b).abs();
                    diff = diff.min(T::one() - diff);
                    acc += diff * diff;
                }
                acc.sqrt() > half_eps * T::lit(0.5)
            }
        };
        if keep {
            last = Some(q.clone());
            pts.push(q);
        }
    }

    // Hash the points into bins of size ~ε for neighbourhood lookups.
    let bins_per_axis = (1.0 / rec.epsilon.to_f64().unwrap_or(0.05)).ceil() as usize;
    let bin_of = |q: &[T]| -> usize {
        let mut acc = 0usize;
        for &c in q {
            let b = (c.to_f64().unwrap_or(0.0) * bins_per_axis as f64).floor() as usize
                % bins_per_axis;
            acc = acc * bins_per_axis + b;
        }
        acc
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); bins_per_axis.pow(d as u32)];
    for (i, q) in pts.iter().enumerate() {
        buckets[bin_of(q)].push(i);
    }

    let torus_dist2 = |a: &[T], b: &[T]| -> T {
        let mut acc = T::zero();
        for (x, y) in a.iter().zip(b) {
            let mut diff = (*x - *y).abs();
            diff = diff.min(T::one() - diff);
            acc += diff * diff;
        }
        acc
    };

    let eps2 = eps * eps;
    let cells: usize = grid.pow(d as u32);
    let mut covered = 0usize;
    let mut center = vec![T::zero(); d];
    for flat in 0..cells {
        let mut rest = flat;
        for axis in (0..d).rev() {
            let idx = rest % grid;
            rest /= grid;
            center[axis] =
                (T::from_usize(idx).unwrap() + T::lit(0.5)) / T::from_usize(grid).unwrap();
        }
        // search neighbouring bins
        let mut hit = false;
        let mut neighbour = vec![0isize; d];
        'outer: loop {
            // iterate -1..=1 per axis via odometer
            let mut bin_idx = 0usize;
            for axis in 0..d {
                let c = center[axis].to_f64().unwrap_or(0.0);
                let base = (c * bins_per_axis as f64).floor() as isize + neighbour[axis];
                let wrapped = base.rem_euclid(bins_per_axis as isize) as usize;
                bin_idx = bin_idx * bins_per_axis + wrapped;
            }
            for &pi in &buckets[bin_idx] {
                if torus_dist2(&center, &pts[pi]) <= eps2 {
                    hit = true;
                    break;
                }
            }
            if hit {
                break 'outer;
            }
            // odometer over {-1,0,1}^d
            let mut axis = 0;
            loop {
                if axis == d {
                    break 'outer;
                }
                neighbour[axis] += 1;
                if neighbour[axis] <= 1 {
                    break;
                }
                neighbour[axis] = -1;
                axis += 1;
            }
        }
        if hit {
            covered += 1;
        }
    }
    T::from_usize(covered).unwrap() / T::from_usize(cells).unwrap()
}
