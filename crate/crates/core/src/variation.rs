//! Variation fields of one-parameter families of developments.
//!
//! For a family v(u,t) = Σ v_i(u,t) e_i in T_pM with Φ(u,t) the
//! development of v(u,·), the field ∂Φ/∂u = Σ U_i E_i and the frame
//! rotation coefficients X_{ij} = ⟨∇_{∂u}E_i, E_j⟩ obey a linear
//! second-order system along the base development, driven by the
//! frame-pulled curvature. The solver integrates that system coupled to
//! the base development so every RK4 stage sees a consistent frame; an
//! independent central-difference oracle cross-checks it.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::manifold::{ChartManifold, ChartPoint, GeometryError};
use crate::transport::{
    develop_with_frame, DevelopmentStatus, IntegratorOpts, TangentCurve, TransportError,
};
use crate::{tol, Real};

#[derive(Clone, Debug, Error)]
pub enum VariationError {
    #[error("family basis is not g-orthonormal at the base point (residual {0})")]
    BasisNotOrthonormal(f64),
    #[error("family components must be expressions in (u, t) exactly")]
    BadComponents,
    #[error("base development did not complete interior: {0}")]
    BaseDevelopment(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A smooth family (u,t) ↦ v(u,t) ∈ T_pM, components against a fixed
/// g-orthonormal basis of T_pM.
#[derive(Clone, Debug)]
pub struct VariationFamily<T> {
    pub base: ChartPoint<T>,
    /// v_i(u,t): one expression over the variable `u` and time `t` per
    /// basis direction.
    pub components: Vec<Expr>,
    /// Rows are the basis vectors e_i in chart coordinates.
    pub basis: DMatrix<T>,
    pub horizon: T,
}

impl<T: Real> VariationFamily<T> {
    /// Validates dimensions and the orthonormality of `basis` at `base`.
    pub fn new(
        m: &ChartManifold<T>,
        base: ChartPoint<T>,
        components: Vec<Expr>,
        basis: DMatrix<T>,
        horizon: T,
    ) -> Result<Self, VariationError> {
        let n = m.dim();
        if components.len() != n || components.iter().any(|c| c.n_vars() != 1) {
            return Err(VariationError::BadComponents);
        }
        let g = m.metric_at(&base)?;
        let gram = &basis * &g * basis.transpose();
        let resid = (&gram - DMatrix::<T>::identity(n, n))
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()));
        if resid > T::lit(tol::BASIS_ORTHO_TOL) {
            return Err(VariationError::BasisNotOrthonormal(
                resid.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(VariationFamily {
            base,
            components,
            basis,
            horizon,
        })
    }

    /// The curve v(u0, ·) as expressions in t (components against the
    /// family basis).
    pub fn curve_at(&self, u0: T) -> TangentCurve<T> {
        let u = u0.to_f64().expect("scalar converts to f64");
        let comps: Vec<Expr> = self
            .components
            .iter()
            .map(|c| c.bind(&[Some(u)]))
            .collect();
        TangentCurve::from_exprs(self.base.clone(), comps, self.horizon)
    }

    fn value(&self, u0: T, t: T) -> Result<DVector<T>, EvalError> {
        let mut v = DVector::zeros(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            v[i] = c.eval(&[u0], t)?;
        }
        Ok(v)
    }

    fn dt(&self, u0: T, t: T) -> Result<DVector<T>, EvalError> {
        let mut v = DVector::zeros(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            v[i] = c.eval_with_dt(&[u0], t)?.1;
        }
        Ok(v)
    }

    /// ∂_u v_i by forward-mode differentiation in u.
    fn du(&self, u0: T, t: T) -> Result<DVector<T>, EvalError> {
        let mut v = DVector::zeros(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            v[i] = c.eval_with_grad(&[u0], t)?.1[0];
        }
        Ok(v)
    }

    /// ∂_u ∂_t v_i: exact t-derivative, central difference in u.
    fn du_dt(&self, u0: T, t: T) -> Result<DVector<T>, EvalError> {
        let du = T::lit(tol::FAMILY_FD_STEP);
        let hi = self.dt(u0 + du, t)?;
        let lo = self.dt(u0 - du, t)?;
        Ok((hi - lo) / (du + du))
    }
}

/// Solution of the variation system sampled on the base grid.
#[derive(Clone, Debug)]
pub struct VariationField<T> {
    pub ts: Vec<T>,
    /// U_i(t): components of ∂Φ/∂u in the parallel frame E_i.
    pub u: Vec<DVector<T>>,
    /// X_{ij}(t): frame rotation coefficients, skew-symmetric.
    pub x: Vec<DMatrix<T>>,
}

impl<T: Real> VariationField<T> {
    /// Worst violation of X + Xᵀ = 0 over the whole trajectory.
    pub fn max_skew_residual(&self) -> T {
        let mut worst = T::zero();
        for x in &self.x {
            let s = x + x.transpose();
            worst = worst.max(s.iter().fold(T::zero(), |acc, &v| acc.max(v.abs())));
        }
        worst
    }

    pub fn end_u(&self) -> &DVector<T> {
        self.u.last().unwrap()
    }
}

/// Frame-pulled curvature entries RA[a,b,c,d] = R(E_a,E_b,E_c,E_d) from
/// the lowered coordinate tensor and the frame rows.
fn pull_curvature<T: Real>(r: &crate::manifold::CurvatureTensor<T>, frame: &DMatrix<T>) -> Vec<T> {
    let n = frame.nrows();
    let idx = |a: usize, b: usize, c: usize, d: usize| ((a * n + b) * n + c) * n + d;
    // contract one index at a time
    let mut cur: Vec<T> = (0..n * n * n * n)
        .map(|q| {
            let d = q % n;
            let c = (q / n) % n;
            let b = (q / (n * n)) % n;
            let a = q / (n * n * n);
            r.get(a, b, c, d)
        })
        .collect();
    for slot in 0..4 {
        let mut next = vec![T::zero(); n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut acc = T::zero();
                        for p in 0..n {
                            let src = match slot {
                                0 => idx(p, b, c, d),
                                1 => idx(a, p, c, d),
                                2 => idx(a, b, p, d),
                                _ => idx(a, b, c, p),
                            };
                            let f = match slot {
                                0 => frame[(a, p)],
                                1 => frame[(b, p)],
                                2 => frame[(c, p)],
                                _ => frame[(d, p)],
                            };
                            acc += f * cur[src];
                        }
                        next[idx(a, b, c, d)] = acc;
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Integrates the variation system along the development of v(u0,·).
///
/// State per time: position x, parallel frame F of the basis e_i, U, U'
/// and X. Curvature is evaluated at each RK4 stage point and pulled
/// through the stage frame.
pub fn solve_variation<T: Real>(
    m: &ChartManifold<T>,
    fam: &VariationFamily<T>,
    u0: T,
    opts: &IntegratorOpts<T>,
) -> Result<VariationField<T>, VariationError> {
    let n = m.dim();

    // The base development must complete interior before the coupled run.
    let base_dev = develop_with_frame(m, &fam.curve_at(u0), &fam.basis, opts)?;
    match base_dev.status {
        DevelopmentStatus::Completed => {}
        other => return Err(VariationError::BaseDevelopment(format!("{other:?}"))),
    }

    // layout: [x | F | U | V | X]
    let off_f = n;
    let off_u = n + n * n;
    let off_v = off_u + n;
    let off_x = off_v + n;
    let state_len = off_x + n * n;

    let flat = m.is_flat();
    let rhs = |t: T, y: &DVector<T>| -> Result<DVector<T>, TransportError> {
        let x: Vec<T> = (0..n).map(|i| y[i]).collect();
        if !m.in_domain(&x) {
            return Err(TransportError::Geometry(GeometryError::OutOfDomain(
                format!("{:?}", x),
            )));
        }
        let v = fam.value(u0, t).map_err(TransportError::Eval)?;
        let vdt = fam.dt(u0, t).map_err(TransportError::Eval)?;
        let vmix = fam.du_dt(u0, t).map_err(TransportError::Eval)?;

        let frame = DMatrix::from_fn(n, n, |i, j| y[off_f + i * n + j]);
        let mut dy = DVector::zeros(state_len);

        // development part
        let mut w = vec![T::zero(); n];
        for j in 0..n {
            let mut acc = T::zero();
            for i in 0..n {
                acc += v[i] * frame[(i, j)];
            }
            w[j] = acc;
            dy[j] = acc;
        }
        let ra = if flat {
            None
        } else {
            let gamma = m.christoffel_at_coords(&x)?;
            for i in 0..n {
                for j in 0..n {
                    let mut acc = T::zero();
                    for k in 0..n {
                        let mut al = T::zero();
                        for l in 0..n {
                            al += gamma[j][(k, l)] * w[l];
                        }
                        acc += frame[(i, k)] * al;
                    }
                    dy[off_f + i * n + j] = -acc;
                }
            }
            let r = m.curvature_at_coords(&x)?;
            Some(pull_curvature(&r, &frame))
        };

        let ridx = |a: usize, b: usize, c: usize, d: usize| ((a * n + b) * n + c) * n + d;

        // dU = V ; dV_i = Σ v_k v_l U_m R(E_k,E_m,E_l,E_i) + ∂u∂t v_i + Σ_j ∂t v_j X_{ji}
        for i in 0..n {
            dy[off_u + i] = y[off_v + i];
            let mut acc = vmix[i];
            for j in 0..n {
                acc += vdt[j] * y[off_x + j * n + i];
            }
            if let Some(ra) = &ra {
                for k in 0..n {
                    if v[k] == T::zero() {
                        continue;
                    }
                    for l in 0..n {
                        if v[l] == T::zero() {
                            continue;
                        }
                        for mm in 0..n {
                            acc += v[k] * v[l] * y[off_u + mm] * ra[ridx(k, mm, l, i)];
                        }
                    }
                }
            }
            dy[off_v + i] = acc;
        }

        // dX_{ij} = Σ v_l U_k R(E_l,E_k,E_i,E_j)
        if let Some(ra) = &ra {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = T::zero();
                    for l in 0..n {
                        if v[l] == T::zero() {
                            continue;
                        }
                        for k in 0..n {
                            acc += v[l] * y[off_u + k] * ra[ridx(l, k, i, j)];
                        }
                    }
                    dy[off_x + i * n + j] = acc;
                }
            }
        }
        Ok(dy)
    };

    let mut y = DVector::zeros(state_len);
    for i in 0..n {
        y[i] = fam.base.coords[i];
    }
    for i in 0..n {
        for j in 0..n {
            y[off_f + i * n + j] = fam.basis[(i, j)];
        }
    }
    let du0 = fam.du(u0, T::zero())?;
    for i in 0..n {
        y[off_v + i] = du0[i];
    }

    let span = fam.horizon;
    let n_steps = (span / opts.step).ceil().to_usize().unwrap_or(1).max(1);
    let h = span / T::from_usize(n_steps).unwrap();

    let mut ts = Vec::with_capacity(n_steps + 1);
    let mut us = Vec::with_capacity(n_steps + 1);
    let mut xs = Vec::with_capacity(n_steps + 1);
    let record = |t: T,
                  y: &DVector<T>,
                  ts: &mut Vec<T>,
                  us: &mut Vec<DVector<T>>,
                  xs: &mut Vec<DMatrix<T>>| {
        ts.push(t);
        us.push(DVector::from_fn(n, |i, _| y[off_u + i]));
        xs.push(DMatrix::from_fn(n, n, |i, j| y[off_x + i * n + j]));
    };
    record(T::zero(), &y, &mut ts, &mut us, &mut xs);

    for k in 0..n_steps {
        let t0 = h * T::from_usize(k).unwrap();
        let t1 = if k + 1 == n_steps {
            span
        } else {
            h * T::from_usize(k + 1).unwrap()
        };
        y = crate::transport::rk::rk4_step(&rhs, t0, &y, t1 - t0)?;
        record(t1, &y, &mut ts, &mut us, &mut xs);
    }

    Ok(VariationField { ts, u: us, x: xs })
}

/// Independent oracle: central difference of the development map in `u`,
/// expressed in the parallel frame at `u0` by solving the frame linear
/// system at each sample.
pub fn variation_fd_oracle<T: Real>(
    m: &ChartManifold<T>,
    fam: &VariationFamily<T>,
    u0: T,
    du: T,
    opts: &IntegratorOpts<T>,
) -> Result<(Vec<T>, Vec<DVector<T>>), VariationError> {
    let dev0 = develop_with_frame(m, &fam.curve_at(u0), &fam.basis, opts)?;
    let dev_hi = develop_with_frame(m, &fam.curve_at(u0 + du), &fam.basis, opts)?;
    let dev_lo = develop_with_frame(m, &fam.curve_at(u0 - du), &fam.basis, opts)?;
    for dev in [&dev0, &dev_hi, &dev_lo] {
        if !dev.status.is_completed() {
            return Err(VariationError::BaseDevelopment(format!("{:?}", dev.status)));
        }
    }
    let count = dev0
        .samples
        .len()
        .min(dev_hi.samples.len())
        .min(dev_lo.samples.len());
    let scale = T::one() / (du + du);
    let mut ts = Vec::with_capacity(count);
    let mut us = Vec::with_capacity(count);
    for k in 0..count {
        let (t, state) = &dev0.samples[k];
        let delta = (&dev_hi.samples[k].1.x - &dev_lo.samples[k].1.x) * scale;
        // coordinate components = Fᵀ · frame components
        let ft = state.frame.transpose();
        let u = ft
            .lu()
            .solve(&delta)
            .ok_or(TransportError::Geometry(GeometryError::NotInvertible))?;
        ts.push(*t);
        us.push(u);
    }
    Ok((ts, us))
}
