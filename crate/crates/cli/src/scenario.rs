//! Scenario file schema and construction of engine objects from it.
//!
//! The top level is validated by hand so unknown keys are rejected with
//! their names; nested structures use serde's strict deserialization.

use serde::Deserialize;
use serde_json::Value;

use devroll_core::decomposition::{slab_torus_distributions, Distribution};
use devroll_core::manifold::{
    self, euclidean, flat_torus, hyperbolic_halfplane, slab, slab_torus, sphere_stereo,
};
use devroll_core::{ChartManifold64, ChartPoint, Expr, IntegratorOpts, Method, TangentCurve};

/// Anything wrong with the scenario file: maps to exit code 2.
#[derive(Debug)]
pub struct InvalidScenario(pub String);

impl std::fmt::Display for InvalidScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid scenario: {}", self.0)
    }
}

impl std::error::Error for InvalidScenario {}

fn invalid(msg: impl Into<String>) -> InvalidScenario {
    InvalidScenario(msg.into())
}

pub const SCHEMA_VERSION: u64 = 1;

pub const COMMANDS: &[&str] = &[
    "develop",
    "geodesic",
    "transport",
    "curvature",
    "variation",
    "check-parallel",
    "parallelogram",
    "curvature-split",
    "cah-transfer",
    "cah-welldefined",
    "derham-split",
    "leaf-trace",
    "demo-counterexample",
];

/// Parsed scenario, with command parameters still schema-typed.
pub struct Scenario {
    pub command: String,
    pub manifold: ManifoldSpec,
    pub seed: u64,
    pub integrator: IntegratorSpec,
    pub output: OutputSpec,
    pub params: Value,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, InvalidScenario> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| invalid(format!("not valid JSON: {e}")))?;
        let obj = root
            .as_object()
            .ok_or_else(|| invalid("top level must be a JSON object"))?;

        const KNOWN: &[&str] = &[
            "schema",
            "command",
            "manifold",
            "seed",
            "integrator",
            "output",
            "params",
        ];
        for key in obj.keys() {
            if !KNOWN.contains(&key.as_str()) {
                return Err(invalid(format!(
                    "unknown key `{key}` (expected one of {})",
                    KNOWN.join(", ")
                )));
            }
        }

        let schema = obj
            .get("schema")
            .and_then(Value::as_u64)
            .ok_or_else(|| invalid("missing or non-integer `schema`"))?;
        if schema != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema version {schema} (this build reads {SCHEMA_VERSION})"
            )));
        }

        let command = obj
            .get("command")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("missing `command`"))?
            .to_string();
        if !COMMANDS.contains(&command.as_str()) {
            return Err(invalid(format!(
                "unknown command `{command}` (expected one of {})",
                COMMANDS.join(", ")
            )));
        }

        let manifold_value = obj
            .get("manifold")
            .ok_or_else(|| invalid("missing `manifold`"))?;
        let manifold: ManifoldSpec = serde_json::from_value(manifold_value.clone())
            .map_err(|e| invalid(format!("manifold: {e}")))?;

        let seed = match obj.get("seed") {
            None => 0,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| invalid("`seed` must be a non-negative integer"))?,
        };

        let integrator: IntegratorSpec = match obj.get("integrator") {
            None => IntegratorSpec::default(),
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| invalid(format!("integrator: {e}")))?,
        };

        let output: OutputSpec = match obj.get("output") {
            None => OutputSpec::default(),
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| invalid(format!("output: {e}")))?,
        };

        let params = obj.get("params").cloned().unwrap_or(Value::Null);

        Ok(Scenario {
            command,
            manifold,
            seed,
            integrator,
            output,
            params,
        })
    }

    pub fn command_params<'de, P: Deserialize<'de>>(&'de self) -> Result<P, InvalidScenario> {
        P::deserialize(&self.params).map_err(|e| invalid(format!("params: {e}")))
    }
}

// ---------------------------------------------------------------------
// manifold
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    Builtin {
        name: String,
        #[serde(default)]
        params: BuiltinParams,
    },
    Expr {
        dim: usize,
        g: Vec<Vec<String>>,
        #[serde(default)]
        domain: Option<String>,
        #[serde(default)]
        boundary: Option<String>,
        #[serde(default)]
        name: Option<String>,
    },
    Product {
        a: Box<ManifoldSpec>,
        b: Box<ManifoldSpec>,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinParams {
    pub radius: Option<f64>,
    pub dim: Option<usize>,
    pub length: Option<f64>,
    pub r: Option<f64>,
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<ChartManifold64, InvalidScenario> {
        match self {
            ManifoldSpec::Builtin { name, params } => match name.as_str() {
                "euclidean" => Ok(euclidean(params.dim.unwrap_or(2))),
                "sphere_stereo" => Ok(sphere_stereo(params.radius.unwrap_or(1.0))),
                "hyperbolic_halfplane" => Ok(hyperbolic_halfplane()),
                "flat_torus" => Ok(flat_torus(params.dim.unwrap_or(2))),
                "slab" => Ok(slab(params.length.unwrap_or(1.0))),
                "slab_torus" => Ok(slab_torus(params.r.unwrap_or(0.5))),
                other => Err(invalid(format!(
                    "unknown builtin manifold `{other}` (expected euclidean, sphere_stereo, \
                     hyperbolic_halfplane, flat_torus, slab, slab_torus)"
                ))),
            },
            ManifoldSpec::Expr {
                dim,
                g,
                domain,
                boundary,
                name,
            } => {
                if g.len() != *dim || g.iter().any(|row| row.len() != *dim) {
                    return Err(invalid(format!("metric must be a {dim}x{dim} matrix")));
                }
                let domain = match domain {
                    None => vec![],
                    Some(src) => vec![parse_inequality(src, *dim)?],
                };
                let boundary = match boundary {
                    None => None,
                    Some(src) => Some(
                        Expr::parse(src, *dim)
                            .map_err(|e| invalid(format!("boundary: {e}")))?,
                    ),
                };
                manifold::from_exprs(
                    name.clone().unwrap_or_else(|| "expr".to_string()),
                    *dim,
                    g,
                    domain,
                    boundary,
                )
                .map_err(|e| invalid(format!("metric: {e}")))
            }
            ManifoldSpec::Product { a, b } => {
                let ma = a.build()?;
                let mb = b.build()?;
                manifold::product(&ma, &mb).map_err(|e| invalid(e.to_string()))
            }
        }
    }

    /// The slab-torus slope when this scenario is about one; distribution
    /// specs that reference the factors need it.
    pub fn slab_torus_r(&self) -> Option<f64> {
        match self {
            ManifoldSpec::Builtin { name, params } if name == "slab_torus" => {
                Some(params.r.unwrap_or(0.5))
            }
            _ => None,
        }
    }
}

/// `"lhs>rhs"` or a bare expression read as `expr > 0`.
fn parse_inequality(src: &str, dim: usize) -> Result<Expr, InvalidScenario> {
    let parse = |s: &str| Expr::parse(s, dim).map_err(|e| invalid(format!("domain: {e}")));
    match src.split_once('>') {
        None => parse(src),
        Some((lhs, rhs)) => {
            let l = parse(lhs.trim())?;
            let r = parse(rhs.trim())?;
            Ok(Expr::linear_combination(&[(1.0, l), (-1.0, r)]))
        }
    }
}

// ---------------------------------------------------------------------
// integrator
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub step: Option<f64>,
    pub method: Option<String>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_steps: Option<usize>,
}

impl IntegratorSpec {
    pub fn build(&self) -> Result<IntegratorOpts<f64>, InvalidScenario> {
        let mut opts = IntegratorOpts::default();
        if let Some(step) = self.step {
            opts.step = step;
        }
        match self.method.as_deref() {
            None | Some("rk4") => {}
            Some("rkf45") => {
                opts.method = Method::Rkf45 {
                    rel_tol: self.rel_tol.unwrap_or(1e-10),
                    abs_tol: self.abs_tol.unwrap_or(1e-12),
                };
            }
            Some(other) => {
                return Err(invalid(format!(
                    "unknown integrator method `{other}` (expected rk4 or rkf45)"
                )))
            }
        }
        if let Some(max_steps) = self.max_steps {
            opts.max_steps = max_steps;
        }
        Ok(opts)
    }
}

// ---------------------------------------------------------------------
// output
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trajectory_csv: Option<String>,
    pub report_json: Option<String>,
}

// ---------------------------------------------------------------------
// curves and distributions
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    Constant {
        components: Vec<f64>,
    },
    Expr {
        components: Vec<String>,
    },
    Piecewise {
        pieces: Vec<PieceSpec>,
    },
    Samples {
        ts: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub until: f64,
    pub components: Vec<f64>,
}

impl CurveSpec {
    pub fn build(
        &self,
        base: ChartPoint<f64>,
        horizon: f64,
    ) -> Result<TangentCurve<f64>, InvalidScenario> {
        let n = base.dim();
        match self {
            CurveSpec::Constant { components } => {
                if components.len() != n {
                    return Err(invalid(format!("curve needs {n} components")));
                }
                Ok(TangentCurve::constant(base, components.clone(), horizon))
            }
            CurveSpec::Expr { components } => {
                if components.len() != n {
                    return Err(invalid(format!("curve needs {n} components")));
                }
                let exprs = components
                    .iter()
                    .map(|src| Expr::parse(src, 0))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| invalid(format!("curve component: {e}")))?;
                Ok(TangentCurve::from_exprs(base, exprs, horizon))
            }
            CurveSpec::Piecewise { pieces } => {
                if pieces.is_empty() {
                    return Err(invalid("piecewise curve needs at least one piece"));
                }
                let mut prev = 0.0;
                for piece in pieces {
                    if piece.components.len() != n {
                        return Err(invalid(format!("curve needs {n} components")));
                    }
                    if piece.until <= prev {
                        return Err(invalid("piece ends must be strictly increasing"));
                    }
                    prev = piece.until;
                }
                Ok(TangentCurve::piecewise_constant(
                    base,
                    pieces
                        .iter()
                        .map(|p| (p.until, p.components.clone()))
                        .collect(),
                ))
            }
            CurveSpec::Samples { ts, values } => {
                if ts.len() != values.len() || ts.len() < 2 {
                    return Err(invalid("samples need matching ts/values with ≥ 2 entries"));
                }
                if ts[0] != 0.0 {
                    return Err(invalid("sampled curves must start at t = 0"));
                }
                if values.iter().any(|v| v.len() != n) {
                    return Err(invalid(format!("curve needs {n} components")));
                }
                Ok(TangentCurve::from_samples(
                    base,
                    ts.clone(),
                    values
                        .iter()
                        .map(|v| nalgebra_vec(v))
                        .collect(),
                ))
            }
        }
    }

    /// Natural horizon of the data, when it defines one.
    pub fn natural_horizon(&self) -> Option<f64> {
        match self {
            CurveSpec::Piecewise { pieces } => pieces.last().map(|p| p.until),
            CurveSpec::Samples { ts, .. } => ts.last().copied(),
            _ => None,
        }
    }
}

pub fn nalgebra_vec(v: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_vec(v.to_vec())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    /// T1 (boundary-normal-containing) of the slab torus; `r` defaults
    /// to the manifold's.
    SlabTorusT1 { r: Option<f64> },
    SlabTorusT2 { r: Option<f64> },
    /// Product-factor distribution: coordinates [0, na) or [na, na+nb).
    Factor { na: usize, nb: usize, index: u8 },
    /// Projector entries as expressions over the chart coordinates.
    Projector { entries: Vec<Vec<String>>, rank: usize },
}

impl DistributionSpec {
    pub fn build(
        &self,
        dim: usize,
        manifold: &ManifoldSpec,
    ) -> Result<Distribution<f64>, InvalidScenario> {
        match self {
            DistributionSpec::SlabTorusT1 { r } | DistributionSpec::SlabTorusT2 { r } => {
                let r = r
                    .or_else(|| manifold.slab_torus_r())
                    .ok_or_else(|| invalid("slab-torus distribution needs `r`"))?;
                if dim != 3 {
                    return Err(invalid("slab-torus distributions live on a 3d chart"));
                }
                let (t1, t2) = slab_torus_distributions(r);
                Ok(match self {
                    DistributionSpec::SlabTorusT1 { .. } => t1,
                    _ => t2,
                })
            }
            DistributionSpec::Factor { na, nb, index } => {
                if na + nb != dim {
                    return Err(invalid(format!(
                        "factor split {na}+{nb} does not match dimension {dim}"
                    )));
                }
                let (d1, d2) = devroll_core::decomposition::factor_distributions(*na, *nb);
                match index {
                    1 => Ok(d1),
                    2 => Ok(d2),
                    _ => Err(invalid("factor index must be 1 or 2")),
                }
            }
            DistributionSpec::Projector { entries, rank } => {
                if entries.len() != dim || entries.iter().any(|row| row.len() != dim) {
                    return Err(invalid(format!("projector must be {dim}x{dim}")));
                }
                let mut exprs = Vec::with_capacity(dim * dim);
                for row in entries {
                    for src in row {
                        exprs.push(
                            Expr::parse(src, dim)
                                .map_err(|e| invalid(format!("projector entry: {e}")))?,
                        );
                    }
                }
                Ok(Distribution::from_exprs(dim, exprs, *rank))
            }
        }
    }
}

/// φ between tangent spaces: the identity matrix or an explicit one.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum PhiSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

impl PhiSpec {
    pub fn build(&self, dim: usize) -> Result<nalgebra::DMatrix<f64>, InvalidScenario> {
        match self {
            PhiSpec::Named(name) if name == "identity" => {
                Ok(nalgebra::DMatrix::identity(dim, dim))
            }
            PhiSpec::Named(other) => Err(invalid(format!(
                "unknown isometry `{other}` (expected \"identity\" or a matrix)"
            ))),
            PhiSpec::Matrix(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(invalid(format!("phi must be a {dim}x{dim} matrix")));
                }
                Ok(nalgebra::DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }
}
