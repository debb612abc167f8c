//! Command dispatch: builds engine objects from the scenario, runs the
//! requested computation, writes artifacts, and reports gates.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use devroll_core::decomposition::{
    cah_transfer, cah_welldefined_check, check_parallel, curvature_split_check,
    derham_local_isometry, leaf_trace, parallelogram_check, slab_torus_distributions,
    DecompositionError, Distribution, LinearIsometry, RecurrenceOpts,
};
use devroll_core::manifold::{orthonormal_basis, slab_torus};
use devroll_core::transport::{
    develop, geodesic, parallel_transport, SampledPath, TransportError,
};
use devroll_core::variation::{solve_variation, VariationError, VariationFamily};
use devroll_core::{
    ChartManifold64, ChartPoint, DevelopmentResult, DevelopmentStatus, Expr, IntegratorOpts,
    TangentCurve,
};

use crate::output::{
    gates_json, out_path, status_json, write_json, write_trajectory, write_variation, Gate,
};
use crate::scenario::{
    nalgebra_vec, CurveSpec, DistributionSpec, InvalidScenario, ManifoldSpec, PhiSpec, Scenario,
};

/// Failure modes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// exit 2
    Invalid(String),
    /// exit 3
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<InvalidScenario> for CliError {
    fn from(e: InvalidScenario) -> Self {
        CliError::Invalid(e.0)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Invalid(format!("io: {e}"))
    }
}

fn map_transport(e: TransportError) -> CliError {
    match e {
        TransportError::BaseNotInterior(_)
        | TransportError::BadStep
        | TransportError::DimensionMismatch { .. }
        | TransportError::PathTooShort
        | TransportError::TimeBeyondTrajectory(_) => CliError::Invalid(e.to_string()),
        TransportError::MaxSteps(_) | TransportError::Geometry(_) | TransportError::Eval(_) => {
            CliError::Numerical(e.to_string())
        }
    }
}

fn map_decomposition(e: DecompositionError) -> CliError {
    match e {
        DecompositionError::ComplementarityViolated { .. }
        | DecompositionError::MembershipViolated { .. }
        | DecompositionError::TangencyViolated { .. }
        | DecompositionError::EndpointsNotFixed { .. }
        | DecompositionError::NotParallel { .. }
        | DecompositionError::SourceMismatch
        | DecompositionError::ProjectorInvariant { .. } => CliError::Invalid(e.to_string()),
        DecompositionError::Truncated(m) => CliError::Numerical(m),
        DecompositionError::Transport(e) => map_transport(e),
        DecompositionError::Geometry(e) => CliError::Numerical(e.to_string()),
        DecompositionError::Variation(e) => map_variation(e),
        DecompositionError::Eval(e) => CliError::Numerical(e.to_string()),
    }
}

fn map_variation(e: VariationError) -> CliError {
    match e {
        VariationError::BasisNotOrthonormal(_) | VariationError::BadComponents => {
            CliError::Invalid(e.to_string())
        }
        VariationError::BaseDevelopment(m) => CliError::Numerical(m),
        VariationError::Transport(e) => map_transport(e),
        VariationError::Geometry(e) => CliError::Numerical(e.to_string()),
        VariationError::Eval(e) => CliError::Numerical(e.to_string()),
    }
}

pub struct RunConfig {
    pub out_dir: PathBuf,
    pub frames: bool,
    pub quiet: bool,
    pub threads: usize,
}

pub struct RunSummary {
    pub gates: Vec<Gate>,
}

impl RunSummary {
    pub fn all_pass(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }
}

struct Ctx<'a> {
    scenario: &'a Scenario,
    manifold: ChartManifold64,
    opts: IntegratorOpts<f64>,
    cfg: &'a RunConfig,
}

impl<'a> Ctx<'a> {
    fn point(&self, coords: &[f64]) -> Result<ChartPoint<f64>, CliError> {
        if coords.len() != self.manifold.dim() {
            return Err(CliError::Invalid(format!(
                "point has {} coordinates, manifold {} needs {}",
                coords.len(),
                self.manifold.name(),
                self.manifold.dim()
            )));
        }
        Ok(ChartPoint::new(coords.to_vec()))
    }

    fn report_path(&self, default: &str) -> PathBuf {
        let name = self
            .scenario
            .output
            .report_json
            .clone()
            .unwrap_or_else(|| default.to_string());
        out_path(&self.cfg.out_dir, &name)
    }

    fn trajectory_path(&self, default: &str) -> PathBuf {
        let name = self
            .scenario
            .output
            .trajectory_csv
            .clone()
            .unwrap_or_else(|| default.to_string());
        out_path(&self.cfg.out_dir, &name)
    }

    // Artifacts depend only on scenario + seed; the thread cap is
    // surfaced on stdout instead, keeping reports byte-reproducible.
    fn base_report(&self) -> Value {
        json!({
            "schema": crate::scenario::SCHEMA_VERSION,
            "command": self.scenario.command,
            "manifold": self.manifold.name(),
            "seed": self.scenario.seed,
        })
    }

    fn finish(
        &self,
        mut report: Value,
        gates: Vec<Gate>,
        default_name: &str,
    ) -> Result<RunSummary, CliError> {
        report["gates"] = gates_json(&gates);
        write_json(&self.report_path(default_name), &report)?;
        if !self.cfg.quiet {
            println!("threads: {}", self.cfg.threads);
            for g in &gates {
                println!(
                    "gate {}: value={:.3e} threshold={:.3e} {}",
                    g.name,
                    g.value,
                    g.threshold,
                    if g.pass { "PASS" } else { "FAIL" }
                );
            }
        }
        Ok(RunSummary { gates })
    }

    /// Maps an unexpected truncation to exit code 3 after artifacts exist.
    fn expect_completed(&self, dev: &DevelopmentResult<f64>, what: &str) -> Result<(), CliError> {
        match dev.status {
            DevelopmentStatus::Completed | DevelopmentStatus::HitBoundary(_) => Ok(()),
            DevelopmentStatus::LeftChart(t) => Err(CliError::Numerical(format!(
                "{what} left the chart at t={t}"
            ))),
            DevelopmentStatus::FrameDegenerate(t) => Err(CliError::Numerical(format!(
                "{what} frame degenerated at t={t}"
            ))),
        }
    }
}

pub fn run(scenario: &Scenario, cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let manifold = scenario.manifold.build()?;
    let opts = scenario.integrator.build()?;
    let ctx = Ctx {
        scenario,
        manifold,
        opts,
        cfg,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    match scenario.command.as_str() {
        "develop" => run_develop(&ctx),
        "geodesic" => run_geodesic(&ctx),
        "transport" => run_transport(&ctx),
        "curvature" => run_curvature(&ctx),
        "variation" => run_variation(&ctx),
        "check-parallel" => run_check_parallel(&ctx),
        "parallelogram" => run_parallelogram(&ctx),
        "curvature-split" => run_curvature_split(&ctx),
        "cah-transfer" => run_cah_transfer(&ctx),
        "cah-welldefined" => run_cah_welldefined(&ctx),
        "derham-split" => run_derham_split(&ctx),
        "leaf-trace" => run_leaf_trace(&ctx),
        "demo-counterexample" => run_demo(&ctx),
        other => Err(CliError::Invalid(format!("unknown command `{other}`"))),
    }
}

fn vec_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| json!(x)).collect())
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

// ---------------------------------------------------------------------
// develop / geodesic
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DevelopParams {
    point: Vec<f64>,
    curve: CurveSpec,
    #[serde(default)]
    horizon: Option<f64>,
    #[serde(default)]
    drift_threshold: Option<f64>,
}

fn run_develop(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: DevelopParams = ctx.scenario.command_params()?;
    let horizon = p
        .horizon
        .or_else(|| p.curve.natural_horizon())
        .ok_or_else(|| CliError::Invalid("develop needs `horizon`".into()))?;
    let base = ctx.point(&p.point)?;
    let curve = p.curve.build(base, horizon)?;
    let dev = develop(&ctx.manifold, &curve, &ctx.opts).map_err(map_transport)?;
    write_trajectory(&ctx.trajectory_path("trajectory.csv"), &dev, ctx.cfg.frames)?;

    let gates = vec![Gate::upper(
        "gram_drift",
        dev.diagnostics.max_gram_drift,
        p.drift_threshold.unwrap_or(1e-7),
    )];
    let mut report = ctx.base_report();
    report["status"] = status_json(&dev.status);
    report["endpoint"] = vec_json(&dev.endpoint().x);
    report["end_time"] = json!(dev.end_time());
    report["steps"] = json!(dev.diagnostics.steps);
    report["max_frame_cond"] = json!(dev.diagnostics.max_frame_cond);
    let summary = ctx.finish(report, gates, "report.json")?;
    ctx.expect_completed(&dev, "development")?;
    Ok(summary)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeodesicParams {
    point: Vec<f64>,
    velocity: Vec<f64>,
    horizon: f64,
    #[serde(default)]
    drift_threshold: Option<f64>,
}

fn run_geodesic(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: GeodesicParams = ctx.scenario.command_params()?;
    let base = ctx.point(&p.point)?;
    if p.velocity.len() != ctx.manifold.dim() {
        return Err(CliError::Invalid("velocity dimension mismatch".into()));
    }
    let dev = geodesic(&ctx.manifold, &base, p.velocity.clone(), p.horizon, &ctx.opts)
        .map_err(map_transport)?;
    write_trajectory(&ctx.trajectory_path("trajectory.csv"), &dev, ctx.cfg.frames)?;

    let gates = vec![Gate::upper(
        "gram_drift",
        dev.diagnostics.max_gram_drift,
        p.drift_threshold.unwrap_or(1e-7),
    )];
    let mut report = ctx.base_report();
    report["status"] = status_json(&dev.status);
    report["endpoint"] = vec_json(&dev.endpoint().x);
    report["end_time"] = json!(dev.end_time());
    report["steps"] = json!(dev.diagnostics.steps);
    let summary = ctx.finish(report, gates, "report.json")?;
    ctx.expect_completed(&dev, "geodesic")?;
    Ok(summary)
}

// ---------------------------------------------------------------------
// transport
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransportParams {
    path_ts: Vec<f64>,
    path_points: Vec<Vec<f64>>,
    vector: Vec<f64>,
    #[serde(default)]
    drift_threshold: Option<f64>,
}

fn run_transport(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: TransportParams = ctx.scenario.command_params()?;
    let n = ctx.manifold.dim();
    if p.vector.len() != n || p.path_points.iter().any(|q| q.len() != n) {
        return Err(CliError::Invalid("path/vector dimension mismatch".into()));
    }
    let path = SampledPath::new(
        p.path_ts.clone(),
        p.path_points.iter().map(|q| nalgebra_vec(q)).collect(),
    )
    .map_err(map_transport)?;
    let x0 = nalgebra_vec(&p.vector);
    let moved = parallel_transport(&ctx.manifold, &path, &x0, &ctx.opts).map_err(map_transport)?;

    let start = ChartPoint::new(path.start().as_slice().to_vec());
    let end = ChartPoint::new(path.end().as_slice().to_vec());
    let n0 = ctx
        .manifold
        .norm(&start, &x0)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let n1 = ctx
        .manifold
        .norm(&end, &moved)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let gates = vec![Gate::upper(
        "norm_drift",
        (n1 - n0).abs(),
        p.drift_threshold.unwrap_or(1e-7),
    )];
    let mut report = ctx.base_report();
    report["transported"] = vec_json(&moved);
    report["norm_start"] = json!(n0);
    report["norm_end"] = json!(n1);
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// curvature
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurvatureParams {
    point: Vec<f64>,
    #[serde(default)]
    symmetry_threshold: Option<f64>,
}

fn run_curvature(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: CurvatureParams = ctx.scenario.command_params()?;
    let point = ctx.point(&p.point)?;
    let r = ctx
        .manifold
        .curvature_at(&point)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let n = ctx.manifold.dim();
    let comp: Value = Value::Array(
        (0..n)
            .map(|i| {
                Value::Array(
                    (0..n)
                        .map(|j| {
                            Value::Array(
                                (0..n)
                                    .map(|k| {
                                        Value::Array(
                                            (0..n).map(|l| json!(r.get(i, j, k, l))).collect(),
                                        )
                                    })
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            })
            .collect(),
    );
    let default_tol = if ctx.manifold.is_flat() { 1e-8 } else { 1e-6 };
    let gates = vec![Gate::upper(
        "symmetry_residual",
        r.symmetry_residual(),
        p.symmetry_threshold.unwrap_or(default_tol),
    )];
    let mut report = ctx.base_report();
    report["components"] = comp;
    report["max_abs"] = json!(r.max_abs());
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// variation
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariationParams {
    point: Vec<f64>,
    components: Vec<String>,
    u0: f64,
    horizon: f64,
    #[serde(default)]
    basis: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    skew_threshold: Option<f64>,
}

fn run_variation(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: VariationParams = ctx.scenario.command_params()?;
    let base = ctx.point(&p.point)?;
    let n = ctx.manifold.dim();
    let basis = match &p.basis {
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(CliError::Invalid(format!("basis must be {n}x{n}")));
            }
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
        None => orthonormal_basis(&ctx.manifold, &base)
            .map_err(|e| CliError::Numerical(e.to_string()))?,
    };
    let components = p
        .components
        .iter()
        .map(|src| Expr::parse_named(src, &["u"]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Invalid(format!("family component: {e}")))?;
    let fam = VariationFamily::new(&ctx.manifold, base, components, basis, p.horizon)
        .map_err(map_variation)?;
    let field = solve_variation(&ctx.manifold, &fam, p.u0, &ctx.opts).map_err(map_variation)?;
    write_variation(&ctx.trajectory_path("variation.csv"), &field, ctx.cfg.frames)?;

    let gates = vec![Gate::upper(
        "x_skew",
        field.max_skew_residual(),
        p.skew_threshold.unwrap_or(1e-7),
    )];
    let mut report = ctx.base_report();
    report["end_u"] = vec_json(field.end_u());
    report["samples"] = json!(field.ts.len());
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// check-parallel
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckParallelParams {
    distribution: DistributionSpec,
    point: Vec<f64>,
    curve: CurveSpec,
    #[serde(default)]
    horizon: Option<f64>,
    #[serde(default)]
    threshold: Option<f64>,
}

fn run_check_parallel(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: CheckParallelParams = ctx.scenario.command_params()?;
    let d = p
        .distribution
        .build(ctx.manifold.dim(), &ctx.scenario.manifold)?;
    let base = ctx.point(&p.point)?;
    let horizon = p
        .horizon
        .or_else(|| p.curve.natural_horizon())
        .ok_or_else(|| CliError::Invalid("check-parallel needs `horizon`".into()))?;
    let curve = p.curve.build(base, horizon)?;
    let dev = develop(&ctx.manifold, &curve, &ctx.opts).map_err(map_transport)?;
    ctx.expect_completed(&dev, "probe development")?;
    let path = SampledPath::from_development(&dev);
    let resid = check_parallel(&ctx.manifold, &d, &path, &ctx.opts).map_err(map_decomposition)?;

    let gates = vec![Gate::upper(
        "parallel_residual",
        resid,
        p.threshold.unwrap_or(1e-7),
    )];
    let mut report = ctx.base_report();
    report["residual"] = json!(resid);
    report["path_status"] = status_json(&dev.status);
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// parallelogram
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParallelogramParams {
    d1: DistributionSpec,
    d2: DistributionSpec,
    point: Vec<f64>,
    v1: CurveSpec,
    v2: CurveSpec,
    t: f64,
    #[serde(default)]
    mismatch_threshold: Option<f64>,
    #[serde(default)]
    deviation_threshold: Option<f64>,
}

fn run_parallelogram(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: ParallelogramParams = ctx.scenario.command_params()?;
    let n = ctx.manifold.dim();
    let d1 = p.d1.build(n, &ctx.scenario.manifold)?;
    let d2 = p.d2.build(n, &ctx.scenario.manifold)?;
    let base = ctx.point(&p.point)?;
    let v1 = p.v1.build(base.clone(), p.t)?;
    let v2 = p.v2.build(base.clone(), p.t)?;
    let rep = parallelogram_check(&ctx.manifold, &d1, &d2, &base, &v1, &v2, p.t, &ctx.opts)
        .map_err(map_decomposition)?;

    let mut leg_paths = Vec::new();
    for (name, dev) in &rep.legs {
        let path = out_path(&ctx.cfg.out_dir, &format!("{name}.csv"));
        write_trajectory(&path, dev, ctx.cfg.frames)?;
        leg_paths.push(json!(format!("{name}.csv")));
    }

    let gates = vec![
        Gate::upper(
            "endpoint_mismatch",
            rep.endpoint_mismatch,
            p.mismatch_threshold.unwrap_or(1e-7),
        ),
        Gate::upper(
            "holonomy_deviation",
            rep.holonomy_deviation,
            p.deviation_threshold.unwrap_or(1e-7),
        ),
    ];
    let mut report = ctx.base_report();
    report["endpoint_mismatch"] = json!(rep.endpoint_mismatch);
    report["holonomy_deviation"] = json!(rep.holonomy_deviation);
    report["status"] = Value::Array(
        rep.statuses()
            .into_iter()
            .map(|(name, status)| json!({"leg": name, "status": status}))
            .collect(),
    );
    report["legs"] = Value::Array(leg_paths);
    let summary = ctx.finish(report, gates, "report.json")?;
    if !rep.all_completed() {
        return Err(CliError::Numerical(
            "a parallelogram leg was truncated".into(),
        ));
    }
    Ok(summary)
}

// ---------------------------------------------------------------------
// curvature-split
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurvatureSplitParams {
    d1: DistributionSpec,
    d2: DistributionSpec,
    point: Vec<f64>,
    #[serde(default)]
    quadruples: Option<usize>,
    #[serde(default)]
    threshold: Option<f64>,
}

fn run_curvature_split(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: CurvatureSplitParams = ctx.scenario.command_params()?;
    let n = ctx.manifold.dim();
    let d1 = p.d1.build(n, &ctx.scenario.manifold)?;
    let d2 = p.d2.build(n, &ctx.scenario.manifold)?;
    let point = ctx.point(&p.point)?;
    let g = ctx
        .manifold
        .metric_at(&point)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let count = p.quadruples.unwrap_or(50);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.scenario.seed);
    let quads: Vec<[DVector<f64>; 4]> = (0..count)
        .map(|_| {
            std::array::from_fn(|_| {
                let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let norm = (&g * &v).dot(&v).sqrt();
                v / norm
            })
        })
        .collect();
    let resid = curvature_split_check(&ctx.manifold, &d1, &d2, &point, &quads)
        .map_err(map_decomposition)?;

    let gates = vec![Gate::upper(
        "split_residual",
        resid,
        p.threshold.unwrap_or(1e-6),
    )];
    let mut report = ctx.base_report();
    report["residual"] = json!(resid);
    report["quadruples"] = json!(count);
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// cah-transfer
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CahTransferParams {
    target: ManifoldSpec,
    target_point: Vec<f64>,
    phi: PhiSpec,
    point: Vec<f64>,
    curve: CurveSpec,
    #[serde(default)]
    horizon: Option<f64>,
    #[serde(default)]
    isometry_threshold: Option<f64>,
}

fn run_cah_transfer(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: CahTransferParams = ctx.scenario.command_params()?;
    let target = p.target.build()?;
    let n = ctx.manifold.dim();
    if target.dim() != n {
        return Err(CliError::Invalid(
            "transfer needs equal source/target dimensions".into(),
        ));
    }
    let source_point = ctx.point(&p.point)?;
    if p.target_point.len() != n {
        return Err(CliError::Invalid("target_point dimension mismatch".into()));
    }
    let target_point = ChartPoint::new(p.target_point.clone());
    let phi = LinearIsometry {
        matrix: p.phi.build(n)?,
        source: source_point.clone(),
        target: target_point,
    };
    let phi_resid = phi
        .pullback_residual(&ctx.manifold, &target)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    if phi_resid > 1e-8 {
        return Err(CliError::Invalid(format!(
            "phi is not a linear isometry (pullback residual {phi_resid:.3e})"
        )));
    }

    let horizon = p
        .horizon
        .or_else(|| p.curve.natural_horizon())
        .ok_or_else(|| CliError::Invalid("cah-transfer needs `horizon`".into()))?;
    let curve = p.curve.build(source_point, horizon)?;
    let gamma = develop(&ctx.manifold, &curve, &ctx.opts).map_err(map_transport)?;
    ctx.expect_completed(&gamma, "source development")?;
    let transfer =
        cah_transfer(&ctx.manifold, &target, &phi, &gamma, &ctx.opts).map_err(map_decomposition)?;
    write_trajectory(
        &ctx.trajectory_path("target_trajectory.csv"),
        &transfer.target_dev,
        ctx.cfg.frames,
    )?;

    let tau_resid = transfer
        .tau
        .pullback_residual(&ctx.manifold, &target)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let gates = vec![Gate::upper(
        "tau_isometry_residual",
        tau_resid,
        p.isometry_threshold.unwrap_or(1e-7),
    )];
    let mut report = ctx.base_report();
    report["target_manifold"] = json!(target.name());
    report["endpoint"] = vec_json(&transfer.endpoint.coords);
    report["tau"] = matrix_json(&transfer.tau.matrix);
    report["status"] = status_json(&transfer.status);
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// cah-welldefined
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CahWelldefinedParams {
    target: ManifoldSpec,
    target_point: Vec<f64>,
    phi: PhiSpec,
    point: Vec<f64>,
    components: Vec<String>,
    horizon: f64,
    #[serde(default)]
    basis: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    slices: Option<usize>,
    #[serde(default)]
    spread_threshold: Option<f64>,
}

fn run_cah_welldefined(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: CahWelldefinedParams = ctx.scenario.command_params()?;
    let target = p.target.build()?;
    let n = ctx.manifold.dim();
    if target.dim() != n || p.target_point.len() != n {
        return Err(CliError::Invalid("target dimensions mismatch".into()));
    }
    let base = ctx.point(&p.point)?;
    let basis = match &p.basis {
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(CliError::Invalid(format!("basis must be {n}x{n}")));
            }
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
        None => orthonormal_basis(&ctx.manifold, &base)
            .map_err(|e| CliError::Numerical(e.to_string()))?,
    };
    let components = p
        .components
        .iter()
        .map(|src| Expr::parse_named(src, &["u"]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Invalid(format!("family component: {e}")))?;
    let fam = VariationFamily::new(&ctx.manifold, base.clone(), components, basis, p.horizon)
        .map_err(map_variation)?;
    let phi = LinearIsometry {
        matrix: p.phi.build(n)?,
        source: base,
        target: ChartPoint::new(p.target_point.clone()),
    };
    let report_data = cah_welldefined_check(
        &ctx.manifold,
        &target,
        &phi,
        &fam,
        p.slices.unwrap_or(9),
        &ctx.opts,
    )
    .map_err(map_decomposition)?;

    let gates = vec![Gate::upper(
        "endpoint_spread",
        report_data.spread,
        p.spread_threshold.unwrap_or(1e-5),
    )];
    let mut report = ctx.base_report();
    report["target_manifold"] = json!(target.name());
    report["spread"] = json!(report_data.spread);
    report["endpoints"] = Value::Array(report_data.endpoints.iter().map(vec_json).collect());
    report["us"] = json!(report_data.us);
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// derham-split
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DerhamParams {
    d1: DistributionSpec,
    d2: DistributionSpec,
    point: Vec<f64>,
    #[serde(default)]
    axes1: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    axes2: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    half_extent: Option<f64>,
    #[serde(default)]
    n_per_axis: Option<usize>,
    #[serde(default)]
    parallel_tol: Option<f64>,
    #[serde(default)]
    residual_threshold: Option<f64>,
    #[serde(default)]
    order_threshold: Option<f64>,
}

fn axes_from(
    spec: &Option<Vec<Vec<f64>>>,
    fallback: impl FnOnce() -> Result<Vec<DVector<f64>>, CliError>,
    n: usize,
) -> Result<Vec<DVector<f64>>, CliError> {
    match spec {
        Some(rows) => {
            if rows.iter().any(|r| r.len() != n) {
                return Err(CliError::Invalid("axis dimension mismatch".into()));
            }
            Ok(rows.iter().map(|r| nalgebra_vec(r)).collect())
        }
        None => fallback(),
    }
}

fn run_derham_split(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: DerhamParams = ctx.scenario.command_params()?;
    let n = ctx.manifold.dim();
    let d1 = p.d1.build(n, &ctx.scenario.manifold)?;
    let d2 = p.d2.build(n, &ctx.scenario.manifold)?;
    let point = ctx.point(&p.point)?;

    let basis_axes = |d: &Distribution<f64>| -> Result<Vec<DVector<f64>>, CliError> {
        let b = d
            .basis_at(&ctx.manifold, &point)
            .map_err(map_decomposition)?;
        Ok((0..b.ncols()).map(|c| b.column(c).clone_owned()).collect())
    };
    let axes1 = axes_from(&p.axes1, || basis_axes(&d1), n)?;
    let axes2 = axes_from(&p.axes2, || basis_axes(&d2), n)?;

    let rep = derham_local_isometry(
        &ctx.manifold,
        &d1,
        &d2,
        &point,
        &axes1,
        &axes2,
        p.half_extent.unwrap_or(0.5),
        p.n_per_axis.unwrap_or(11),
        p.parallel_tol.unwrap_or(1e-7),
        &ctx.opts,
    )
    .map_err(map_decomposition)?;

    let gates = vec![
        Gate::upper(
            "pullback_residual",
            rep.pullback_residual,
            p.residual_threshold.unwrap_or(1e-4),
        ),
        Gate::upper(
            "order_mismatch",
            rep.order_mismatch,
            p.order_threshold.unwrap_or(1e-8),
        ),
    ];
    let mut report = ctx.base_report();
    report["pullback_residual"] = json!(rep.pullback_residual);
    report["order_mismatch"] = json!(rep.order_mismatch);
    report["invalid_cells"] = json!(rep.invalid_cells);
    report["grid_dims"] = json!(rep.grid_dims);
    report["spacing"] = json!(rep.spacing);
    report["parallel_residuals"] = json!([rep.parallel_residuals.0, rep.parallel_residuals.1]);
    report["map"] = Value::Array(
        rep.map_values
            .iter()
            .map(|v| match v {
                Some(x) => vec_json(x),
                None => Value::Null,
            })
            .collect(),
    );
    ctx.finish(report, gates, "report.json")
}

// ---------------------------------------------------------------------
// leaf-trace
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafTraceParams {
    distribution: DistributionSpec,
    point: Vec<f64>,
    steering: CurveSpec,
    arclength: f64,
    #[serde(default)]
    t_min: Option<f64>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    grid_per_axis: Option<usize>,
    #[serde(default)]
    tangency_threshold: Option<f64>,
}

fn run_leaf_trace(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: LeafTraceParams = ctx.scenario.command_params()?;
    let d = p
        .distribution
        .build(ctx.manifold.dim(), &ctx.scenario.manifold)?;
    let base = ctx.point(&p.point)?;
    let steering = p.steering.build(base, p.arclength)?;
    let rec = RecurrenceOpts {
        t_min: p.t_min.unwrap_or(0.5),
        epsilon: p.epsilon.unwrap_or(0.05),
        grid_per_axis: p.grid_per_axis.unwrap_or(100),
    };
    let trace =
        leaf_trace(&ctx.manifold, &d, &steering, &rec, &ctx.opts).map_err(map_decomposition)?;
    write_trajectory(
        &ctx.trajectory_path("trajectory.csv"),
        &trace.dev,
        ctx.cfg.frames,
    )?;

    let gates = vec![Gate::upper(
        "tangency_residual",
        trace.tangency_residual,
        p.tangency_threshold.unwrap_or(1e-7),
    )];
    let mut report = ctx.base_report();
    report["status"] = status_json(&trace.dev.status);
    if let Some(d) = trace.min_return_distance {
        report["min_return_distance"] = json!(d);
        report["min_return_time"] = json!(trace.min_return_time.unwrap());
        report["coverage_fraction"] = json!(trace.coverage_fraction.unwrap());
    }
    let summary = ctx.finish(report, gates, "report.json")?;
    if matches!(
        trace.dev.status,
        DevelopmentStatus::LeftChart(_) | DevelopmentStatus::FrameDegenerate(_)
    ) {
        return Err(CliError::Numerical("leaf trace truncated".into()));
    }
    Ok(summary)
}

// ---------------------------------------------------------------------
// demo-counterexample
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoParams {
    r: f64,
    #[serde(default)]
    arclength: Option<f64>,
}

/// Runs the full slab-torus story for slope r: parallel distributions,
/// local product identities (which hold), and the leaf recurrence that
/// decides whether a global splitting can exist.
fn run_demo(ctx: &Ctx) -> Result<RunSummary, CliError> {
    let p: DemoParams = ctx.scenario.command_params()?;
    if !(p.r > 0.0 && p.r < 1.0) && p.r != 0.0 {
        return Err(CliError::Invalid("demo needs r in [0, 1)".into()));
    }
    let r = p.r;
    let m = slab_torus::<f64>(r);
    let (t1, t2) = slab_torus_distributions::<f64>(r);
    let center = ChartPoint::new(vec![0.5, 0.0, 0.0]);
    let norm = (1.0 + r * r).sqrt();
    let u1 = DVector::from_vec(vec![0.0, 1.0 / norm, r / norm]);
    let u2 = DVector::from_vec(vec![0.0, -r / norm, 1.0 / norm]);

    // parallelism along a generic wiggling probe
    let probe = TangentCurve::from_exprs(
        center.clone(),
        vec![
            Expr::parse("0.2*cos(t)", 0).unwrap(),
            Expr::parse("0.8", 0).unwrap(),
            Expr::parse("0.4*sin(t)", 0).unwrap(),
        ],
        2.0,
    );
    let probe_dev = develop(&m, &probe, &ctx.opts).map_err(map_transport)?;
    ctx.expect_completed(&probe_dev, "probe development")?;
    let path = SampledPath::from_development(&probe_dev);
    let resid_t1 = check_parallel(&m, &t1, &path, &ctx.opts).map_err(map_decomposition)?;
    let resid_t2 = check_parallel(&m, &t2, &path, &ctx.opts).map_err(map_decomposition)?;

    // parallelogram identities hold locally
    let v1 = TangentCurve::constant(
        center.clone(),
        vec![0.3, 0.5 * u1[1], 0.5 * u1[2]],
        1.0,
    );
    let v2 = TangentCurve::constant(center.clone(), vec![0.0, 0.6 * u2[1], 0.6 * u2[2]], 1.0);
    let para = parallelogram_check(&m, &t1, &t2, &center, &v1, &v2, 1.0, &ctx.opts)
        .map_err(map_decomposition)?;

    // local product structure
    let axes1 = vec![DVector::from_vec(vec![1.0, 0.0, 0.0]), u1.clone()];
    let axes2 = vec![u2.clone()];
    let derham = derham_local_isometry(
        &m, &t1, &t2, &center, &axes1, &axes2, 0.35, 7, 1e-6, &ctx.opts,
    )
    .map_err(map_decomposition)?;

    // leaf recurrence decides the global question
    let arclength = p.arclength.unwrap_or(200.0);
    let steering = TangentCurve::constant(
        center.clone(),
        vec![0.0, u2[1], u2[2]],
        arclength,
    );
    let rec = RecurrenceOpts::default();
    let trace = leaf_trace(&m, &t2, &steering, &rec, &ctx.opts).map_err(map_decomposition)?;
    write_trajectory(
        &ctx.trajectory_path("leaf_trajectory.csv"),
        &trace.dev,
        ctx.cfg.frames,
    )?;
    let min_return = trace.min_return_distance.unwrap();
    let coverage = trace.coverage_fraction.unwrap();

    let gates = vec![
        Gate::upper("parallel_residual_t1", resid_t1, 1e-6),
        Gate::upper("parallel_residual_t2", resid_t2, 1e-6),
        Gate::upper("parallelogram_mismatch", para.endpoint_mismatch, 1e-8),
        Gate::upper("parallelogram_deviation", para.holonomy_deviation, 1e-8),
        Gate::upper("derham_pullback_residual", derham.pullback_residual, 1e-6),
        Gate::upper("derham_order_mismatch", derham.order_mismatch, 1e-8),
        Gate::upper("leaf_tangency", trace.tangency_residual, 1e-7),
    ];
    let mut report = ctx.base_report();
    report["r"] = json!(r);
    report["arclength"] = json!(arclength);
    report["min_return_distance"] = json!(min_return);
    report["min_return_time"] = json!(trace.min_return_time.unwrap());
    report["coverage_fraction"] = json!(coverage);
    report["orbit_closes"] = json!(min_return <= 1e-6);
    report["parallel_residuals"] = json!([resid_t1, resid_t2]);
    report["parallelogram"] = json!({
        "endpoint_mismatch": para.endpoint_mismatch,
        "holonomy_deviation": para.holonomy_deviation,
    });
    report["derham"] = json!({
        "pullback_residual": derham.pullback_residual,
        "order_mismatch": derham.order_mismatch,
        "invalid_cells": derham.invalid_cells,
    });
    ctx.finish(report, gates, "report.json")
}
