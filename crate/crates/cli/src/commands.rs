use std::fmt::Write as _;

use levy_refract::control::{
    f_of_b, hjb_residual, generator_on_value, sensitivity_sweep, solve_bstar, solve_bstar_on_grid,
    unrestricted_barrier, unrestricted_limit, value_derivatives, value_refraction, ControlProblem,
    DerivativeSide, SolveResult, SweepParameter, ValuePoint,
};
use levy_refract::fluctuation::{
    dividends_npv, exit_laplace, identity_probe, injection_npv, occupation_laplace, reflected_injection,
    reflected_resolvent, reflected_upcrossing, resolvent_finite, resolvent_infinite, Geometry, Horizon,
    IntervalSet, ProbeVariant, Side,
};
use levy_refract::montecarlo::{
    default_horizon, dump_paths, estimate_functionals, EstimateWithCI, SimConfig,
};
use levy_refract::{validate_model, Process, ScaleFamily, ValidatedModel, VariationClass};
use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

pub const BETA_SWEEP: [f64; 6] = [1.01, 1.1, 2.0, 5.0, 10.0, 20.0];
pub const DELTA_SWEEP: [f64; 7] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Report {
    Solve(SolveReport),
    Check(CheckReport),
    Simulate(SimulateReport),
    Figures(FiguresReport),
}

impl Report {
    pub fn to_csv(&self) -> String {
        match self {
            Report::Solve(r) => r.to_csv(),
            Report::Check(r) => r.to_csv(),
            Report::Simulate(r) => r.to_csv(),
            Report::Figures(r) => series_csv(&r.rows),
        }
    }

    pub fn to_json(&self, command: Command) -> String {
        #[derive(Serialize)]
        struct Envelope<'a> {
            schema_version: u32,
            command: &'static str,
            #[serde(flatten)]
            report: &'a Report,
        }
        let envelope = Envelope {
            schema_version: SCHEMA_VERSION,
            command: command.name(),
            report: self,
        };
        let mut s = serde_json::to_string_pretty(&envelope).expect("report serializes");
        s.push('\n');
        s
    }
}

/// One row of the long `series_id,param,x,value` layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub series_id: String,
    pub param: f64,
    pub x: Option<f64>,
    pub value: f64,
}

impl SeriesRow {
    fn new(series_id: &str, param: f64, x: Option<f64>, value: f64) -> Self {
        Self {
            series_id: series_id.to_string(),
            param,
            x,
            value,
        }
    }
}

fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::from("series_id,param,x,value\n");
    for r in rows {
        let x = r.x.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.series_id, r.param, x, r.value);
    }
    out
}

fn run_checked<T>(r: levy_refract::Result<T>) -> CliResult<T> {
    r.map_err(CliError::Numeric)
}

fn problem_from(config: &RunConfig) -> CliResult<(ValidatedModel, ControlProblem)> {
    let q = config.require("q", config.q)?;
    let beta = config.require("beta", config.beta)?;
    let delta = config.require("delta", config.delta)?;
    if q <= 0.0 {
        return Err(CliError::Usage(format!("--q must be > 0 for `{}`", config.command.name())));
    }
    if delta <= 0.0 {
        return Err(CliError::Usage(format!("--delta must be > 0 for `{}`", config.command.name())));
    }
    let model = run_checked(validate_model(&config.model))?;
    let problem = run_checked(ControlProblem::new(&model, delta, q, beta))?;
    Ok((model, problem))
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub q: f64,
    pub beta: f64,
    pub delta: f64,
    pub b_star: f64,
    pub f_residual: f64,
    pub smooth_fit_gap: f64,
    pub second_derivative_gap: f64,
    pub iterations: usize,
    pub table: Vec<ValuePoint>,
}

impl SolveReport {
    /// One row per grid point; `param` is beta. Diagnostics are JSON-only.
    fn to_csv(&self) -> String {
        let mut out = String::from("param,b_star,x,v,v_prime\n");
        for v in &self.table {
            let _ = writeln!(out, "{},{},{},{},{}", self.beta, self.b_star, v.x, v.v, v.v_prime);
        }
        out
    }
}

/// `b*`, the smooth-fit diagnostics and `v` on the x-grid (200 points on
/// `[0, 2 b*]` unless given).
pub fn cmd_solve(config: &RunConfig) -> CliResult<SolveReport> {
    let (_, problem) = problem_from(config)?;
    let solved = match &config.x_grid {
        Some(grid) => run_checked(solve_bstar_on_grid(&problem, grid))?,
        None => run_checked(solve_bstar(&problem))?,
    };
    Ok(SolveReport {
        q: problem.q(),
        beta: problem.beta(),
        delta: problem.delta(),
        b_star: solved.b_star,
        f_residual: solved.f_residual,
        smooth_fit_gap: solved.smooth_fit_gap,
        second_derivative_gap: solved.second_derivative_gap,
        iterations: solved.iterations,
        table: solved.value_at_grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub status: Status,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("suite,name,value,tolerance,status\n");
        for r in &self.rows {
            let status = match r.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::Skipped => "skipped",
            };
            let _ = writeln!(out, "{},{},{},{},{}", r.suite, r.name, r.value, r.tolerance, status);
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Default)]
struct Checks {
    rows: Vec<CheckRow>,
}

impl Checks {
    /// Records `value <= tolerance`; NaN fails.
    fn add(&mut self, suite: &str, name: impl Into<String>, value: f64, tolerance: f64) {
        let status = if value <= tolerance { Status::Pass } else { Status::Fail };
        self.rows.push(CheckRow {
            suite: suite.to_string(),
            name: name.into(),
            value,
            tolerance,
            status,
        });
    }

    fn skip(&mut self, suite: &str, name: impl Into<String>) {
        self.rows.push(CheckRow {
            suite: suite.to_string(),
            name: name.into(),
            value: f64::NAN,
            tolerance: f64::NAN,
            status: Status::Skipped,
        });
    }

    fn add_result(&mut self, suite: &str, name: impl Into<String>, value: levy_refract::Result<f64>, tolerance: f64) {
        self.add(suite, name, value.unwrap_or(f64::NAN), tolerance);
    }

    fn finish(self) -> CheckReport {
        let count = |s: Status| self.rows.iter().filter(|r| r.status == s).count();
        CheckReport {
            passed: count(Status::Pass),
            failed: count(Status::Fail),
            skipped: count(Status::Skipped),
            rows: self.rows,
        }
    }
}

fn rel_err(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / rhs.abs().max(1.0)
}

/// Runs every invariant suite; failures are reported in the rows, not as errors.
pub fn cmd_check(config: &RunConfig) -> CliResult<CheckReport> {
    let (model, problem) = problem_from(config)?;
    let q = problem.q();
    let delta = problem.delta();
    let family = problem.family();
    let mut checks = Checks::default();

    for process in [Process::X, Process::Y] {
        let root = family.pair(process).roots.positive_root;
        for offset in [0.5, 2.0, 10.0] {
            let theta = root + offset;
            let name = format!("{process:?} theta={theta:.6}");
            let err = family
                .laplace_check(process, theta)
                .map(|(lhs, rhs)| (lhs - rhs).abs() / rhs.abs());
            checks.add_result("laplace", name, err, 1e-9);
        }
    }

    for x in [0.5, 1.0, 2.0] {
        let lhs = delta * family.y.w.convolve_at(&family.x.w, x, 0.0, x);
        let rhs = family.y.w_bar(x) - family.x.w_bar(x);
        checks.add("scale_convolution", format!("x={x}"), rel_err(lhs, rhs), 1e-8);
    }

    if model.variation_class() == VariationClass::Bounded {
        let probe = ScaleFamily::new(&model, delta, q + 0.1);
        match probe {
            Ok(family_p) => {
                for variant in [ProbeVariant::I, ProbeVariant::IPrime, ProbeVariant::II, ProbeVariant::IIPrime] {
                    for (a, b, c) in [(0.0, 0.4, 1.0), (0.2, 1.1, 1.5)] {
                        let err = identity_probe(&family_p, family, variant, a, b, c).map(|(l, r)| rel_err(l, r));
                        checks.add_result("convolution_identity", format!("{variant:?} ({a},{b},{c})"), err, 1e-6);
                    }
                }
            }
            Err(e) => checks.add("convolution_identity", format!("setup: {e}"), f64::NAN, 1e-6),
        }
    } else {
        checks.skip("convolution_identity", "needs sigma = 0");
    }

    delta_zero_checks(&mut checks, &model, q, config)?;

    let solved = run_checked(solve_bstar(&problem))?;
    control_checks(&mut checks, &problem, &solved);

    if config.with_mc {
        mc_checks(&mut checks, &model, &problem, &solved, config)?;
    }
    Ok(checks.finish())
}

fn delta_zero_checks(checks: &mut Checks, model: &ValidatedModel, q: f64, config: &RunConfig) -> CliResult<()> {
    let family0 = run_checked(ScaleFamily::new(model, 0.0, q))?;
    let a = config.a.unwrap_or(2.0);
    let geometry = Geometry::new(a / 2.0, 0.0, q).with_a(a);
    let set = IntervalSet::interval(0.1 * a, 0.4 * a)?;
    for x in [0.0, a / 3.0, 2.0 * a / 3.0] {
        let res = resolvent_finite(&family0, &geometry, x, &set).map(|v| rel_err(v, reflected_resolvent(&family0, a, x, &set)));
        checks.add_result("delta_zero", format!("resolvent x={x:.4}"), res, 1e-8);
        let exit = exit_laplace(&family0, &geometry, x).map(|v| rel_err(v, reflected_upcrossing(&family0, a, x)));
        checks.add_result("delta_zero", format!("exit x={x:.4}"), exit, 1e-8);
        let inj = injection_npv(&family0, &geometry, x, Horizon::ToA)
            .map(|v| rel_err(v.finite().unwrap_or(f64::NAN), reflected_injection(&family0, a, x)));
        checks.add_result("delta_zero", format!("injection x={x:.4}"), inj, 1e-8);
    }
    Ok(())
}

fn control_checks(checks: &mut Checks, problem: &ControlProblem, solved: &SolveResult) {
    let b = solved.b_star;
    let beta = problem.beta();
    checks.add("control", "f(0) = 1 - beta", (f_of_b(problem, 0.0) - (1.0 - beta)).abs(), 1e-14);
    checks.add("control", "f(b*) = 0", solved.f_residual.abs(), 1e-10);
    checks.add("control", "smooth fit v'", solved.smooth_fit_gap, 1e-8);
    if problem.model().sigma() > 0.0 {
        checks.add("control", "smooth fit v''", solved.second_derivative_gap, 1e-6);
    }
    let v0 = value_derivatives(problem, solved, 0.0, DerivativeSide::Right).map(|d| (d.0 - beta).abs());
    checks.add_result("control", "v'(0) = beta", v0, 1e-5);

    let grid: Vec<f64> = (0..200).map(|i| 2.0 * b * i as f64 / 199.0).collect();
    let mut bound_violation: f64 = 0.0;
    let mut hjb: f64 = 0.0;
    let mut eq_below: f64 = 0.0;
    let mut eq_above: f64 = 0.0;
    for &x in &grid {
        let side = if x < b { DerivativeSide::Left } else { DerivativeSide::Right };
        let d = value_derivatives(problem, solved, x, side).map(|d| d.0).unwrap_or(f64::NAN);
        let violation = if x <= b {
            (1.0 - d).max(d - beta).max(0.0)
        } else {
            (d - 1.0).max(0.0)
        };
        bound_violation = bound_violation.max(if violation.is_nan() { f64::INFINITY } else { violation });
        if (x - b).abs() < 1e-4 {
            continue;
        }
        let r = hjb_residual(problem, solved, x).unwrap_or(f64::NAN);
        hjb = nan_max(hjb, r.abs());
        if x < b {
            let g = generator_on_value(problem, b, x, Process::Y).unwrap_or(f64::NAN);
            eq_below = nan_max(eq_below, g.abs());
        } else {
            let g = generator_on_value(problem, b, x, Process::X).unwrap_or(f64::NAN);
            eq_above = nan_max(eq_above, (g + problem.delta()).abs());
        }
    }
    checks.add("control", "derivative bounds 1 <= v' <= beta below b* and v' <= 1 above", bound_violation, 1e-9);
    checks.add("hjb", "max |residual|", hjb, 1e-5);
    checks.add("hjb", "(L_Y - q) v below b*", eq_below, 1e-5);
    checks.add("hjb", "(L_X - q) v + delta above b*", eq_above, 1e-5);
}

fn nan_max(acc: f64, v: f64) -> f64 {
    if v.is_nan() || acc.is_nan() {
        f64::NAN
    } else {
        acc.max(v)
    }
}

fn sim_config(config: &RunConfig, q: f64) -> SimConfig {
    let mc = &config.mc;
    SimConfig {
        dt: mc.dt,
        horizon: mc.horizon.unwrap_or_else(|| default_horizon(q)),
        n_paths: mc.n_paths,
        seed: mc.seed,
        antithetic: mc.antithetic,
        brownian_substeps: mc.substeps,
        bridge_correction: mc.bridge_correction,
    }
}

fn mc_checks(
    checks: &mut Checks,
    model: &ValidatedModel,
    problem: &ControlProblem,
    solved: &SolveResult,
    config: &RunConfig,
) -> CliResult<()> {
    let q = problem.q();
    let b = config.b.unwrap_or(solved.b_star);
    let a = config.a.unwrap_or(2.0 * b);
    let geometry = Geometry::new(b, problem.delta(), q).with_a(a);
    let cfg = sim_config(config, q);
    let family = problem.family();
    for x in [0.0, 0.5 * b] {
        let est = run_checked(estimate_functionals(model, &geometry, x, Horizon::ToA, None, &cfg))?;
        let mut compare = |name: &str, e: Option<EstimateWithCI>, exact: levy_refract::Result<f64>| {
            let z = match (e, exact) {
                (Some(e), Ok(v)) => (e.mean - v).abs() / e.stderr,
                _ => f64::NAN,
            };
            checks.add("monte_carlo", format!("{name} x={x:.4} (s.e. units)"), z, 3.0);
        };
        compare("exit", est.exit, exit_laplace(family, &geometry, x));
        compare(
            "dividends",
            Some(est.dividends),
            dividends_npv(family, &geometry, x, Horizon::ToA).map(|v| v.finite().unwrap_or(f64::NAN)),
        );
        compare(
            "injection",
            Some(est.injection),
            injection_npv(family, &geometry, x, Horizon::ToA).map(|v| v.finite().unwrap_or(f64::NAN)),
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub functional: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub x: f64,
    /// Closed-form value for comparison, when available.
    pub analytic: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub rows: Vec<EstimateRow>,
    #[serde(skip)]
    pub paths_csv: Option<String>,
}

impl SimulateReport {
    fn to_csv(&self) -> String {
        let mut out = String::from("functional,mean,stderr,n,dt,horizon,x,analytic\n");
        for r in &self.rows {
            let analytic = r.analytic.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.functional, r.mean, r.stderr, r.n, r.dt, r.horizon, r.x, analytic
            );
        }
        out
    }
}

/// Monte Carlo estimates at every point of the x-grid. With `--a` paths stop at
/// the first passage above `a` and exit/occupation transforms are included;
/// otherwise they run to the horizon.
pub fn cmd_simulate(config: &RunConfig) -> CliResult<SimulateReport> {
    let q = config.require("q", config.q)?;
    let delta = config.require("delta", config.delta)?;
    let b = config.require("b", config.b)?;
    let xs = config
        .x_grid
        .clone()
        .ok_or_else(|| CliError::Usage("--x-grid is required for `simulate`".into()))?;
    let model = run_checked(validate_model(&config.model))?;
    let mut geometry = Geometry::new(b, delta, q);
    if let Some(a) = config.a {
        geometry = geometry.with_a(a);
    }
    if let Some(p) = config.p {
        geometry = geometry.with_p(p);
    }
    let horizon = if config.a.is_some() { Horizon::ToA } else { Horizon::Infinite };
    run_checked(geometry.validate())?;
    let cfg = sim_config(config, q);
    run_checked(cfg.validate())?;

    let family = run_checked(ScaleFamily::new(&model, delta, q)).ok();
    let family_pq = config
        .p
        .and_then(|p| ScaleFamily::new(&model, delta, q + p).ok());

    let mut rows = Vec::new();
    for &x in &xs {
        let est = run_checked(estimate_functionals(&model, &geometry, x, horizon, config.set.as_ref(), &cfg))?;
        let analytic = |f: &str| -> Option<f64> {
            let fam = family.as_ref()?;
            let v = match f {
                "dividends" => dividends_npv(fam, &geometry, x, horizon).ok()?.finite(),
                "injection" => injection_npv(fam, &geometry, x, horizon).ok()?.finite(),
                "exit" => exit_laplace(fam, &geometry, x).ok(),
                "resolvent" => {
                    let set = config.set.as_ref()?;
                    match horizon {
                        Horizon::ToA => resolvent_finite(fam, &geometry, x, set).ok(),
                        Horizon::Infinite => resolvent_infinite(fam, b, x, set).ok()?.finite(),
                    }
                }
                "occupation_below" => occupation_laplace(fam, family_pq.as_ref()?, &geometry, x, Side::Below).ok(),
                "occupation_above" => occupation_laplace(fam, family_pq.as_ref()?, &geometry, x, Side::Above).ok(),
                _ => None,
            };
            v
        };
        let items = [
            ("dividends", Some(est.dividends)),
            ("injection", Some(est.injection)),
            ("resolvent", est.resolvent),
            ("exit", est.exit),
            ("occupation_below", est.occupation_below),
            ("occupation_above", est.occupation_above),
        ];
        for (name, e) in items {
            if let Some(e) = e {
                rows.push(EstimateRow {
                    functional: name.to_string(),
                    mean: e.mean,
                    stderr: e.stderr,
                    n: e.n_paths,
                    dt: cfg.dt,
                    horizon: cfg.horizon,
                    x,
                    analytic: analytic(name),
                });
            }
        }
    }
    let paths_csv = match config.dump_paths {
        Some(k) if k > 0 => Some(run_checked(dump_paths(&model, &geometry, xs[0], horizon, &cfg, k))?),
        _ => None,
    };
    Ok(SimulateReport { rows, paths_csv })
}

#[derive(Debug, Clone, Serialize)]
pub struct FiguresReport {
    pub b_star: f64,
    pub rows: Vec<SeriesRow>,
}

/// Series:
/// * `f` (param beta, x = b): `f(b)` on `[0, 2 b*]`; `b_star` (x = b*, value 0).
/// * `v_bstar` and `v_b` (param = level): value of the optimal and of nearby levels.
/// * `beta_sweep`, `delta_sweep` (param = swept value): optimal value functions,
///   with `beta_sweep_bstar` / `delta_sweep_bstar` (x empty) giving each `b*`.
/// * `delta_limit` (param = inf): the unrestricted-dividend limit.
pub fn cmd_figures(config: &RunConfig) -> CliResult<FiguresReport> {
    let (_, problem) = problem_from(config)?;
    let solved = run_checked(solve_bstar(&problem))?;
    let b_star = solved.b_star;
    let beta = problem.beta();
    let mut rows = Vec::new();

    for i in 0..200 {
        let b = 2.0 * b_star * i as f64 / 199.0;
        rows.push(SeriesRow::new("f", beta, Some(b), f_of_b(&problem, b)));
    }
    rows.push(SeriesRow::new("b_star", beta, Some(b_star), f_of_b(&problem, b_star)));

    let grid = match &config.x_grid {
        Some(g) => g.clone(),
        None => {
            let hi = (2.0 * b_star).max(b_star + 1.5);
            (0..50).map(|i| hi * i as f64 / 49.0).collect()
        }
    };
    for &x in &grid {
        let v = run_checked(value_refraction(&problem, b_star, x))?;
        rows.push(SeriesRow::new("v_bstar", b_star, Some(x), v));
    }
    for offset in [-1.0, -0.5, 0.5, 1.0] {
        let b = b_star + offset;
        if b <= 0.0 {
            continue;
        }
        for &x in &grid {
            let v = run_checked(value_refraction(&problem, b, x))?;
            rows.push(SeriesRow::new("v_b", b, Some(x), v));
        }
    }

    for (parameter, values, id) in [
        (SweepParameter::Beta, &BETA_SWEEP[..], "beta_sweep"),
        (SweepParameter::Delta, &DELTA_SWEEP[..], "delta_sweep"),
    ] {
        let table = run_checked(sensitivity_sweep(&problem, parameter, values, &grid))?;
        for row in &table.rows {
            rows.push(SeriesRow::new(&format!("{id}_bstar"), row.param, None, row.b_star));
            for (x, v) in grid.iter().zip(&row.values) {
                rows.push(SeriesRow::new(id, row.param, Some(*x), *v));
            }
        }
    }
    let family = problem.family();
    let barrier = run_checked(unrestricted_barrier(family, beta))?;
    rows.push(SeriesRow::new("delta_limit_barrier", f64::INFINITY, None, barrier));
    for &x in &grid {
        rows.push(SeriesRow::new("delta_limit", f64::INFINITY, Some(x), unrestricted_limit(family, barrier, x)));
    }
    Ok(FiguresReport { b_star, rows })
}

/// Runs the configured command.
pub fn run(config: &RunConfig) -> CliResult<Report> {
    Ok(match config.command {
        Command::Solve => Report::Solve(cmd_solve(config)?),
        Command::Check => Report::Check(cmd_check(config)?),
        Command::Simulate => Report::Simulate(cmd_simulate(config)?),
        Command::Figures => Report::Figures(cmd_figures(config)?),
    })
}

/// Renders the report in the configured format.
pub fn render(config: &RunConfig, report: &Report) -> String {
    match config.format {
        crate::config::Format::Csv => report.to_csv(),
        crate::config::Format::Json => report.to_json(config.command),
    }
}
