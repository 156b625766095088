//! Monte Carlo simulation of the refracted-reflected process.
//!
//! Jump epochs and sizes are exact (exponential inter-arrival times, phase-type
//! sizes by simulating the absorbing chain). Between jumps the drift, Brownian
//! part, refraction and reflection use Euler steps of length `dt`, with the
//! refraction indicator frozen at the start of each step and any undershoot
//! below 0 pushed back into the capital-injection meter `R`. By default each
//! Brownian cell also samples its bridge minimum and maximum, which makes the
//! reflection exact within the cell and catches passages above `a` between
//! grid points.
//!
//! Path `i` draws from ChaCha streams derived from `(seed, i)` only, and per-path
//! results are reduced in index order with compensated summation, so estimates are
//! bit-identical for any worker count.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlProblem;
use crate::error::{Error, Result};
use crate::fluctuation::{Geometry, Horizon, IntervalSet};
use crate::levy_model::{PhaseTypeJump, ValidatedModel};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "LEVY_REFRACT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Normals combined into one Euler step. Running `(dt, k)` and `(dt / k, 1)`
    /// drives both schemes with the same Brownian path.
    pub brownian_substeps: u32,
    /// Sample the Brownian-bridge minimum and maximum of each cell so that
    /// reflection at 0 and passage above `a` are not missed between grid points.
    /// With `false` the scheme is plain Euler with clamping.
    pub bridge_correction: bool,
}

impl SimConfig {
    /// Defaults with `horizon = ln(1000) / q`.
    pub fn new(q: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt: 1e-3,
            horizon: default_horizon(q),
            n_paths,
            seed,
            antithetic: false,
            brownian_substeps: 1,
            bridge_correction: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1e-2) {
            return Err(Error::InvalidParameter(format!("dt must lie in (0, 0.01] (got {})", self.dt)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be > 0 (got {})", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be positive".into()));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::InvalidParameter("antithetic sampling needs an even n_paths".into()));
        }
        if self.brownian_substeps == 0 {
            return Err(Error::InvalidParameter("brownian_substeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// `ln(1000) / q`, so that the discount factor at the horizon is 1e-3.
pub fn default_horizon(q: f64) -> f64 {
    if q > 0.0 {
        1000f64.ln() / q
    } else {
        100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Upper bound on the truncation bias from stopping at the horizon, where known.
    pub bias_bound: f64,
}

impl EstimateWithCI {
    /// `|mean - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    pub l: Vec<f64>,
    pub r: Vec<f64>,
    /// First time `V > a`, if reached before the horizon.
    pub exit_time: Option<f64>,
}

impl PathRecord {
    fn push(&mut self, t: f64, v: f64, l: f64, r: f64) {
        self.times.push(t);
        self.v.push(v);
        self.l.push(l);
        self.r.push(r);
    }
}

/// Samples phase-type variables by running the absorbing chain.
#[derive(Debug, Clone)]
pub struct PhaseSampler {
    initial: Vec<f64>,
    /// Per phase: total exit rate and cumulative jump probabilities; the last
    /// slot stands for absorption.
    rates: Vec<f64>,
    moves: Vec<Vec<f64>>,
}

impl PhaseSampler {
    pub fn new(jump: &PhaseTypeJump) -> Self {
        let m = jump.phases();
        let t = jump.subgenerator();
        let exit = jump.exit_rates();
        let initial = cumulative(jump.alpha().iter().copied());
        let mut rates = Vec::with_capacity(m);
        let mut moves = Vec::with_capacity(m);
        for i in 0..m {
            let rate = -t[(i, i)];
            let probs = (0..m)
                .map(|j| if j == i { 0.0 } else { t[(i, j)] / rate })
                .chain(std::iter::once(exit[i] / rate));
            rates.push(rate);
            moves.push(cumulative(probs));
        }
        Self {
            initial,
            rates,
            moves,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m = self.rates.len();
        let mut phase = pick(&self.initial, rng.random::<f64>());
        let mut total = 0.0;
        loop {
            let e: f64 = rng.sample(Exp1);
            total += e / self.rates[phase];
            let next = pick(&self.moves[phase], rng.random::<f64>());
            if next >= m {
                return total;
            }
            phase = next;
        }
    }
}

fn cumulative(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    it.map(|p| {
        acc += p;
        acc
    })
    .collect()
}

fn pick(cum: &[f64], u: f64) -> usize {
    let u = u * cum.last().copied().unwrap_or(1.0);
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

/// One phase-type draw.
pub fn sample_phase_type<R: Rng + ?Sized>(rng: &mut R, jump: &PhaseTypeJump) -> f64 {
    PhaseSampler::new(jump).sample(rng)
}

/// RNG for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything measured on one path.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PathOutcome {
    dividends: f64,
    injection: f64,
    resolvent: f64,
    exit: f64,
    occupation_below: f64,
    occupation_above: f64,
}

struct Simulator<'a> {
    c_y: f64,
    sigma: f64,
    kappa: f64,
    sampler: PhaseSampler,
    b: f64,
    a: Option<f64>,
    delta: f64,
    q: f64,
    p: f64,
    set: Option<&'a IntervalSet>,
    config: &'a SimConfig,
}

impl<'a> Simulator<'a> {
    fn new(
        model: &ValidatedModel,
        geometry: &Geometry,
        horizon: Horizon,
        set: Option<&'a IntervalSet>,
        config: &'a SimConfig,
    ) -> Result<Self> {
        geometry.validate()?;
        config.validate()?;
        let a = match horizon {
            Horizon::ToA => Some(
                geometry
                    .a
                    .ok_or_else(|| Error::GeometryViolation("upper level a is required".into()))?,
            ),
            Horizon::Infinite => None,
        };
        Ok(Self {
            c_y: model.c_y(),
            sigma: model.sigma(),
            kappa: model.kappa(),
            sampler: PhaseSampler::new(model.jump()),
            b: geometry.b,
            a,
            delta: geometry.delta,
            q: geometry.q,
            p: geometry.p.unwrap_or(0.0),
            set,
            config,
        })
    }

    /// Simulates path `index` from `x`; fills `record` when given.
    fn run(&self, x: f64, index: usize, mut record: Option<&mut PathRecord>) -> PathOutcome {
        let cfg = self.config;
        let (pair, sign) = if cfg.antithetic {
            ((index / 2) as u64, if index.is_multiple_of(2) { 1.0 } else { -1.0 })
        } else {
            (index as u64, 1.0)
        };
        let mut jump_rng = stream_rng(cfg.seed, 2 * pair);
        let mut normal_rng = stream_rng(cfg.seed, 2 * pair + 1);

        let k = cfg.brownian_substeps as usize;
        let fine = cfg.dt / k as f64;
        let q = self.q;
        let horizon = cfg.horizon;

        let mut out = PathOutcome::default();
        let mut t = 0.0;
        let mut v = x.max(0.0);
        let mut l_total = 0.0;
        let mut r_total = (-x).max(0.0);
        out.injection = r_total;
        let mut below = 0.0;
        let mut above = 0.0;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(0.0, v, l_total, r_total);
        }

        let mut next_jump = t + jump_rng.sample::<f64, _>(Exp1) / self.kappa;
        let mut exit_time = None;
        'outer: while t < horizon {
            let seg_end = next_jump.min(horizon);
            while t < seg_end {
                let refracting = v > self.b;
                let drift = -self.c_y - if refracting { self.delta } else { 0.0 };
                let disc = (-q * t).exp();
                let mut h = 0.0;
                let mut injected = 0.0;
                let mut crossed = false;
                let mut next_v = v;
                for _ in 0..k {
                    let cell = fine.min(seg_end - (t + h));
                    if cell <= 0.0 {
                        break;
                    }
                    let mut dx = drift * cell;
                    let mut low = dx.min(0.0);
                    let mut cross_u = 1.0;
                    if self.sigma > 0.0 {
                        let z: f64 = normal_rng.sample(StandardNormal);
                        dx += self.sigma * sign * z * cell.sqrt();
                        if cfg.bridge_correction {
                            let u: f64 = normal_rng.random();
                            cross_u = normal_rng.random();
                            let var = self.sigma * self.sigma * cell;
                            low = 0.5 * (dx - (dx * dx - 2.0 * var * (1.0 - u).ln()).sqrt());
                        } else {
                            low = dx.min(0.0);
                        }
                    }
                    let start = next_v;
                    let push = (-(start + low)).max(0.0);
                    next_v = start + dx + push;
                    if push > 0.0 {
                        injected += push;
                        out.injection += push * (-q * (t + h + cell)).exp();
                    }
                    h += cell;
                    if let Some(a) = self.a {
                        if next_v > a {
                            crossed = true;
                        } else if cfg.bridge_correction && self.sigma > 0.0 && start < a {
                            let var = self.sigma * self.sigma * cell;
                            if cross_u < (-2.0 * (a - start) * (a - next_v) / var).exp() {
                                crossed = true;
                            }
                        }
                        if crossed {
                            break;
                        }
                    }
                }
                if h <= 0.0 {
                    break;
                }
                let disc_int = if q > 0.0 { disc * -(-q * h).exp_m1() / q } else { h };
                let dl = if refracting { self.delta * h } else { 0.0 };
                if let Some(set) = self.set {
                    if set.contains(v) {
                        out.resolvent += disc_int;
                    }
                }
                if v < self.b {
                    below += h;
                } else if v > self.b {
                    above += h;
                }
                if refracting {
                    out.dividends += self.delta * disc_int;
                }
                l_total += dl;
                r_total += injected;
                t += h;
                v = next_v;
                if let Some(rec) = record.as_deref_mut() {
                    rec.push(t, v, l_total, r_total);
                }
                if crossed {
                    exit_time = Some(t);
                    break 'outer;
                }
            }
            if t >= horizon {
                break;
            }
            t = next_jump;
            v += self.sampler.sample(&mut jump_rng);
            next_jump = t + jump_rng.sample::<f64, _>(Exp1) / self.kappa;
            if let Some(rec) = record.as_deref_mut() {
                rec.push(t, v, l_total, r_total);
            }
            if let Some(a) = self.a {
                if v > a {
                    exit_time = Some(t);
                    break;
                }
            }
        }
        if let Some(te) = exit_time {
            out.exit = (-q * te).exp();
            out.occupation_below = (-q * te - self.p * below).exp();
            out.occupation_above = (-q * te - self.p * above).exp();
        }
        if let Some(rec) = record {
            rec.exit_time = exit_time;
        }
        out
    }
}

/// Simulates one path with its full trajectory.
pub fn simulate_path(
    model: &ValidatedModel,
    geometry: &Geometry,
    x: f64,
    horizon: Horizon,
    config: &SimConfig,
    index: usize,
) -> Result<PathRecord> {
    let sim = Simulator::new(model, geometry, horizon, None, config)?;
    let mut rec = PathRecord::default();
    sim.run(x, index, Some(&mut rec));
    Ok(rec)
}

/// CSV dump `path,t,V,L,R` of the first `k` paths.
pub fn dump_paths(
    model: &ValidatedModel,
    geometry: &Geometry,
    x: f64,
    horizon: Horizon,
    config: &SimConfig,
    k: usize,
) -> Result<String> {
    let mut out = String::from("path,t,V,L,R\n");
    for i in 0..k {
        let rec = simulate_path(model, geometry, x, horizon, config, i)?;
        for j in 0..rec.times.len() {
            let _ = writeln!(out, "{},{},{},{},{}", i, rec.times[j], rec.v[j], rec.l[j], rec.r[j]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Functional {
    Dividends,
    Injection,
    Resolvent,
    Exit,
    OccupationBelow,
    OccupationAbove,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::Dividends => "dividends",
            Functional::Injection => "injection",
            Functional::Resolvent => "resolvent",
            Functional::Exit => "exit",
            Functional::OccupationBelow => "occupation_below",
            Functional::OccupationAbove => "occupation_above",
        }
    }
}

/// Estimates for all functionals from one set of paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimates {
    pub dividends: EstimateWithCI,
    pub injection: EstimateWithCI,
    pub resolvent: Option<EstimateWithCI>,
    pub exit: Option<EstimateWithCI>,
    pub occupation_below: Option<EstimateWithCI>,
    pub occupation_above: Option<EstimateWithCI>,
}

impl FunctionalEstimates {
    pub fn get(&self, f: Functional) -> Option<EstimateWithCI> {
        match f {
            Functional::Dividends => Some(self.dividends),
            Functional::Injection => Some(self.injection),
            Functional::Resolvent => self.resolvent,
            Functional::Exit => self.exit,
            Functional::OccupationBelow => self.occupation_below,
            Functional::OccupationAbove => self.occupation_above,
        }
    }
}

/// Runs `f` inside a pool capped by `LEVY_REFRACT_THREADS` when it is set.
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn simulate_all(sim: &Simulator<'_>, x: f64) -> Vec<PathOutcome> {
    let n = sim.config.n_paths;
    with_worker_pool(|| (0..n).into_par_iter().map(|i| sim.run(x, i, None)).collect())
}

/// Neumaier-compensated mean and standard error of `values`.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = neumaier(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let ss = neumaier(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt())
}

fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn summarize(outcomes: &[PathOutcome], antithetic: bool, pick: impl Fn(&PathOutcome) -> f64, bias: f64) -> EstimateWithCI {
    let samples: Vec<f64> = if antithetic {
        outcomes
            .chunks(2)
            .map(|pair| 0.5 * (pick(&pair[0]) + pick(&pair[1])))
            .collect()
    } else {
        outcomes.iter().map(pick).collect()
    };
    let (mean, stderr) = mean_and_stderr(&samples);
    EstimateWithCI {
        mean,
        stderr,
        n_paths: outcomes.len(),
        bias_bound: bias,
    }
}

/// Estimates every functional on common paths. With `Horizon::ToA` paths stop at
/// the first passage above `a` (or at the horizon); with `Horizon::Infinite` they
/// run to the horizon. `set` enables the resolvent estimate; occupation estimates
/// need `geometry.p`.
pub fn estimate_functionals(
    model: &ValidatedModel,
    geometry: &Geometry,
    x: f64,
    horizon: Horizon,
    set: Option<&IntervalSet>,
    config: &SimConfig,
) -> Result<FunctionalEstimates> {
    let sim = Simulator::new(model, geometry, horizon, set, config)?;
    let outcomes = simulate_all(&sim, x);
    let q = geometry.q;
    let tail = if q > 0.0 { (-q * config.horizon).exp() / q } else { f64::INFINITY };
    let anti = config.antithetic;
    let to_a = horizon == Horizon::ToA;
    let dividends = summarize(&outcomes, anti, |o| o.dividends, geometry.delta * tail);
    let injection = summarize(&outcomes, anti, |o| o.injection, f64::NAN);
    let resolvent = set.map(|_| summarize(&outcomes, anti, |o| o.resolvent, tail));
    let exit = to_a.then(|| summarize(&outcomes, anti, |o| o.exit, (-q * config.horizon).exp()));
    let occupation = to_a && geometry.p.is_some();
    let occupation_below = occupation.then(|| summarize(&outcomes, anti, |o| o.occupation_below, f64::NAN));
    let occupation_above = occupation.then(|| summarize(&outcomes, anti, |o| o.occupation_above, f64::NAN));
    Ok(FunctionalEstimates {
        dividends,
        injection,
        resolvent,
        exit,
        occupation_below,
        occupation_above,
    })
}

/// Single functional; see [`estimate_functionals`].
pub fn estimate_functional(
    model: &ValidatedModel,
    geometry: &Geometry,
    x: f64,
    functional: Functional,
    horizon: Horizon,
    set: Option<&IntervalSet>,
    config: &SimConfig,
) -> Result<EstimateWithCI> {
    if functional == Functional::Resolvent && set.is_none() {
        return Err(Error::InvalidParameter("resolvent estimate needs a set B".into()));
    }
    let all = estimate_functionals(model, geometry, x, horizon, set, config)?;
    all.get(functional).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "functional {} is not available for this horizon/geometry",
            functional.name()
        ))
    })
}

/// Infinite-horizon NPV of dividends minus `beta` times injections, per path.
pub fn estimate_value(problem: &ControlProblem, b: f64, x: f64, config: &SimConfig) -> Result<EstimateWithCI> {
    let geometry = Geometry::new(b, problem.delta(), problem.q());
    let sim = Simulator::new(problem.model(), &geometry, Horizon::Infinite, None, config)?;
    let outcomes = simulate_all(&sim, x);
    let beta = problem.beta();
    let bias = problem.delta() * (-problem.q() * config.horizon).exp() / problem.q();
    Ok(summarize(&outcomes, config.antithetic, |o| o.dividends - beta * o.injection, bias))
}
