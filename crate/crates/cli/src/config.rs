use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use levy_refract::fluctuation::IntervalSet;
use levy_refract::LevyModelSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Solve,
    Check,
    Simulate,
    Figures,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Figures => "figures",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "levy-refract", version, about = "Refracted-reflected Lévy processes: scale functions, fluctuation identities, optimal dividends")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Optimal refraction level b* and the value function.
    Solve(Flags),
    /// Run the numerical invariant suites.
    Check(Flags),
    /// Monte Carlo estimates of the discounted functionals.
    Simulate(Flags),
    /// Datasets behind the f(b) plot and the sensitivity plots.
    Figures(Flags),
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// Jump-model file (JSON or TOML with c_Y, sigma, kappa, alpha, T).
    #[arg(long)]
    model: Option<PathBuf>,
    /// TOML file with run parameters; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Refraction level.
    #[arg(long)]
    b: Option<f64>,
    /// Upper exit level.
    #[arg(long)]
    a: Option<f64>,
    /// Occupation-time rate.
    #[arg(long)]
    p: Option<f64>,
    /// `lo:hi:n` or a comma-separated list of points.
    #[arg(long = "x-grid")]
    x_grid: Option<String>,
    /// Resolvent set, e.g. "0.2,0.8" or "0,0.5;1,2".
    #[arg(long = "B")]
    set: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-paths")]
    n_paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Normals per Euler step.
    #[arg(long)]
    substeps: Option<u32>,
    #[arg(long)]
    antithetic: bool,
    /// Plain Euler clamping without the Brownian-bridge correction.
    #[arg(long = "no-bridge")]
    no_bridge: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Add Monte Carlo comparisons to `check`.
    #[arg(long = "with-mc")]
    with_mc: bool,
    /// Start from the half-normal jump model with q = 0.05, beta = 2, delta = 1.
    #[arg(long = "paper-defaults")]
    paper_defaults: bool,
    /// Write the first k simulated paths as CSV.
    #[arg(long = "dump-paths")]
    dump_paths: Option<usize>,
    /// Destination of the path dump (default: paths.csv).
    #[arg(long = "paths-out")]
    paths_out: Option<PathBuf>,
}

/// Run parameters accepted in a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<PathBuf>,
    q: Option<f64>,
    beta: Option<f64>,
    delta: Option<f64>,
    b: Option<f64>,
    a: Option<f64>,
    p: Option<f64>,
    x_grid: Option<String>,
    #[serde(rename = "B")]
    set: Option<String>,
    seed: Option<u64>,
    n_paths: Option<usize>,
    dt: Option<f64>,
    horizon: Option<f64>,
    substeps: Option<u32>,
    antithetic: Option<bool>,
    bridge_correction: Option<bool>,
    out: Option<PathBuf>,
    format: Option<Format>,
    with_mc: Option<bool>,
    paper_defaults: Option<bool>,
    dump_paths: Option<usize>,
    paths_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSettings {
    pub seed: u64,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: Option<f64>,
    pub substeps: u32,
    pub antithetic: bool,
    pub bridge_correction: bool,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            seed: 20_240_101,
            n_paths: 10_000,
            dt: 1e-3,
            horizon: None,
            substeps: 1,
            antithetic: false,
            bridge_correction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub model_path: Option<PathBuf>,
    pub model: LevyModelSpec,
    pub q: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub b: Option<f64>,
    pub a: Option<f64>,
    pub p: Option<f64>,
    pub x_grid: Option<Vec<f64>>,
    pub set: Option<IntervalSet>,
    pub mc: McSettings,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub with_mc: bool,
    pub paper_defaults: bool,
    pub dump_paths: Option<usize>,
    pub paths_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn require(&self, name: &str, value: Option<f64>) -> CliResult<f64> {
        value.ok_or_else(|| CliError::Usage(format!("--{name} is required for `{}`", self.command.name())))
    }
}

/// Parses `argv` (including the program name), layering built-in defaults, the
/// `--config` file and command-line flags in that order.
pub fn parse_config<I, T>(argv: I) -> CliResult<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    let (command, flags) = match cli.command {
        Sub::Solve(f) => (Command::Solve, f),
        Sub::Check(f) => (Command::Check, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Figures(f) => (Command::Figures, f),
    };
    let (file, base_dir) = match &flags.config {
        Some(path) => (read_file_config(path)?, path.parent().map(Path::to_path_buf)),
        None => (FileConfig::default(), None),
    };
    build(command, flags, file, base_dir)
}

fn read_file_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
}

fn build(command: Command, flags: Flags, file: FileConfig, base_dir: Option<PathBuf>) -> CliResult<RunConfig> {
    let preset = flags.paper_defaults || file.paper_defaults.unwrap_or(false);
    let preset_value = |v: f64| preset.then_some(v);

    let model_path = flags.model.clone().or_else(|| {
        file.model.as_ref().map(|p| match &base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.clone(),
        })
    });
    let model = match &model_path {
        Some(path) => load_model(path)?,
        None if preset => LevyModelSpec::half_normal_fit(),
        None => return Err(CliError::Usage("--model <file> or --paper-defaults is required".into())),
    };

    let x_grid = flags.x_grid.as_deref().or(file.x_grid.as_deref()).map(parse_grid).transpose()?;
    let set = flags
        .set
        .as_deref()
        .or(file.set.as_deref())
        .map(|s| {
            s.parse::<IntervalSet>()
                .map_err(|e| CliError::Usage(format!("--B: {e}")))
        })
        .transpose()?;

    let defaults = McSettings::default();
    let mc = McSettings {
        seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
        n_paths: flags.n_paths.or(file.n_paths).unwrap_or(defaults.n_paths),
        dt: flags.dt.or(file.dt).unwrap_or(defaults.dt),
        horizon: flags.horizon.or(file.horizon),
        substeps: flags.substeps.or(file.substeps).unwrap_or(defaults.substeps),
        antithetic: flags.antithetic || file.antithetic.unwrap_or(false),
        bridge_correction: !flags.no_bridge && file.bridge_correction.unwrap_or(true),
    };

    let config = RunConfig {
        command,
        model_path,
        model,
        q: flags.q.or(file.q).or(preset_value(0.05)),
        beta: flags.beta.or(file.beta).or(preset_value(2.0)),
        delta: flags.delta.or(file.delta).or(preset_value(1.0)),
        b: flags.b.or(file.b),
        a: flags.a.or(file.a),
        p: flags.p.or(file.p),
        x_grid,
        set,
        mc,
        out: flags.out.or(file.out),
        format: flags.format.or(file.format).unwrap_or(Format::Csv),
        with_mc: flags.with_mc || file.with_mc.unwrap_or(false),
        paper_defaults: preset,
        dump_paths: flags.dump_paths.or(file.dump_paths),
        paths_out: flags.paths_out.or(file.paths_out),
    };
    check_ranges(&config)?;
    Ok(config)
}

fn check_ranges(c: &RunConfig) -> CliResult<()> {
    let bad = |name: &str, v: f64, rule: &str| Err(CliError::Usage(format!("--{name} {v}: must be {rule}")));
    if let Some(q) = c.q {
        if !(q >= 0.0 && q.is_finite()) {
            return bad("q", q, ">= 0");
        }
    }
    if let Some(beta) = c.beta {
        if !(beta > 1.0 && beta.is_finite()) {
            return bad("beta", beta, "> 1");
        }
    }
    if let Some(delta) = c.delta {
        if !(delta >= 0.0 && delta.is_finite()) {
            return bad("delta", delta, ">= 0");
        }
    }
    if let Some(b) = c.b {
        if !(b >= 0.0 && b.is_finite()) {
            return bad("b", b, ">= 0");
        }
    }
    if let Some(p) = c.p {
        if !(p >= 0.0 && p.is_finite()) {
            return bad("p", p, ">= 0");
        }
    }
    if !(c.mc.dt > 0.0 && c.mc.dt <= 1e-2) {
        return bad("dt", c.mc.dt, "in (0, 0.01]");
    }
    if c.mc.n_paths == 0 {
        return Err(CliError::Usage("--n-paths must be positive".into()));
    }
    if c.mc.substeps == 0 {
        return Err(CliError::Usage("--substeps must be positive".into()));
    }
    if let Some(h) = c.mc.horizon {
        if !(h > 0.0) {
            return bad("horizon", h, "> 0");
        }
    }
    Ok(())
}

/// Reads a model file; `.json` is parsed as JSON, anything else as TOML.
pub fn load_model(path: &Path) -> CliResult<LevyModelSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }
}

/// `lo:hi:n` (inclusive, evenly spaced) or `x1,x2,...`.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let err = |msg: &str| CliError::Usage(format!("--x-grid {s:?}: {msg}"));
    let s = s.trim();
    if s.is_empty() {
        return Err(err("empty grid"));
    }
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(err("expected lo:hi:n"));
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| err("bad lower end"))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| err("bad upper end"))?;
        let n: usize = parts[2].trim().parse().map_err(|_| err("bad point count"))?;
        if n == 0 {
            return Err(err("empty grid"));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(err("need finite lo <= hi"));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        return Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err("bad point"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0, 0.5,1.5").unwrap(), vec![0.0, 0.5, 1.5]);
        assert!(matches!(parse_grid("0:1:0"), Err(CliError::Usage(_))));
        assert!(matches!(parse_grid(""), Err(CliError::Usage(_))));
        assert!(matches!(parse_grid("1:0:4"), Err(CliError::Usage(_))));
    }

    #[test]
    fn paper_defaults_fill_parameters() {
        let c = parse_config(["levy-refract", "figures", "--paper-defaults"]).unwrap();
        assert_eq!(c.command, Command::Figures);
        assert_eq!((c.q, c.beta, c.delta), (Some(0.05), Some(2.0), Some(1.0)));
        assert_eq!(c.model, LevyModelSpec::half_normal_fit());
    }

    #[test]
    fn flags_override_paper_defaults() {
        let c = parse_config(["levy-refract", "solve", "--paper-defaults", "--beta", "5"]).unwrap();
        assert_eq!(c.beta, Some(5.0));
    }

    #[test]
    fn out_of_range_is_usage_error() {
        let e = parse_config(["levy-refract", "solve", "--paper-defaults", "--beta", "0.5"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = parse_config(["levy-refract", "simulate", "--paper-defaults", "--dt", "0.1"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
