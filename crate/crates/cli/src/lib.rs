//! Command-line front end: reads a jump model and run parameters, runs one of
//! `solve`, `check`, `simulate` or `figures`, and emits CSV or JSON.
//!
//! CSV layouts:
//! * `solve`: `param,b_star,x,v,v_prime`
//! * `figures`: `series_id,param,x,value`
//! * `check`: `suite,name,value,tolerance,status`
//! * `simulate`: `functional,mean,stderr,n,dt,horizon,x,analytic`
//!
//! JSON output carries a top-level `schema_version`.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_check, cmd_figures, cmd_simulate, cmd_solve, render, run, Report};
pub use config::{parse_config, Command, Format, RunConfig};
pub use error::{CliError, CliResult};

use std::path::Path;

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses `argv`, runs the command and writes its output. Returns the text
/// destined for stdout (empty when `--out` is given).
pub fn execute<I, T>(argv: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = parse_config(argv)?;
    let report = run(&config)?;
    let text = render(&config, &report);
    if let Report::Simulate(sim) = &report {
        if let Some(paths) = &sim.paths_csv {
            let dest = config.paths_out.clone().unwrap_or_else(|| "paths.csv".into());
            write_file(&dest, paths)?;
        }
    }
    let failed = match &report {
        Report::Check(c) => c.failed,
        _ => 0,
    };
    let stdout = match &config.out {
        Some(path) => {
            write_file(path, &text)?;
            String::new()
        }
        None => text,
    };
    if failed > 0 {
        if config.out.is_none() {
            print!("{stdout}");
        }
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(stdout)
}
