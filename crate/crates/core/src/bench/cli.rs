//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::bench::config::{ExperimentConfig, Method};
use crate::bench::runner::{mixing_constants, ramanujan_bound, run_to_disk, sample_matrix};
use crate::error::{Error, Result};
use crate::metrics::median;
use crate::model::{make_builtin, BuiltinModel};
use crate::oracle::{Connections, FiniteModel, OracleTrace};
use crate::phi::TestFunction;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "alpha-smc", version, about = "Particle filters with sparse resampling connectivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; affects wall time only.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory, overriding the config's `out`.
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
    /// Mixing constants of random connectivity matrices.
    Mixing {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: usize,
        #[arg(long, default_value_t = 1)]
        graphs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// fixed-regular, local-exchange or per-step-random-rows.
        #[arg(long, default_value = "fixed-regular")]
        kind: String,
        /// Write the edge list of the first matrix here.
        #[arg(long = "dump-edges")]
        dump_edges: Option<PathBuf>,
    },
    /// Exact oracle values for a model with finite support.
    Oracle {
        #[arg(long)]
        model: String,
        #[arg(long = "T")]
        horizon: usize,
        /// Connections per particle; omit for the bootstrap limit.
        #[arg(long = "C")]
        c: Option<usize>,
        #[arg(long, default_value = "one")]
        phi: String,
        /// Print the full JSON record.
        #[arg(long)]
        json: bool,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Shortest decimal that survives 12 significant digits, so exact values print exactly.
fn pretty(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn phi_label(phi: TestFunction) -> String {
    match phi {
        TestFunction::One => "1".into(),
        other => other.name(),
    }
}

fn parse_method(kind: &str) -> Result<Method> {
    serde_json::from_value(serde_json::Value::String(kind.to_string()))
        .map_err(|_| Error::invalid(format!("unknown connectivity kind `{kind}`")))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    match command {
        Command::Run {
            config,
            threads,
            out_dir,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let manifest = run_to_disk(&cfg, out_dir.as_deref(), threads)?;
            let dir = out_dir.unwrap_or(cfg.out.clone());
            writeln!(
                out,
                "{} finished in {:.2}s; wrote {} files to {} (config {})",
                manifest.experiment,
                manifest.wall_time_seconds,
                manifest.files.len(),
                dir.display(),
                &manifest.config_hash[..12]
            )
            .map_err(w)?;
        }
        Command::Mixing {
            n,
            c,
            graphs,
            seed,
            kind,
            dump_edges,
        } => {
            let method = parse_method(&kind)?;
            if !method.uses_c() {
                return Err(Error::invalid("the complete matrix has mixing constant 0"));
            }
            if graphs == 0 {
                return Err(Error::invalid("graphs must be at least 1"));
            }
            let lambdas = mixing_constants(method, n, c, graphs, seed)?;
            for (g, lam) in lambdas.iter().enumerate() {
                writeln!(out, "graph {g}: lambda={}", pretty(*lam)).map_err(w)?;
            }
            writeln!(out, "median lambda={}", pretty(median(&lambdas)?)).map_err(w)?;
            if method == Method::FixedRegular {
                writeln!(out, "ramanujan 2*sqrt(C-1)/C={}", pretty(ramanujan_bound(c))).map_err(w)?;
            }
            if let Some(path) = dump_edges {
                let m = sample_matrix(method, n, c, seed, 0)?;
                crate::bench::output::write_atomic(&path, |f| m.write_edge_list(f).map_err(|e| Error::io(&path, e)))?;
            }
        }
        Command::Oracle {
            model,
            horizon,
            c,
            phi,
            json,
        } => {
            let phi: TestFunction = phi.parse()?;
            let spec = BuiltinModel::from_tag(&model)?;
            let spec = if horizon > spec.horizon() { spec.with_horizon(horizon) } else { spec };
            let built = make_builtin(&spec)?;
            let fm = FiniteModel::from_model(&built)?;
            if c == Some(0) {
                return Err(Error::invalid("C must be at least 1"));
            }
            let trace = OracleTrace::compute(&fm, horizon, Connections::from_c(c))?;
            let report = trace.report(horizon, phi)?;
            if json {
                let text = serde_json::to_string_pretty(&report)?;
                writeln!(out, "{text}").map_err(w)?;
            } else {
                let l = phi_label(phi);
                writeln!(out, "Z={}", pretty(report.z)).map_err(w)?;
                writeln!(out, "pi_{horizon}({l})={}", pretty(report.pi_phi)).map_err(w)?;
                writeln!(out, "mu_{horizon}({l})={}", pretty(report.mu_phi)).map_err(w)?;
                writeln!(out, "V_gamma_{horizon}({l})={}", pretty(report.v_gamma)).map_err(w)?;
                writeln!(out, "V_pi_{horizon}({l})={}", pretty(report.v_pi)).map_err(w)?;
            }
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            writeln!(
                out,
                "ok: {} with {} grid cells x {} replicates",
                cfg.experiment.name(),
                cfg.cells().len(),
                cfg.replicates
            )
            .map_err(w)?;
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if informational {
                let _ = write!(out, "{text}");
                return EXIT_OK;
            }
            let _ = write!(err, "{text}");
            return EXIT_CONFIG;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = main_with_args(std::iter::once("alpha-smc").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn oracle_two_state() {
        let (code, out, _) = run(&["oracle", "--model", "two-state", "--T", "1", "--C", "2", "--phi", "one"]);
        assert_eq!(code, 0);
        assert!(out.contains("Z=1.5\n"), "{out}");
        assert!(out.contains("mu_1(1)=2.375\n"), "{out}");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&["frobnicate"]).0, 1);
        assert_eq!(run(&["mixing", "--n", "4"]).0, 1);
        assert_eq!(run(&["--help"]).0, 0);
        assert_eq!(run(&["oracle", "--model", "nope", "--T", "1"]).0, 1);
        assert_eq!(run(&["oracle", "--model", "ar1-indicator", "--T", "1"]).0, 1);
        assert_eq!(run(&["validate", "--config", "/nonexistent/config.json"]).0, 2);
    }

    #[test]
    fn pretty_trims_rounding_noise() {
        assert_eq!(pretty(2.3750000000000004), "2.375");
        assert_eq!(pretty(1.5), "1.5");
        assert_eq!(pretty(1.0 / 3.0), "0.333333333333");
    }
}
