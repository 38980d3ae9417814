use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drr_core::experiment::{graph_info, prepare, run_experiment, run_suite, validate_config, ExperimentConfig};
use drr_core::Error;

/// Environment variable overriding the master seed of any config.
const SEED_ENV: &str = "DRR_SEED";

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGENCE: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "drr", version, about = "Decentralized random reshuffling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method of a config and write CSV/JSON outputs.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output` in the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a named check suite and print its JSON verdict report.
    Suite {
        name: String,
        /// Also write the report to this file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute the reference solution of a config's problem.
    Solve { config: PathBuf },
    /// Print n, ρ_w and the admissible stepsize bounds of a config.
    GraphInfo { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    let mut cfg = validate_config(path)?;
    if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.seed = raw.trim().parse().map_err(|_| Error::Config { path: SEED_ENV.into(), msg: format!("not an unsigned integer: `{raw}`") })?;
    }
    Ok(cfg)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_CONFIG,
    }
}

fn execute(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Run { config, output } => {
            let mut cfg = load(&config)?;
            if output.is_some() {
                cfg.output = output;
            }
            let out = run_experiment(&cfg)?;
            for r in &out.records {
                let finals: Vec<String> = r.metrics.iter().map(|(k, s)| format!("{k}={:.6e}", s.last_mean())).collect();
                println!("{:<5} {}", r.method.name(), finals.join(" "));
            }
            if let Some(dir) = &cfg.output {
                println!("wrote {}", dir.display());
            }
            Ok(0)
        }
        Command::Suite { name, output } => {
            let report = run_suite(&name)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = output {
                std::fs::write(path, &text)?;
            }
            for v in &report.verdicts {
                eprintln!("{}", v.summary());
            }
            Ok(if report.pass { 0 } else { EXIT_CHECK })
        }
        Command::Solve { config } => {
            let prep = prepare(&load(&config)?)?;
            let body = serde_json::json!({
                "x_star": prep.reference.x_star,
                "f_star": prep.reference.f_star,
                "grad_norm": prep.reference.grad_norm,
                "iterations": prep.reference.iterations,
                "approximate": prep.reference.approximate,
                "sigma_star_sq": prep.sigma_star_sq,
                "mu": prep.constants.mu,
                "L": prep.constants.l,
                "A": prep.constants.a,
                "B_sq": prep.constants.b_sq,
            });
            println!("{}", serde_json::to_string_pretty(&body)?);
            Ok(0)
        }
        Command::GraphInfo { config } => {
            let info = graph_info(&load(&config)?)?;
            println!("n        {}", info.n);
            println!("edges    {}", info.edges);
            println!("rho_w    {}", info.rho_w);
            println!("L        {}", info.l);
            println!("mu       {}", info.mu);
            println!("m        {}", info.m);
            for t in &info.alpha_terms {
                println!("alpha[{}] {}", t.name, t.value);
            }
            println!("alpha_max {}", info.alpha_max);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
