//! Command-line driver: accuracy experiments, safe policy improvement,
//! dataset generation, and the enumeration-based theory check.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ope_cli::{
    build_env, run_rmse_experiment, run_safe_improvement, run_theory_check, Config, RMSE_HEADER,
    SAFE_HEADER,
};
use ope_core::{sample_dataset, save_dataset, OpeError, Policy, Result};

#[derive(Parser)]
#[command(name = "ope", about = "Off-policy value evaluation benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file of `key = value` lines; CLI flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment id: mountain_car, sailing, tree, dag, or factored.
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated mixture rates between trained and behavior policy.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    /// Comma-separated estimator ids.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; results go to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Accuracy experiment: relative RMSE of each estimator per target
    /// policy and data split.
    Run(CommonArgs),
    /// Safe policy improvement by lower-confidence-bound selection.
    SafeImprove(CommonArgs),
    /// Enumeration suite verifying the estimator identities and variance
    /// theory; prints the maximum deviation.
    TheoryCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a dataset under the uniform behavior policy and write it in
    /// the text dataset format. Uses `--n-eval` as the trajectory count.
    GenData(CommonArgs),
}

fn load_config(args: &CommonArgs, finalize: bool) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        cfg.apply_text(&text)?;
    }
    if let Some(env) = &args.env {
        cfg.set("env", env)?;
    }
    if let Some(alpha) = &args.alpha {
        cfg.set("alphas", alpha)?;
    }
    if let Some(n) = args.n_train {
        cfg.n_train = n;
    }
    if let Some(n) = args.n_eval {
        cfg.n_eval = n;
    }
    if let Some(est) = &args.estimators {
        cfg.set("estimators", est)?;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if finalize {
        cfg.finalize()?;
    }
    Ok(cfg)
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)?,
        None => {
            let stdout = std::io::stdout();
            stdout.lock().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

/// Exit 1 for anything the user can fix in the invocation; 2 for failures
/// at runtime.
fn exit_code_for(err: &OpeError) -> u8 {
    match err {
        OpeError::InvalidArgument(_)
        | OpeError::InvalidPolicy(_)
        | OpeError::InvalidMdp(_)
        | OpeError::Parse { .. } => 1,
        OpeError::SupportViolation { .. } | OpeError::SizeGuard(_) | OpeError::Io(_) => 2,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run(args) => {
            let cfg = load_config(&args, true)?;
            let rows = run_rmse_experiment(&cfg)?;
            let mut content = String::from(RMSE_HEADER);
            content.push('\n');
            for row in rows {
                content.push_str(&row.csv());
                content.push('\n');
            }
            write_output(&args.out, &content)?;
            Ok(0)
        }
        Cmd::SafeImprove(args) => {
            let cfg = load_config(&args, true)?;
            let rows = run_safe_improvement(&cfg)?;
            let mut content = String::from(SAFE_HEADER);
            content.push('\n');
            for row in rows {
                content.push_str(&row.csv());
                content.push('\n');
            }
            write_output(&args.out, &content)?;
            Ok(0)
        }
        Cmd::TheoryCheck { seed, out } => {
            let mut buf = Vec::new();
            let max_dev = run_theory_check(seed, &mut buf)?;
            write_output(&out, &String::from_utf8_lossy(&buf))?;
            // A deviation beyond enumeration precision means the library's
            // closed forms disagree with brute force: a runtime failure.
            Ok(if max_dev <= 1e-10 { 0 } else { 2 })
        }
        Cmd::GenData(args) => {
            let cfg = load_config(&args, false)?;
            let env = build_env(&cfg)?;
            let pi0 = Policy::uniform(env.env().n_actions());
            let data = sample_dataset(env.env(), &pi0, cfg.n_eval, cfg.seed)?;
            let mut buf = Vec::new();
            save_dataset(&data, &mut buf)?;
            write_output(&args.out, &String::from_utf8_lossy(&buf))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; bad usage exits 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
