//! `mpinfer run|verify`: experiment sweeps to CSV and the oracle suites.

mod config;
mod run;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mpinfer::verify::{run_suite, Suite, VerifyConfig};

use config::{parse_config_text, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "mpinfer", version, about = "Massively parallel importance weighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method over a list of K and seeds, writing CSV traces.
    Run(RunArgs),
    /// Run oracle and invariant suites; exits 0 iff every check passes.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value file; flags take precedence over its entries.
    #[arg(long)]
    config: Option<String>,
    /// movielens, bus, ts-single or ts-multi.
    #[arg(long)]
    experiment: Option<String>,
    /// mp-rws, global-rws, mp-vi-eval, tmc-vi-eval, global-iwae-eval or smc-eval.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated particle counts.
    #[arg(long = "K")]
    k: Option<String>,
    /// Training iterations (ignored by evaluation methods).
    #[arg(long)]
    iters: Option<String>,
    /// A count (counting up from MPINFER_SEED, default 0) or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Adam base learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads over seeds.
    #[arg(long = "parallel-seeds")]
    parallel_seeds: Option<String>,
    /// Estimates averaged per seed by evaluation methods.
    #[arg(long)]
    draws: Option<String>,
    /// Held-out scoring cadence in training iterations.
    #[arg(long = "eval-every")]
    eval_every: Option<String>,
    /// Batches averaged per held-out score.
    #[arg(long = "eval-draws")]
    eval_draws: Option<String>,
    /// Also write wall-clock seconds per training iteration.
    #[arg(long)]
    timing: bool,
    /// u.data ratings file or bus CSV; synthetic data otherwise.
    #[arg(long)]
    data: Option<String>,
    /// u.item file supplying genre features for MovieLens.
    #[arg(long)]
    items: Option<String>,
    /// Seed of synthetic data and of the train/test split.
    #[arg(long = "data-seed")]
    data_seed: Option<String>,
    #[arg(long)]
    users: Option<String>,
    #[arg(long = "films-per-user")]
    films_per_user: Option<String>,
    /// Timeseries length.
    #[arg(long = "N")]
    n: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suites to run: unbiasedness, equivalence, gradients, bounds, complexity.
    /// All of them when omitted.
    suites: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draws per method and K in the bounds suite.
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    /// K of the large-sample convergence check.
    #[arg(long = "large-k", default_value_t = 10_000)]
    large_k: usize,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

fn merged_settings(args: &RunArgs) -> Result<BTreeMap<String, String>, Failure> {
    let mut map = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Runtime(format!("cannot read config `{path}`: {e}")))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    let flags = [
        ("experiment", &args.experiment),
        ("method", &args.method),
        ("K", &args.k),
        ("iters", &args.iters),
        ("seeds", &args.seeds),
        ("lr", &args.lr),
        ("out", &args.out),
        ("parallel-seeds", &args.parallel_seeds),
        ("draws", &args.draws),
        ("eval-every", &args.eval_every),
        ("eval-draws", &args.eval_draws),
        ("data", &args.data),
        ("items", &args.items),
        ("data-seed", &args.data_seed),
        ("users", &args.users),
        ("films-per-user", &args.films_per_user),
        ("N", &args.n),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            map.insert(key.to_string(), v.clone());
        }
    }
    if args.timing {
        map.insert("timing".into(), "true".into());
    }
    Ok(map)
}

fn base_seed() -> Result<u64, Failure> {
    match std::env::var("MPINFER_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("MPINFER_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let config = RunConfig::from_map(&merged_settings(args)?, base_seed()?)?;
    let start = Instant::now();
    let (summary, failures) = run::execute(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
    print!("{}", run::format_summary(&summary));
    eprintln!(
        "wrote {} CSV file(s) and a summary to {} in {:.1}s",
        config.ks.len(),
        config.out.display(),
        start.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(failures.join("\n")))
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let suites = if args.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suites
            .iter()
            .map(|s| {
                s.parse::<Suite>().map_err(|_| {
                    let valid: Vec<&str> = Suite::ALL.iter().map(|x| x.as_str()).collect();
                    Failure::Usage(format!("unknown suite `{s}`; valid suites: {}", valid.join(", ")))
                })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let config = VerifyConfig {
        seed: args.seed,
        bound_draws: args.draws,
        large_k: args.large_k,
        ..VerifyConfig::default()
    };
    let mut failed = 0;
    for suite in suites {
        let checks = run_suite(suite, &config).map_err(|e| Failure::Runtime(format!("{suite}: {e}")))?;
        for c in &checks {
            println!("{c}");
            failed += usize::from(!c.passed);
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
