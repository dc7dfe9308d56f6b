use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hcrm_cli::config::{BaseFamily, ModelConfig, Overrides};
use hcrm_cli::{cmd_eval, cmd_fit, cmd_pmf, eval_csv, format_log_prob, parse_matrix, CliError, PmfKind};
use hcrm_core::parallel::Execution;
use hcrm_core::verify::{run_suite, Fault, VerifyConfig};

#[derive(Parser)]
#[command(name = "hcrm", version, about = "Hierarchical CRM topic models: fit, evaluate, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Gibbs sampler on a corpus.
    Fit {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Perplexity over a grid of training fractions.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated training fractions.
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5,0.6,0.7")]
        grid: Vec<f64>,
        /// Score existing runs under --out instead of fitting.
        #[arg(long)]
        no_fit: bool,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum oracle draws for the rejection checks.
        #[arg(long)]
        budget: Option<u64>,
        /// Smaller Monte Carlo sample sizes.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        sequential: bool,
        /// Inject a fault (testing hook).
        #[arg(long, value_parser = ["psi-sign-flip"])]
        fault: Option<String>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print a log-probability.
    Pmf {
        #[arg(long, value_enum, default_value = "eq5")]
        kind: PmfKind,
        /// Rows separated by ';', counts by ','.
        #[arg(long, conflicts_with = "csv")]
        matrix: Option<String>,
        /// CSV file, one row per line.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Number of processes (defaults to the number of rows).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value = "gamma")]
        base: BaseFamily,
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long, default_value_t = 0.0)]
        d: f64,
        #[arg(long, default_value = "1:0,1:0.4")]
        sggp_components: String,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Fit { overrides } => {
            let cfg = overrides.resolve()?;
            let m = cmd_fit(&cfg)?;
            if let (Some(p), Some(u)) = (m.perplexity, m.unigram_perplexity) {
                println!("perplexity {p:.6} (unigram {u:.6}) over {} test tokens, {} samples", m.test_tokens, m.samples);
            }
        }
        Command::Eval { overrides, grid, no_fit } => {
            let cfg = overrides.resolve()?;
            print!("{}", eval_csv(&cmd_eval(&cfg, &grid, !no_fit)?));
        }
        Command::Verify { seed, budget, quick, sequential, fault, json } => {
            let mut cfg = VerifyConfig::default();
            if quick {
                cfg.laplace_draws = 20_000;
                cfg.prop1_draws = 20_000;
                cfg.eq5_accepted = 10_000;
                cfg.eq5_single_draws = 50_000;
                cfg.chain_samples = 5_000;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = budget {
                cfg.budget = b;
            }
            if sequential {
                cfg.execution = Execution::Sequential;
            }
            cfg.fault = fault.map(|_| Fault::PsiDerivSignFlip);
            let report = run_suite(&cfg);
            print!("{}", report.to_text());
            if let Some(p) = json {
                std::fs::write(&p, report.to_json()).map_err(|source| CliError::Io { path: p, source })?;
            }
            if !report.all_pass() {
                eprintln!("failed: {}", report.failed().join(", "));
                return Ok(ExitCode::from(1));
            }
        }
        Command::Pmf { kind, matrix, csv, n, base, theta, d, sggp_components } => {
            let text = match (matrix, csv) {
                (Some(m), None) => m,
                (None, Some(p)) => {
                    std::fs::read_to_string(&p).map_err(|source| CliError::Io { path: p, source })?
                }
                _ => return Err(CliError::Usage("give --matrix or --csv".into())),
            };
            let m = parse_matrix(&text, n)?;
            let model = ModelConfig {
                base,
                theta,
                d,
                sggp_components,
                ..ModelConfig::default()
            };
            println!("{}", format_log_prob(cmd_pmf(&model, kind, &m, n)?));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
