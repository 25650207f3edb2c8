use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use transductive::BatchMode;
use transductive_harness::config::{self, parse_rule, GpExperimentConfig, SafeBoExperimentConfig, TheoryConfig};
use transductive_harness::embeddings::load_embeddings;
use transductive_harness::retrieve::{self, RetrievalOptions, Selector};
use transductive_harness::{gp_exp, safe_bo, theory_cmd};

#[derive(Parser)]
#[command(name = "tal", version, about = "Transductive active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bace,
    TopB,
}

#[derive(Subcommand)]
enum Command {
    /// Run a GP experiment from a config file.
    GpExp { config: PathBuf },
    /// Run a safe Bayesian optimization experiment from a config file.
    SafeBo { config: PathBuf },
    /// Select batches of candidate embeddings informative about target embeddings.
    Retrieve {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// itl, vtl, ctl, mmitl, unsa or random.
        #[arg(long, default_value = "itl")]
        rule: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        /// Rank by mean cosine similarity instead of a decision rule.
        #[arg(long)]
        cosine: bool,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, value_enum, default_value = "bace")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_points: usize,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Capacity curve and excess-variance check from a config file.
    Theory { config: PathBuf },
}

fn run(cli: Cli) -> transductive_harness::Result<()> {
    match cli.command {
        Command::GpExp { config: path } => {
            let cfg: GpExperimentConfig = config::load(&path)?;
            gp_exp::run_gp_experiment(&cfg)?;
        }
        Command::SafeBo { config: path } => {
            let cfg: SafeBoExperimentConfig = config::load(&path)?;
            let result = safe_bo::run_safebo_experiment(&cfg)?;
            for run in &result.runs {
                println!("{}: {} violations", run.method.name(), run.violations());
            }
        }
        Command::Retrieve {
            candidates,
            targets,
            rule,
            batch,
            rounds,
            cosine,
            noise,
            mode,
            seed,
            max_points,
            output,
        } => {
            let selector = if cosine {
                Selector::Cosine
            } else {
                Selector::Rule(parse_rule("--rule", &rule)?)
            };
            let opts = RetrievalOptions {
                selector,
                batch_size: batch,
                rounds,
                noise_variance: noise,
                mode: match mode {
                    Mode::Bace => BatchMode::Bace,
                    Mode::TopB => BatchMode::TopB,
                },
                seed,
                max_points,
            };
            let c = load_embeddings(&candidates)?;
            let t = load_embeddings(&targets)?;
            let picks = retrieve::retrieve(&c, &t, &opts)?;
            let table = retrieve::selection_table(selector, &picks);
            match output {
                Some(path) => table.write(&path)?,
                None => print!("{}", table.as_str()),
            }
        }
        Command::Theory { config: path } => {
            let cfg: TheoryConfig = config::load(&path)?;
            let result = theory_cmd::run_theory(&cfg)?;
            for run in &result.bounds {
                let r = &run.report;
                println!(
                    "{} seed {}: final relative excess {:.4}, {}",
                    run.rule.name(),
                    run.seed,
                    r.final_relative_excess,
                    if r.passed() { "within bound" } else { "bound check failed" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
