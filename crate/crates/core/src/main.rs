use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dyqn::baselines::expand_dataset;
use dyqn::harness::{run_compare, run_eval, run_kfold, run_train, AgentKind, RunConfig};
use dyqn::synthetic::generate;
use dyqn::types::Dataset;

#[derive(Parser)]
#[command(
    name = "dyqn",
    about = "Train and evaluate when-to-stop-asking triage agents on vignette datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; omitted sections use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override for the whole run.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, dyqn::Error> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.generator.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset (plus its ground-truth sidecar).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory for dataset.json and truth.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand a dataset into its capped powerset variant.
    ExpandPow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Output path for the expanded dataset JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent and write metrics, summary, and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "dyqn-or")]
        agent: AgentKind,
    },
    /// Evaluate a checkpoint and/or supervised model on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Q-network checkpoint (JSON).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Supervised model file; alone it evaluates the fully-observed
        /// baseline, with a checkpoint it restores a partially-observed agent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated K-fold cross-validation of one agent.
    Kfold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "dyqn-or")]
        agent: AgentKind,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Run every agent on the same split and emit the comparison table.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), dyqn::Error> {
    match cli.command {
        Command::GenData { common, out } => {
            let config = common.load()?;
            let (dataset, truth) = generate(&config.generator)?;
            std::fs::create_dir_all(&out)?;
            dataset.save_json(&out.join("dataset.json"))?;
            truth.save_json(&out.join("truth.json"))?;
            config.save(&out.join("resolved_config.toml"))?;
            println!(
                "wrote {} vignettes over {} evidences to {}",
                dataset.len(),
                dataset.evidence_space(),
                out.display()
            );
        }
        Command::ExpandPow {
            common,
            dataset,
            out,
        } => {
            let config = common.load()?;
            let input = Dataset::load_json(&dataset)?;
            input.validate()?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
            let expanded = expand_dataset(&input, config.pow_cap_exponent, &mut rng);
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            expanded.save_json(&out)?;
            println!(
                "expanded {} vignettes into {} ({})",
                input.len(),
                expanded.len(),
                out.display()
            );
        }
        Command::Train {
            common,
            dataset,
            out,
            agent,
        } => {
            let config = common.load()?;
            let data = Dataset::load_json(&dataset)?;
            let summary = run_train(&config, &data, agent, &out)?;
            println!(
                "{}: test appropriateness {:.3}, safety {:.3}, questions {}",
                summary.agent,
                summary.test.appropriateness,
                summary.test.safety,
                summary
                    .test
                    .avg_questions
                    .map_or("full".into(), |q| format!("{q:.2}")),
            );
        }
        Command::Eval {
            common,
            dataset,
            checkpoint,
            model,
            out,
        } => {
            let config = common.load()?;
            let data = Dataset::load_json(&dataset)?;
            let report = run_eval(
                &config,
                &data,
                checkpoint.as_deref(),
                model.as_deref(),
                out.as_deref(),
            )?;
            println!(
                "appropriateness {:.3}, safety {:.3}, avg questions {:.2} over {} vignettes",
                report.appropriateness, report.safety, report.avg_questions, report.n
            );
        }
        Command::Kfold {
            common,
            dataset,
            out,
            agent,
            k,
            repeats,
        } => {
            let config = common.load()?;
            let data = Dataset::load_json(&dataset)?;
            let summary = run_kfold(&config, &data, agent, k, repeats, &out)?;
            println!(
                "{} {}x{}-fold: appropriateness {:.3} (min {:.3}, max {:.3}, ci95 {:.3}, n {})",
                summary.agent,
                summary.repeats,
                summary.k,
                summary.appropriateness.mean,
                summary.appropriateness.min,
                summary.appropriateness.max,
                summary.appropriateness.ci95,
                summary.appropriateness.n
            );
        }
        Command::Compare {
            common,
            dataset,
            out,
        } => {
            let config = common.load()?;
            let data = Dataset::load_json(&dataset)?;
            let rows = run_compare(&config, &data, &out)?;
            println!("agent                appropriateness  safety   avg questions");
            for row in rows {
                println!(
                    "{:<20} {:<16.3} {:<8.3} {}",
                    row.agent,
                    row.appropriateness,
                    row.safety,
                    row.avg_questions
                        .map_or("full".into(), |q| format!("{q:.2}")),
                );
            }
        }
    }
    Ok(())
}

use rand::SeedableRng;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
