use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};

use scgrpo::dataset::{self, DatasetSample};
use scgrpo::eval;
use scgrpo::grpo::{write_curve_csv, TrainConfig};
use scgrpo::service::{self, ServiceConfig, DEFAULT_MAX_BATCH, DEFAULT_MAX_BODY_BYTES};
use scgrpo::sft::policy_from_model;
use scgrpo::task::{self, Task};
use scgrpo::{Gating, GridSpec, RewardEngine, RewardMode, TypeTaxonomy};

#[derive(Debug, Parser)]
#[command(name = "scgrpo", version, about = "Structured reward scoring and group-relative policy optimization")]
struct Cli {
    #[command(flatten)]
    engine: EngineArgs,

    #[command(subcommand)]
    command: Command,
}

/// Scoring configuration shared by every subcommand. Flags take precedence
/// over environment variables, which take precedence over defaults.
#[derive(Debug, Args)]
struct EngineArgs {
    /// Grid size k for location matching (k x k cells).
    #[arg(long, global = true, env = "SCGRPO_GRID", default_value_t = 3)]
    grid: u32,

    /// Taxonomy file; the built-in taxonomy is used when omitted.
    #[arg(long, global = true, env = "SCGRPO_TAXONOMY")]
    taxonomy: Option<PathBuf>,

    /// `full` or `accuracy-only`.
    #[arg(long, global = true, env = "SCGRPO_MODE", default_value = "full")]
    mode: RewardMode,

    /// `indicator` or `indicator-and-correct`.
    #[arg(long, global = true, env = "SCGRPO_GATING", default_value = "indicator")]
    gating: Gating,
}

impl EngineArgs {
    fn engine(&self) -> anyhow::Result<RewardEngine> {
        let taxonomy = match &self.taxonomy {
            Some(path) => TypeTaxonomy::from_file(path)?,
            None => TypeTaxonomy::default(),
        };
        Ok(RewardEngine::new(GridSpec::new(self.grid)?, taxonomy, self.mode, self.gating))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every dataset sample; exits nonzero if any violation is found.
    Validate { input: PathBuf },
    /// Partition a dataset into the supervised and reinforcement stages.
    Split {
        input: PathBuf,
        /// Share of samples for the supervised stage; may be omitted when
        /// every sample carries a stage hint.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        pa_sft_out: PathBuf,
        #[arg(long)]
        sc_grpo_out: PathBuf,
    },
    /// Stratified random subset of a dataset.
    Subsample {
        input: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Counts by label, type, category, grid cell and stage.
    Stats {
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Balanced accuracy per dataset from a predictions file.
    Evaluate {
        predictions: PathBuf,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score a file offline, one result line per input line.
    ScoreFile { input: PathBuf, output: PathBuf },
    /// Run the HTTP scoring service.
    Serve {
        #[arg(long, env = "SCGRPO_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "SCGRPO_MAX_BATCH", default_value_t = DEFAULT_MAX_BATCH)]
        max_batch: usize,
        #[arg(long, env = "SCGRPO_MAX_BODY_BYTES", default_value_t = DEFAULT_MAX_BODY_BYTES)]
        max_body_bytes: usize,
    },
    /// Train the tabular policy on a task file.
    Train {
        #[command(flatten)]
        train: TrainArgs,
        /// Write the training curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Supervised epochs before reinforcement; 0 starts from a uniform policy.
        #[arg(long, default_value_t = 0)]
        sft_epochs: usize,
        #[arg(long, default_value_t = 10.0)]
        sft_lr: f64,
    },
    /// Supervised stage on a generated dataset.
    Sft {
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 10.0)]
        lr: f64,
    },
    /// Train once per grid size and print a reward-vs-k table.
    GridAblation {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        ks: Vec<u32>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Task file; the shipped synthetic task is used when omitted.
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    #[arg(long, default_value_t = 0.04)]
    kl_coeff: f64,
    #[arg(long, default_value_t = 0.2)]
    clip: f64,
    #[arg(long, default_value_t = 4.0)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            group_size: self.group_size,
            kl_coeff: self.kl_coeff,
            clip: self.clip,
            learning_rate: self.lr,
            epochs: self.iterations,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    fn task(&self, default: fn() -> Task) -> anyhow::Result<Task> {
        match &self.task {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                Task::parse(&text).with_context(|| path.display().to_string())
            }
            None => Ok(default()),
        }
    }
}

fn read_dataset(path: &Path) -> anyhow::Result<Vec<DatasetSample>> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    dataset::read_samples(BufReader::new(file)).with_context(|| path.display().to_string())
}

fn write_dataset(path: &Path, samples: &[DatasetSample], idx: &[usize]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut out = BufWriter::new(file);
    dataset::write_samples(idx.iter().map(|&i| &samples[i]), &mut out)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let engine = cli.engine.engine()?;
    match cli.command {
        Command::Validate { input } => {
            let samples = read_dataset(&input)?;
            let results = dataset::validate_all(&samples, &engine);
            let mut bad = 0;
            for (i, violations) in results.iter().enumerate() {
                if !violations.is_empty() {
                    bad += 1;
                }
                for v in violations {
                    println!("sample {}: {v}", i + 1);
                }
            }
            println!("{} samples, {bad} with violations", samples.len());
            return Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Split { input, ratio, seed, pa_sft_out, sc_grpo_out } => {
            let samples = read_dataset(&input)?;
            let split = dataset::split_stages(&samples, ratio, seed)?;
            write_dataset(&pa_sft_out, &samples, &split.pa_sft)?;
            write_dataset(&sc_grpo_out, &samples, &split.sc_grpo)?;
            println!("pa_sft={} sc_grpo={}", split.pa_sft.len(), split.sc_grpo.len());
        }
        Command::Subsample { input, fraction, seed, out } => {
            let samples = read_dataset(&input)?;
            let idx = dataset::subsample(&samples, fraction, seed)?;
            write_dataset(&out, &samples, &idx)?;
            println!("kept {} of {}", idx.len(), samples.len());
        }
        Command::Stats { input, json } => {
            let samples = read_dataset(&input)?;
            let st = dataset::stats(&samples, &engine);
            if json {
                println!("{}", serde_json::to_string_pretty(&st)?);
            } else {
                print!("{}", st.to_table());
            }
        }
        Command::Evaluate { predictions, csv } => {
            let report = eval::evaluate_file(&predictions)?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
        Command::ScoreFile { input, output } => {
            let summary = service::score_file(&input, &output, &engine)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Serve { bind, max_batch, max_body_bytes } => {
            if max_batch == 0 {
                bail!("--max-batch must be at least 1");
            }
            let config = ServiceConfig { engine, max_batch, max_body_bytes };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(bind, config))?;
        }
        Command::Train { train, curve, sft_epochs, sft_lr } => {
            let task = train.task(Task::synthetic)?;
            let config = train.config();
            let dataset = task.dataset(&engine)?;
            let policy = if sft_epochs > 0 {
                let (model, report) =
                    task::pa_sft_with_vocab(&task.sft_targets(&engine)?, &task.action_table(), sft_epochs, sft_lr)?;
                println!(
                    "sft: nll {:.4} -> {:.4}, consistency {:.3}",
                    report.initial_nll, report.final_nll, report.consistency
                );
                policy_from_model(&model, task.action_table())?
            } else {
                scgrpo::policy::ToyPolicy::uniform(task.action_table())?
            };
            let outcome = task::train_from(&engine, &dataset, &policy, &config)?;
            if let Some(path) = curve {
                let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
                write_curve_csv(&outcome.curve, BufWriter::new(file))?;
            }
            let initial = outcome.curve.first().map_or(f64::NAN, |c| c.mean_reward);
            println!(
                "initial={initial:.4} final={:.4} max={:.4} ratio={:.4}",
                outcome.final_mean_reward,
                outcome.max_mean_reward,
                outcome.final_mean_reward / outcome.max_mean_reward
            );
        }
        Command::Sft { samples, seed, epochs, lr } => {
            let data = task::generated_sft_dataset(samples, seed, &engine);
            let (_, report) = task::pa_sft(&data, epochs, lr)?;
            println!(
                "samples={} nll {:.4} -> {:.4} ({:.1}% reduction), consistency {:.3}",
                report.samples,
                report.initial_nll,
                report.final_nll,
                report.nll_reduction() * 100.0,
                report.consistency
            );
        }
        Command::GridAblation { train, ks, csv } => {
            let task = train.task(Task::ablation)?;
            let rows = task::grid_ablation(&task, &engine, &ks, &train.config())?;
            print!("{}", task::grid_ablation_table(&rows));
            if let Some(path) = csv {
                std::fs::write(&path, task::grid_ablation_csv(&rows))
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
