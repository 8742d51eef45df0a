use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nli_lab::corpus::Task;
use nli_lab::training::PipelineMode;
use nli_lab_cli::commands::{self, parse_source_arg, write_atomic};
use nli_lab_cli::{CliError, Profile, RunConfig};

/// Desk-scale transformer lab for Arabic NLI and contradiction detection.
#[derive(Debug, Parser)]
#[command(name = "nli-lab", version)]
struct Cli {
    /// TOML run configuration layered over the profile defaults.
    #[arg(long, global = true, env = "NLI_LAB_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides paths.out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Extra `section.key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest, normalize, merge, shuffle and split the NLI sources.
    BuildCorpus {
        /// `FORMAT=PATH` with FORMAT one of xnli, snli_ar, arnli; defaults to the config's sources.
        #[arg(long = "source")]
        sources: Vec<String>,
        /// Output directory; defaults to paths.corpus_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Learn the subword vocabulary from the training split.
    TrainTokenizer,
    /// Run the baseline or multitask pipeline and score the test split.
    Train {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value = "baseline")]
        mode: PipelineMode,
    },
    /// Random search over learning rate, weight decay and batch size.
    Hpo {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value = "baseline")]
        mode: PipelineMode,
        /// Defaults to hpo.n_trials.
        #[arg(long)]
        n_trials: Option<usize>,
    },
    /// Score a checkpoint on a corpus split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value = "test")]
        split: String,
        /// Mark the result row as multitask fine-tuned.
        #[arg(long)]
        multitask: bool,
        /// Where to write the result record.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render result files as per-task tables.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.profile, cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::BuildCorpus { sources, output } => {
            let specs = if sources.is_empty() {
                cfg.sources.clone()
            } else {
                sources.iter().map(|s| parse_source_arg(s)).collect::<Result<_, _>>()?
            };
            let out = output.unwrap_or_else(|| cfg.corpus_dir());
            let summary = commands::build_corpus(&cfg, &specs, &out)?;
            for s in &summary.sources {
                println!(
                    "{} {}: {} rows, {} kept, {} dropped, {} filtered",
                    s.format, s.path, s.rows, s.kept, s.dropped, s.filtered
                );
            }
            let c = &summary.manifest.counts;
            println!("train {} / validation {} / test {} -> {}", c.train, c.validation, c.test, out.display());
            print!("{}", commands::pretty(&summary.stats));
        }
        Command::TrainTokenizer => {
            let vocab = commands::train_tokenizer(&cfg)?;
            println!("{} entries -> {}", vocab.len(), cfg.vocab_path().display());
        }
        Command::Train { task, mode } => {
            let s = commands::train(&cfg, task, mode)?;
            println!(
                "{} {mode}: {} phases, test accuracy {:.4}, macro-F1 {:.4} -> {}",
                task.as_str(),
                s.phases,
                s.result.accuracy,
                s.result.macro_f1,
                s.dir.display()
            );
        }
        Command::Hpo { task, mode, n_trials } => {
            let s = commands::hpo(&cfg, task, mode, n_trials.unwrap_or(cfg.hpo.n_trials))?;
            let b = &s.result.best;
            println!(
                "best trial {} of {}: metric {:.4}, lr {:e}, wd {:.4}, batch {} -> {}",
                b.id,
                s.result.trials.len(),
                b.metric.unwrap_or(f64::NAN),
                b.point.learning_rate,
                b.point.weight_decay,
                b.point.batch_size,
                s.dir.join("best_config.toml").display()
            );
        }
        Command::Evaluate {
            checkpoint,
            task,
            split,
            multitask,
            output,
        } => {
            let s = commands::evaluate_checkpoint(&cfg, &checkpoint, task, &split, multitask)?;
            let text = commands::pretty(&s);
            print!("{text}");
            if let Some(out) = output {
                write_atomic(&out, commands::pretty(&s.record).as_bytes())?;
            }
        }
        Command::Report { files, output } => {
            let text = commands::report(&files)?;
            print!("{text}");
            if let Some(out) = output {
                write_atomic(&out, text.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let msg = msg.trim_start_matches("error: ").trim_end();
            eprintln!("{}", CliError::Usage(msg.to_string()).diagnostic());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::FAILURE
        }
    }
}
