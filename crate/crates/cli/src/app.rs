//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use sonotrans_core::{Error, Result};

use crate::commands::{self, exit_code};
use crate::config::{RunConfig, RUN_CONFIG_FILE};
use crate::suite::SuiteOptions;

#[derive(Parser, Debug)]
#[command(
    name = "sonotrans",
    version,
    about = "Spectrogram-to-spectrogram spoken language translation",
    long_about = "Spectrogram-to-spectrogram spoken language translation.\n\n\
        Exit status: 0 success, 2 configuration error, 3 data or format error, 4 numeric failure."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags accepted by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Shared {
    /// Configuration file of `key = value` lines; flags override it
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed override: corpus.seed for gen-corpus, train.seed for train and
    /// ablate, the random initial phase for translate, the first seed for
    /// gradcheck; eval has no randomness and ignores it
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; only corpus rendering and ablation rows run in parallel
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Overwrite outputs in a non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// Byte-reproducible outputs; wall-clock columns are written as 0
    #[arg(long, value_name = "BOOL", default_value_t = true, action = ArgAction::Set)]
    pub deterministic: bool,
    /// Override one configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a parallel corpus: WAV files plus manifest.tsv
    GenCorpus {
        #[command(flatten)]
        shared: Shared,
        /// Words per language (corpus.vocab_size)
        #[arg(long, value_name = "N")]
        vocab_size: Option<usize>,
    },
    /// Train a model; writes checkpoints, metrics.csv, summary.tsv and run.cfg
    Train {
        #[command(flatten)]
        shared: Shared,
        /// Corpus manifest, or the directory that holds manifest.tsv
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Total optimizer steps (train.max_steps)
        #[arg(long, value_name = "N")]
        max_steps: Option<u64>,
        /// Continue from the latest checkpoint in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Translate a WAV file (16 kHz mono 16-bit PCM) with a trained model
    Translate {
        #[command(flatten)]
        shared: Shared,
        /// Checkpoint file; its run.cfg is used unless --config is given
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Source-language WAV
        input: PathBuf,
        /// Destination WAV
        output: PathBuf,
        /// Griffin-Lim iterations
        #[arg(long, value_name = "N", default_value_t = 100)]
        gl_iters: usize,
        /// Also write input and output spectrogram PNGs (to --out, or beside OUTPUT)
        #[arg(long)]
        emit_spectrograms: bool,
    },
    /// Reconstruction error, unseen-speaker ratio and embedding purity of a checkpoint
    Eval {
        #[command(flatten)]
        shared: Shared,
        /// Checkpoint file; its run.cfg is used unless --config is given
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Corpus manifest, or the directory that holds manifest.tsv
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Speakers to evaluate as unseen (comma separated); they must have
        /// been held out in training
        #[arg(long, value_name = "IDS", value_delimiter = ',')]
        held_out: Vec<usize>,
        /// Number of input/prediction/truth PNG triptychs to export
        #[arg(long, value_name = "N", default_value_t = 4)]
        triptychs: usize,
    },
    /// Train the base model and each one-component variant; writes ablation.csv and loss curves
    Ablate {
        #[command(flatten)]
        shared: Shared,
        /// Corpus manifest, or the directory that holds manifest.tsv
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Row file of `Name key=value` lines; the built-in rows when omitted
        #[arg(long, value_name = "PATH")]
        specs: Option<PathBuf>,
        /// Optimizer steps per row (train.max_steps)
        #[arg(long, value_name = "N")]
        max_steps: Option<u64>,
    },
    /// Finite-difference gradient suite in 64-bit precision
    Gradcheck {
        #[command(flatten)]
        shared: Shared,
        /// Number of seeds per operation
        #[arg(long, value_name = "N", default_value_t = 5)]
        seeds: usize,
        /// Corrupt the analytic gradient of this op (tests the failure path)
        #[arg(long, value_name = "OP")]
        inject_fault: Option<String>,
    },
}

fn build_config(base: Option<&Path>, shared: &Shared) -> Result<RunConfig> {
    let mut cfg = match (&shared.config, base) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) => RunConfig::load(p)?,
        (None, None) => RunConfig::default(),
    };
    for pair in &shared.set {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

fn required_out(shared: &Shared) -> Result<PathBuf> {
    shared
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out DIR is required".into()))
}

fn checkpoint_config(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(RUN_CONFIG_FILE)
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenCorpus { shared, vocab_size } => {
            let mut config = build_config(None, &shared)?;
            if let Some(v) = vocab_size {
                config.set("corpus.vocab_size", &v.to_string())?;
            }
            if let Some(s) = shared.seed {
                config.set("corpus.seed", &s.to_string())?;
            }
            let args = commands::GenCorpusArgs {
                config,
                out: required_out(&shared)?,
                jobs: shared.jobs,
                force: shared.force,
            };
            commands::gen_corpus(&args, out).map(|_| ())
        }
        Command::Train {
            shared,
            manifest,
            max_steps,
            resume,
        } => {
            let dir = required_out(&shared)?;
            let previous = dir.join(RUN_CONFIG_FILE);
            let base = (resume && previous.exists()).then_some(previous.as_path());
            let mut config = build_config(base, &shared)?;
            if let Some(n) = max_steps {
                config.set("train.max_steps", &n.to_string())?;
            }
            if let Some(s) = shared.seed {
                config.set("train.seed", &s.to_string())?;
            }
            let args = commands::TrainArgs {
                config,
                manifest: commands::manifest_path(&manifest),
                out: dir,
                resume,
                force: shared.force,
                deterministic: shared.deterministic,
            };
            commands::train(&args, out)
        }
        Command::Translate {
            shared,
            checkpoint,
            input,
            output,
            gl_iters,
            emit_spectrograms,
        } => {
            let config = build_config(Some(&checkpoint_config(&checkpoint)), &shared)?;
            let args = commands::TranslateArgs {
                checkpoint,
                config: Some(config),
                input,
                output,
                gl_iters,
                seed: shared.seed,
                emit_spectrograms,
                out: shared.out.clone(),
            };
            commands::translate(&args, out).map(|_| ())
        }
        Command::Eval {
            shared,
            checkpoint,
            manifest,
            held_out,
            triptychs,
        } => {
            let config = build_config(Some(&checkpoint_config(&checkpoint)), &shared)?;
            let args = commands::EvalArgs {
                checkpoint,
                config: Some(config),
                manifest: commands::manifest_path(&manifest),
                out: required_out(&shared)?,
                held_out,
                triptychs,
                force: shared.force,
            };
            commands::eval(&args, out)
        }
        Command::Ablate {
            shared,
            manifest,
            specs,
            max_steps,
        } => {
            let mut config = build_config(None, &shared)?;
            if let Some(n) = max_steps {
                config.set("train.max_steps", &n.to_string())?;
            }
            if let Some(s) = shared.seed {
                config.set("train.seed", &s.to_string())?;
            }
            let args = commands::AblateArgs {
                config,
                manifest: commands::manifest_path(&manifest),
                specs,
                out: required_out(&shared)?,
                jobs: shared.jobs,
                force: shared.force,
                deterministic: shared.deterministic,
            };
            commands::ablate(&args, out)
        }
        Command::Gradcheck {
            shared,
            seeds,
            inject_fault,
        } => {
            let args = commands::GradcheckArgs {
                suite: SuiteOptions {
                    seeds,
                    base_seed: shared.seed.unwrap_or(0),
                    fault: inject_fault,
                },
                out: shared.out.clone(),
            };
            commands::gradcheck(&args, out)
        }
    }
}

/// Parses `argv`, runs the subcommand and returns the exit status. Results
/// go to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
