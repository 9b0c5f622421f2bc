use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gasc::cli::{self, CliError, RunConfig, SimulateShape};
use gasc::eval::EvalOptions;
use gasc::model::{Preset, Variant};

#[derive(Parser)]
#[command(
    name = "gasc",
    version,
    about = "Genre-aware dynamic Bayesian modelling of word senses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Override the number of senses from the config file.
    #[arg(long)]
    k: Option<usize>,
    /// Override the RNG seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the hyperparameter preset (1, 2, or 3).
    #[arg(long)]
    preset: Option<u32>,
}

impl Overrides {
    fn apply(&self, rc: &mut RunConfig) -> Result<(), CliError> {
        if let Some(n) = self.preset {
            let preset = Preset::from_number(n)
                .ok_or_else(|| CliError::Input("preset must be 1, 2, or 3".to_string()))?;
            rc.model.apply_preset(preset);
        }
        if let Some(k) = self.k {
            rc.model.n_senses = k;
        }
        if let Some(seed) = self.seed {
            rc.model.seed = seed;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write checkpoint, trace, and manifest.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// gasc, scan, or gasc-independent.
        #[arg(long, default_value = "gasc")]
        variant: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Held-out log-likelihood sweep over sense counts.
    SweepK {
        #[arg(long)]
        config: PathBuf,
        /// One corpus per target word (repeatable).
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Comma-separated sense counts, e.g. 5,10,15,20.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Repeated splits for a single-corpus sweep.
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a synthetic corpus with its ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of time slices.
        #[arg(long, default_value_t = 5)]
        t: usize,
        /// Number of genres.
        #[arg(long, default_value_t = 2)]
        g: usize,
        /// Vocabulary size.
        #[arg(long, default_value_t = 50)]
        v: usize,
        #[arg(long, default_value_t = 200)]
        per_cell: usize,
        #[arg(long, default_value_t = 10)]
        snippet_len: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint against expert annotations.
    EvalTruth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Words per sense used for matching and scoring.
        #[arg(long, default_value_t = 20)]
        top_n: usize,
        /// Also report the unweighted raw-count precision variant.
        #[arg(long)]
        raw_count_precision: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sense-genre Spearman correlation table from annotations.
    Correlate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Fit {
            config,
            corpus,
            variant,
            out,
            overrides,
        } => {
            let mut rc = cli::parse_config(&config)?;
            overrides.apply(&mut rc)?;
            let variant = Variant::parse(&variant).ok_or_else(|| {
                CliError::Input(format!(
                    "unknown variant `{variant}` (expected gasc, scan, or gasc-independent)"
                ))
            })?;
            cli::cmd_fit(&rc, &corpus, variant, &out)
        }
        Command::SweepK {
            config,
            corpus,
            k,
            folds,
            seed,
            out,
        } => {
            let mut rc = cli::parse_config(&config)?;
            if let Some(seed) = seed {
                rc.model.seed = seed;
            }
            cli::cmd_sweep_k(&rc, &corpus, &k, folds, &out)
        }
        Command::Simulate {
            config,
            t,
            g,
            v,
            per_cell,
            snippet_len,
            out,
            overrides,
        } => {
            let mut rc = match config {
                Some(path) => cli::parse_config(&path)?,
                None => RunConfig::default(),
            };
            overrides.apply(&mut rc)?;
            let shape = SimulateShape {
                n_times: t,
                n_genres: g,
                vocab_size: v,
                snippets_per_cell: per_cell,
                snippet_len,
            };
            cli::cmd_simulate(&rc, shape, &out)
        }
        Command::EvalTruth {
            checkpoint,
            annotations,
            stopwords,
            top_n,
            raw_count_precision,
            out,
        } => {
            let opts = EvalOptions {
                top_n,
                raw_count_precision,
            };
            cli::cmd_eval_truth(&checkpoint, &annotations, stopwords.as_deref(), &opts, &out)
        }
        Command::Correlate {
            config,
            annotations,
            out,
        } => {
            let rc = match config {
                Some(path) => Some(cli::parse_config(&path)?),
                None => None,
            };
            cli::cmd_correlate(rc.as_ref(), &annotations, &out)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
