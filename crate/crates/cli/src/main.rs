//! Command-line harness: `verify`, `eigenmaps`, `dimred`, `train-lm`,
//! `compare-lm`. Configuration layers as defaults < `--config` file < flags;
//! exit codes are 0 success, 1 verification/run failure, 2 usage error,
//! 3 I/O or data-format error.

mod cmds;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmds::{DimredSettings, EigenmapsSettings, TrainSettings, VerifySettings};
use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(lapformer_core::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use lapformer_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Io(_) | E::Format(_) | E::Consistency(_) => 3,
                E::InvalidParameter(_) | E::InvalidInput(_) | E::Shape(_) => 2,
                _ => 1,
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lapformer",
    version,
    about = "Unrolled transformer blocks as graph-Laplacian optimisation, plus a graph-diffusion character LM"
)]
struct Cli {
    /// key=value configuration file, applied after defaults and before flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for all randomness of the command
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for result files
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Default)]
struct TrainFlags {
    /// UTF-8 plain-text corpus file
    #[arg(long)]
    corpus: Option<String>,
    /// standard | diffusion
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    n_layer: Option<usize>,
    #[arg(long)]
    n_head: Option<usize>,
    #[arg(long)]
    n_embd: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    eval_iters: Option<usize>,
    /// constant | cosine
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long)]
    grad_clip: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, s: &mut TrainSettings) -> Result<(), CliError> {
        let pairs: [(&str, Option<String>); 15] = [
            ("corpus", self.corpus.clone()),
            ("mode", self.mode.clone()),
            ("block_size", self.block_size.map(|v| v.to_string())),
            ("n_layer", self.n_layer.map(|v| v.to_string())),
            ("n_head", self.n_head.map(|v| v.to_string())),
            ("n_embd", self.n_embd.map(|v| v.to_string())),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("max_iters", self.max_iters.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("weight_decay", self.weight_decay.map(|v| v.to_string())),
            ("eval_interval", self.eval_interval.map(|v| v.to_string())),
            ("eval_iters", self.eval_iters.map(|v| v.to_string())),
            ("lr_schedule", self.lr_schedule.clone()),
            ("grad_clip", self.grad_clip.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                s.apply(key, &v)?;
            }
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the named property/equivalence suite and report per-check results
    Verify {
        /// linalg | graph | objective | block | all
        #[arg(long)]
        suite: Option<String>,
    },
    /// Closed-form spectral embeddings of a kNN graph built from CSV points
    Eigenmaps {
        /// Numeric CSV, one point per row
        #[arg(long)]
        data: Option<String>,
        /// Neighbour count for the reference graph
        #[arg(long)]
        k: Option<usize>,
        /// Embedding dimension
        #[arg(long)]
        q: Option<usize>,
        /// Ridge weight in the closed-form scaling
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Random-project a dataset and run the unrolled block stack over it
    Dimred {
        /// IDX image file
        #[arg(long)]
        images: Option<String>,
        /// IDX label file
        #[arg(long)]
        labels: Option<String>,
        /// Synthetic dataset name (only "blobs")
        #[arg(long)]
        synthetic: Option<String>,
        /// Synthetic point count
        #[arg(long)]
        n: Option<usize>,
        /// Synthetic feature dimension
        #[arg(long)]
        d: Option<usize>,
        /// Synthetic class count
        #[arg(long)]
        classes: Option<usize>,
        /// Synthetic class-center separation
        #[arg(long)]
        separation: Option<f64>,
        /// Max items to take from IDX input
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        n_blocks: Option<usize>,
        /// standard | diffusion
        #[arg(long)]
        mode: Option<String>,
        /// Dump every intermediate state into the scatter CSV
        #[arg(long)]
        all_steps: bool,
    },
    /// Train the character LM on a corpus
    TrainLm {
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Paired standard-vs-diffusion training runs over a seed list
    CompareLm {
        #[command(flatten)]
        flags: TrainFlags,
        /// Comma-separated seed list, e.g. 1,2,3
        #[arg(long)]
        seeds: Option<String>,
    },
}

fn required_out(out: &Option<PathBuf>, cmd: &str) -> Result<PathBuf, CliError> {
    out.clone()
        .ok_or_else(|| CliError::Usage(format!("{cmd} needs --out <dir>")))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Cmd::Verify { suite } => {
            let mut s = VerifySettings::default();
            if let Some(path) = &cli.config {
                s.load_file(path)?;
            }
            if let Some(v) = suite {
                s.apply("suite", &v)?;
            }
            cmds::run_verify(&s, cli.out.as_deref())
        }
        Cmd::Eigenmaps { data, k, q, beta } => {
            let mut s = EigenmapsSettings::default();
            if let Some(path) = &cli.config {
                s.load_file(path)?;
            }
            for (key, value) in [
                ("data", data),
                ("k", k.map(|v| v.to_string())),
                ("q", q.map(|v| v.to_string())),
                ("beta", beta.map(|v| v.to_string())),
                ("seed", cli.seed.map(|v| v.to_string())),
            ] {
                if let Some(v) = value {
                    s.apply(key, &v)?;
                }
            }
            cmds::run_eigenmaps(&s, &required_out(&cli.out, "eigenmaps")?)
        }
        Cmd::Dimred {
            images,
            labels,
            synthetic,
            n,
            d,
            classes,
            separation,
            limit,
            q,
            kappa,
            eta,
            beta,
            n_blocks,
            mode,
            all_steps,
        } => {
            let mut s = DimredSettings::default();
            if let Some(path) = &cli.config {
                s.load_file(path)?;
            }
            for (key, value) in [
                ("images", images),
                ("labels", labels),
                ("synthetic", synthetic),
                ("n", n.map(|v| v.to_string())),
                ("d", d.map(|v| v.to_string())),
                ("classes", classes.map(|v| v.to_string())),
                ("separation", separation.map(|v| v.to_string())),
                ("limit", limit.map(|v| v.to_string())),
                ("q", q.map(|v| v.to_string())),
                ("kappa", kappa.map(|v| v.to_string())),
                ("eta", eta.map(|v| v.to_string())),
                ("beta", beta.map(|v| v.to_string())),
                ("n_blocks", n_blocks.map(|v| v.to_string())),
                ("mode", mode),
                ("seed", cli.seed.map(|v| v.to_string())),
            ] {
                if let Some(v) = value {
                    s.apply(key, &v)?;
                }
            }
            if all_steps {
                s.apply("all_steps", "true")?;
            }
            cmds::run_dimred(&s, &required_out(&cli.out, "dimred")?)
        }
        Cmd::TrainLm { flags } => {
            let mut s = TrainSettings::default();
            if let Some(path) = &cli.config {
                s.load_file(path)?;
            }
            flags.apply(&mut s)?;
            if let Some(seed) = cli.seed {
                s.apply("seed", &seed.to_string())?;
            }
            cmds::run_train(&s, &required_out(&cli.out, "train-lm")?)
        }
        Cmd::CompareLm { flags, seeds } => {
            let mut s = TrainSettings::default();
            if let Some(path) = &cli.config {
                s.load_file(path)?;
            }
            flags.apply(&mut s)?;
            if let Some(seeds) = seeds {
                s.apply("seeds", &seeds)?;
            }
            if let Some(seed) = cli.seed {
                s.apply("seed", &seed.to_string())?;
            }
            cmds::run_compare(&s, &required_out(&cli.out, "compare-lm")?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
