use clap::{Args, Parser, Subcommand};
use nplb::cohort::Sex;
use nplb::eval::BenchmarkSpec;
use nplb::losses::{LossKind, Margin};
use nplb::pipeline::{self, RunSummary};
use nplb::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nplb",
    version,
    about = "Triplet embeddings and single-visit health risk on tabular cohorts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with the command's configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic cohort.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Counts for bona fide healthy, apparently healthy and unhealthy records.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        future_fraction: Option<f64>,
        #[arg(long)]
        severity_coupling: Option<f64>,
        #[arg(long)]
        bounds: Option<PathBuf>,
    },
    /// Drop incomplete features and records, normalize per sex.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Append synthetic bona fide healthy records.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        bounds: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Train an embedding network on a cohort.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        bounds: Option<PathBuf>,
        #[arg(long)]
        sex: Option<Sex>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write embeddings of the real records of a cohort.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Risk distribution and follow-up conversion rates per backend.
    Risk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated: raw, mahalanobis, p0, embedding.
        #[arg(long = "backend", value_delimiter = ',')]
        backends: Option<Vec<String>>,
        /// Let every threshold interval start at distance 0.
        #[arg(long)]
        clamp_lower_bound: bool,
    },
    /// Compare loss functions on synthetic blobs over several seeds.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Comma-separated loss names (traditional, swap, nplb, nplb<p>).
        #[arg(long, value_delimiter = ',')]
        losses: Option<Vec<String>>,
        /// Number of seeds, starting at --seed.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Correlation of health scores with time to diagnosis.
    Pseudotime {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "backend", value_delimiter = ',')]
        backends: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    loss: Option<String>,
    /// Exponent of the NPLB regularizer (even, >= 2).
    #[arg(long)]
    p: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    n_triplets: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    output_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    dropout: Option<f64>,
}

impl TrainFlags {
    fn loss(&self, current: LossKind) -> Result<LossKind, Error> {
        let base = match &self.loss {
            Some(s) => s.parse()?,
            None => current,
        };
        match (base, self.p) {
            (_, None) => Ok(base),
            (LossKind::Nplb { .. }, Some(p)) => LossKind::nplb(p),
            (other, Some(_)) => Err(Error::Config(format!(
                "--p only applies to the nplb loss, not `{other}`"
            ))),
        }
    }

    fn apply(&self, c: &mut nplb::trainer::TrainConfig) -> Result<(), Error> {
        c.loss = self.loss(c.loss)?;
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.decay_every {
            c.decay_every = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.n_triplets {
            c.n_triplets = v;
        }
        if let Some(v) = self.margin {
            c.margin = Margin::new(v)?;
        }
        if let Some(v) = self.output_dim {
            c.output_dim = v;
        }
        if let Some(v) = &self.hidden {
            c.hidden = v.clone();
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        c.validate()
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(command: Command) -> Result<RunSummary, Error> {
    match command {
        Command::Generate {
            common,
            sizes,
            future_fraction,
            severity_coupling,
            bounds,
        } => {
            let mut c: pipeline::GenerateConfig = pipeline::load_config(common.config.as_deref())?;
            set(&mut c.seed, common.seed);
            if let Some(s) = sizes {
                c.sizes = s
                    .try_into()
                    .map_err(|_| Error::Config("--sizes takes exactly three counts".into()))?;
            }
            set(&mut c.future_fraction, future_fraction);
            set(&mut c.severity_coupling, severity_coupling);
            if bounds.is_some() {
                c.bounds = bounds;
            }
            pipeline::cmd_generate(&c, &common.out)
        }
        Command::Preprocess { common, cohort } => {
            let mut c: pipeline::PreprocessConfig = pipeline::load_config(common.config.as_deref())?;
            set(&mut c.cohort, cohort);
            pipeline::cmd_preprocess(&c, &common.out)
        }
        Command::Augment {
            common,
            cohort,
            bounds,
            fold,
        } => {
            let mut c: pipeline::AugmentConfig = pipeline::load_config(common.config.as_deref())?;
            set(&mut c.seed, common.seed);
            set(&mut c.cohort, cohort);
            set(&mut c.fold, fold);
            if bounds.is_some() {
                c.bounds = bounds;
            }
            pipeline::cmd_augment(&c, &common.out)
        }
        Command::Train {
            common,
            cohort,
            bounds,
            sex,
            train_fraction,
            fold,
            train,
        } => {
            let mut c: pipeline::TrainRunConfig = pipeline::load_config(common.config.as_deref())?;
            set(&mut c.train.seed, common.seed);
            set(&mut c.cohort, cohort);
            set(&mut c.sex, sex);
            set(&mut c.train_fraction, train_fraction);
            set(&mut c.augment_fold, fold);
            if bounds.is_some() {
                c.bounds = bounds;
            }
            train.apply(&mut c.train)?;
            pipeline::cmd_train(&c, &common.out)
        }
        Command::Embed {
            common,
            cohort,
            checkpoint,
        } => {
            let mut c: pipeline::EmbedConfig = pipeline::load_config(common.config.as_deref())?;
            set(&mut c.cohort, cohort);
            set(&mut c.checkpoint, checkpoint);
            pipeline::cmd_embed(&c, &common.out)
        }
        Command::Risk {
            common,
            cohort,
            checkpoint,
            backends,
            clamp_lower_bound,
        } => {
            let mut c: pipeline::RiskConfig = pipeline::load_config(common.config.as_deref())?;
            set(&mut c.cohort, cohort);
            set(&mut c.backends, backends);
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            c.clamp_lower_bound |= clamp_lower_bound;
            pipeline::cmd_risk(&c, &common.out)
        }
        Command::Pseudotime {
            common,
            cohort,
            checkpoint,
            backends,
        } => {
            let mut c: pipeline::PseudotimeConfig = pipeline::load_config(common.config.as_deref())?;
            set(&mut c.cohort, cohort);
            set(&mut c.backends, backends);
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            pipeline::cmd_pseudotime(&c, &common.out)
        }
        Command::Benchmark {
            common,
            losses,
            seeds,
            k,
            per_class,
            separation,
            train_fraction,
            train,
        } => {
            let mut spec: BenchmarkSpec = pipeline::load_config(common.config.as_deref())?;
            if let Some(l) = losses {
                spec.losses = l.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
            }
            if seeds.is_some() || common.seed.is_some() {
                let start = common.seed.unwrap_or(0);
                let n = seeds.unwrap_or(spec.seeds.len()) as u64;
                spec.seeds = (start..start + n).collect();
            }
            set(&mut spec.k, k);
            set(&mut spec.blobs.per_class, per_class);
            set(&mut spec.blobs.separation, separation);
            set(&mut spec.train_fraction, train_fraction);
            train.apply(&mut spec.train)?;
            pipeline::cmd_benchmark(&spec, &common.out)
        }
    }
}

fn report(summary: &RunSummary) {
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    for p in &summary.outputs {
        println!("{}", p.display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            report(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
