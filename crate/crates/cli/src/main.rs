use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hairmatte_cli::recolor::parse_color;
use hairmatte_cli::{run, CliError, CommandKind, RunConfig, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "hairmatte", version, about = "Hair segmentation and matting on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// TOML run configuration; its keys override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model spec file (key=value lines as stored in checkpoints).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// hairsegnet or hairmattenet.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    width: Option<f64>,
    #[arg(long, global = true)]
    input_size: Option<usize>,
    #[arg(long, global = true)]
    classes: Option<usize>,
    #[arg(long, global = true)]
    decoder_depth: Option<usize>,
    #[arg(long, global = true)]
    no_batchnorm: bool,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    /// Weight of the gradient-consistency loss.
    #[arg(long, global = true)]
    w_gradcons: Option<f64>,
    #[arg(long, global = true)]
    l2: Option<f64>,
    /// Apply the guided filter to predicted mattes.
    #[arg(long, global = true)]
    refine: bool,
    /// Guided filter radius.
    #[arg(long, global = true)]
    radius: Option<usize>,
    /// Guided filter regularization.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Guided filter guide: gray or rgb.
    #[arg(long, global = true)]
    guide: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Canvas side (defaults to the model input size).
        #[arg(long)]
        size: Option<usize>,
        /// Coarse-label noise radius.
        #[arg(long)]
        coarse: Option<usize>,
    },
    /// Train a model and write checkpoint, history and summary.
    Train {
        /// Add mirrored copies of the training images.
        #[arg(long)]
        flip: bool,
    },
    /// Write hair mattes for input images.
    Infer { inputs: Vec<PathBuf> },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        split: Option<String>,
    },
    /// Guided-filter a matte with its image.
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
    },
    /// Recolour hair under a matte.
    Recolor {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// r,g,b in [0, 1] or #rrggbb.
        #[arg(long)]
        color: String,
    },
    /// Time forward passes and report MAC counts.
    Bench {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
}

fn resolve(cli: Cli) -> Result<RunConfig, CliError> {
    let f = cli.flags;
    let mut cfg = RunConfig::default();
    if let Some(path) = &f.spec {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", path.display())))?;
        let spec = hairmatte_core::model::ModelSpec::parse_canonical(&text).map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.model.variant = Some(spec.variant.to_string());
        cfg.model.input_size = Some(spec.input_size);
        cfg.model.num_classes = Some(spec.num_classes);
        cfg.model.width = Some(spec.width_multiplier);
        cfg.model.decoder_depth = Some(spec.decoder_depth);
        cfg.model.batchnorm = Some(spec.use_batchnorm);
    }
    let m = &mut cfg.model;
    m.variant = f.variant.or(m.variant.take());
    m.width = f.width.or(m.width);
    m.input_size = f.input_size.or(m.input_size);
    m.num_classes = f.classes.or(m.num_classes);
    m.decoder_depth = f.decoder_depth.or(m.decoder_depth);
    if f.no_batchnorm {
        m.batchnorm = Some(false);
    }
    cfg.train.epochs = f.epochs.unwrap_or(cfg.train.epochs);
    cfg.train.batch = f.batch.unwrap_or(cfg.train.batch);
    cfg.loss.w_gradcons = f.w_gradcons.unwrap_or(cfg.loss.w_gradcons);
    cfg.loss.l2 = f.l2.unwrap_or(cfg.loss.l2);
    cfg.filter.refine = f.refine;
    cfg.filter.radius = f.radius.unwrap_or(cfg.filter.radius);
    cfg.filter.eps = f.eps.unwrap_or(cfg.filter.eps);
    cfg.filter.guide = f.guide.unwrap_or(cfg.filter.guide);
    cfg.seed = f.seed.unwrap_or(cfg.seed);
    cfg.out = f.out;
    cfg.data.dataset = f.data;
    cfg.data.checkpoint = f.checkpoint;

    cfg.command = match cli.command {
        Command::Synth { train, val, test, size, coarse } => {
            let s = &mut cfg.synth;
            s.train = train.unwrap_or(s.train);
            s.val = val.unwrap_or(s.val);
            s.test = test.unwrap_or(s.test);
            s.size = size.or(s.size);
            s.coarse = coarse.unwrap_or(s.coarse);
            CommandKind::Synth
        }
        Command::Train { flip } => {
            cfg.train.flip = flip;
            CommandKind::Train
        }
        Command::Infer { inputs } => {
            cfg.data.inputs = inputs;
            CommandKind::Infer
        }
        Command::Eval { split } => {
            cfg.data.split = split.unwrap_or(cfg.data.split);
            CommandKind::Eval
        }
        Command::Refine { image, mask } => {
            cfg.data.image = Some(image);
            cfg.data.mask = Some(mask);
            CommandKind::Refine
        }
        Command::Recolor { image, mask, color } => {
            cfg.data.image = Some(image);
            cfg.data.mask = Some(mask);
            cfg.data.color =
                Some(parse_color(&color).ok_or_else(|| CliError::Usage(format!("bad colour {color:?}")))?);
            CommandKind::Recolor
        }
        Command::Bench { iterations, warmup } => {
            cfg.bench.iterations = iterations.unwrap_or(cfg.bench.iterations);
            cfg.bench.warmup = warmup.unwrap_or(cfg.bench.warmup);
            CommandKind::Bench
        }
    };
    match &f.config {
        Some(path) => cfg.override_from_file(path),
        None => Ok(cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let print_config = cli.flags.print_config;
    let result = resolve(cli).and_then(|cfg| if print_config { Ok(cfg.to_canonical()) } else { run(&cfg) });
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
