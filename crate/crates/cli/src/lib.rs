//! Command-line front end for the sociorec pipeline.
//!
//! Every subcommand loads one [`RunConfig`] (a JSON file, defaults when
//! absent), applies flag overrides on top, and runs a single stage against
//! the configured output directory.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sociorec_core::nn::Preset;
use sociorec_core::pipeline::{self, RunConfig};
use sociorec_core::Error;

/// Environment variable naming the output root; a flag takes precedence.
pub const OUT_ENV: &str = "SOCIOREC_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sociorec", version, about = "Plan recommendation from socio-cultural country profiles")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides the config file.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and join the cultural and socio-economic tables.
    Ingest,
    /// Generate synthetic subscriber aggregates.
    Synth {
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Enrich, clean, scale, encode and split.
    Preprocess,
    /// Correlation matrix and feature reduction.
    Features {
        #[arg(long)]
        t_low: Option<f64>,
        #[arg(long)]
        t_redundant: Option<f64>,
    },
    /// Fit the networks and the baselines.
    Train {
        #[command(flatten)]
        ann: AnnFlags,
    },
    /// Batch-size by epoch grid search for the configured preset.
    Grid {
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Score the stored models on the test split.
    Evaluate,
    /// Build the comparison table.
    Compare,
    /// Bundle artifacts with a hash manifest.
    Report,
    /// All stages in order.
    Pipeline {
        #[command(flatten)]
        ann: AnnFlags,
        /// Also run the grid search.
        #[arg(long)]
        grid: bool,
    },
}

#[derive(Debug, Args)]
struct AnnFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl AnnFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.epochs.is_some() {
            cfg.ann.epochs = self.epochs;
        }
        if self.batch_size.is_some() {
            cfg.ann.batch_size = self.batch_size;
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(command: &Command, mut cfg: RunConfig) -> Result<(), Error> {
    match command {
        Command::Ingest => {}
        Command::Synth { rows, noise } => {
            if let Some(r) = rows {
                cfg.synth.rows = *r;
            }
            if let Some(n) = noise {
                cfg.synth.noise = *n;
            }
        }
        Command::Features { t_low, t_redundant } => {
            if let Some(t) = t_low {
                cfg.t_low = *t;
            }
            if let Some(t) = t_redundant {
                cfg.t_redundant = *t;
            }
        }
        Command::Train { ann } => ann.apply(&mut cfg),
        Command::Grid { preset } => {
            if let Some(p) = preset {
                cfg.preset = *p;
            }
        }
        Command::Pipeline { ann, grid } => {
            ann.apply(&mut cfg);
            cfg.grid.enabled |= *grid;
        }
        _ => {}
    }
    cfg.validate()?;
    match command {
        Command::Ingest => pipeline::stage_ingest(&cfg).map(drop),
        Command::Synth { .. } => pipeline::stage_synth(&cfg).map(drop),
        Command::Preprocess => pipeline::stage_preprocess(&cfg).map(drop),
        Command::Features { .. } => {
            let r = pipeline::stage_features(&cfg)?;
            println!("kept {} features", r.kept.len());
            Ok(())
        }
        Command::Train { .. } => pipeline::stage_train(&cfg),
        Command::Grid { .. } => {
            let g = pipeline::stage_grid(&cfg)?;
            println!("{} trials; best: batch {} epochs {}", g.trials.len(), g.best.batch_size, g.best.epochs);
            Ok(())
        }
        Command::Evaluate => pipeline::stage_evaluate(&cfg).map(drop),
        Command::Compare => {
            print!("{}", pipeline::stage_compare(&cfg)?.to_text());
            Ok(())
        }
        Command::Report => pipeline::emit_report(&cfg).map(drop),
        Command::Pipeline { .. } => {
            pipeline::run_pipeline(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.layout().comparison_txt()).unwrap_or_default());
            Ok(())
        }
    }
}

/// Runs one invocation; `argv[0]` is the program name. Returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    match load_config(&cli.common).and_then(|cfg| dispatch(&cli.command, cfg)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
