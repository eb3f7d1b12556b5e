//! `wafertex`: synthetic scenes, texture enhancement, feature operators
//! and evaluation from the command line.
//!
//! Exit status is 0 on success, 1 when arguments, config or input
//! contents are invalid, and 2 when a file cannot be read or written.

mod cmd;
mod config;
mod error;
mod fsio;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::CliError;
use crate::fsio::{read_text, OutDir};

#[derive(Parser, Debug)]
#[command(name = "wafertex", version, about = "Periodic-texture defect tooling")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value pair, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene with ground truth
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Enhance an image and optionally emit disturbance detections
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run a context block over a feature map
    Muse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Weight bundle; a seeded block is built when absent
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Fuse feature maps (two for P2 fusion, three for tri-domain)
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Mask-IoU evaluation of detection records
    EvalSeg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Box-IoU evaluation of detection records
    EvalDet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Compare analytic and numeric gradients of an operator
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Count parameters and FLOPs of a layer list
    Count {
        #[command(flatten)]
        common: Common,
        /// Layer descriptor file; the reference table when absent
        #[arg(long)]
        layers: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(p) => Config::parse(&read_text(p)?, &p.display().to_string())?,
        None => Config::default(),
    };
    cfg.apply_overrides(&common.sets)?;
    Ok(cfg)
}

fn prepare(common: &Common) -> Result<(Config, OutDir), CliError> {
    Ok((load_config(common)?, OutDir::create(&common.out)?))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen { common } => {
            let (cfg, out) = prepare(&common)?;
            cmd::gen::run(cfg, &out)
        }
        Command::Enhance { common, input } => {
            let (cfg, out) = prepare(&common)?;
            cmd::enhance::run(cfg, &input, &out)
        }
        Command::Muse {
            common,
            input,
            weights,
        } => {
            let (cfg, out) = prepare(&common)?;
            cmd::tensors::run_muse(cfg, &input, weights.as_deref(), &out)
        }
        Command::Fuse { common, inputs } => {
            let (cfg, out) = prepare(&common)?;
            cmd::tensors::run_fuse(cfg, &inputs, &out)
        }
        Command::EvalSeg { common, pred, gt } => {
            let (cfg, out) = prepare(&common)?;
            cmd::eval::run(cfg, true, &pred, &gt, &out)
        }
        Command::EvalDet { common, pred, gt } => {
            let (cfg, out) = prepare(&common)?;
            cmd::eval::run(cfg, false, &pred, &gt, &out)
        }
        Command::Gradcheck { common } => {
            let (cfg, out) = prepare(&common)?;
            cmd::check::run_gradcheck(cfg, &out)
        }
        Command::Count { common, layers } => {
            let (cfg, out) = prepare(&common)?;
            cmd::check::run_count(cfg, layers.as_deref().map(Path::new), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let run = || dispatch(cli.command);
    let result = match cli.threads {
        Some(0) => Err(CliError::invalid("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(CliError::invalid(format!("cannot start {n} threads: {e}"))),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wafertex: {e}");
            e.exit_code()
        }
    }
}
