//! `ghostsim` argument parsing and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::optics::{load_mask, load_mask_with_pitch, render_mask};

use super::experiments::{
    preset, write_complement, write_freq_response, write_oracle, write_simulation, write_visibility,
};
use super::output::{prepare_dir, Manifest};
use super::{ExperimentConfig, HarnessError};

#[derive(Debug, Parser)]
#[command(
    name = "ghostsim",
    version,
    about = "Thermal-light ghost imaging simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `run.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overrides `run.threads`).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    FreqResponse,
    Visibility,
    Complement,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FreqResponse => "freq-response",
            Self::Visibility => "visibility",
            Self::Complement => "complement",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum MaskCommand {
    /// Write the configured object as a graymap plus grid sidecar.
    Render(RunArgs),
    /// Describe a mask graymap.
    Info {
        path: PathBuf,
        /// Pitch in μm, for files without a `.grid` sidecar.
        #[arg(long)]
        pitch: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo ghost image.
    Simulate(RunArgs),
    /// Deterministic correlation and point spread function.
    Oracle(RunArgs),
    /// Run one of the slit experiments.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentName,
        #[command(flatten)]
        args: RunArgs,
    },
    #[command(subcommand)]
    Mask(MaskCommand),
}

fn resolve(
    args: &RunArgs,
    base: ExperimentConfig,
) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => base,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("ghostsim-out"));
    let dir = prepare_dir(&dir, args.overwrite)?;
    Ok((cfg, dir))
}

fn mask_info(path: &Path, pitch: Option<f64>) -> Result<String, HarnessError> {
    let mask = match pitch {
        Some(p) => load_mask_with_pitch(path, p)?,
        None => load_mask(path)?,
    };
    let g = mask.grid();
    Ok(format!(
        "grid {}x{} @ {} um\nbinary {}\nopen_pixels {}\nopen_area_um {}\n",
        g.nx(),
        g.ny(),
        g.pitch(),
        mask.is_binary(),
        mask.open_pixels().len(),
        mask.open_area()
    ))
}

/// Runs a parsed command, returning the text to print on success.
pub fn execute(cli: Cli) -> Result<String, HarnessError> {
    match cli.command {
        Command::Simulate(a) => {
            let (cfg, dir) = resolve(&a, ExperimentConfig::default())?;
            let sim = write_simulation(&cfg, &dir)?;
            let mut msg = format!("wrote {}\n", dir.display());
            if let Some(mc) = sim.moment_check {
                if !mc.reliable {
                    msg.push_str("warning: too few realizations for a reliable moment check\n");
                }
            }
            Ok(msg)
        }
        Command::Oracle(a) => {
            let (cfg, dir) = resolve(&a, ExperimentConfig::default())?;
            write_oracle(&cfg, &dir)?;
            Ok(format!("wrote {}\n", dir.display()))
        }
        Command::Experiment { name, args } => {
            let base = preset(name.as_str()).expect("every experiment has a preset");
            let (cfg, dir) = resolve(&args, base)?;
            let summary = match name {
                ExperimentName::FreqResponse => {
                    let r = write_freq_response(&cfg, &dir)?;
                    format!("oracle fit r2 = {:.6}", r.oracle_fit.r_squared)
                }
                ExperimentName::Visibility => write_visibility(&cfg, &dir)?.verdict(),
                ExperimentName::Complement => {
                    format!("SNR ratio = {:.3}", write_complement(&cfg, &dir)?.ratio())
                }
            };
            Ok(format!("{summary}\nwrote {}\n", dir.display()))
        }
        Command::Mask(MaskCommand::Render(a)) => {
            let (cfg, dir) = resolve(&a, ExperimentConfig::default())?;
            let mask = cfg.mask()?;
            render_mask(&mask, &dir.join("mask.pgm"))?;
            Manifest::new("mask render", &cfg).write(&dir.join("manifest.txt"))?;
            Ok(format!("wrote {}\n", dir.join("mask.pgm").display()))
        }
        Command::Mask(MaskCommand::Info { path, pitch }) => mask_info(&path, pitch),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
