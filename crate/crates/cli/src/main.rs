//! `edgesr`: train, run and evaluate the edge-attention super-resolution model.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or runtime errors.

use clap::{Args, Parser, Subcommand};
use edgesr_core::canny::{canny, CannyParams};
use edgesr_core::gradcheck::{run_suite, GradCheckOptions};
use edgesr_core::harness::{
    ablate, evaluate_pairs, resume, super_resolve, synth, train, RunOptions, RunOutcome, TrainConfig, Variant,
};
use edgesr_core::imageio::{list_images, load_image, save_image, Image, PatchPair};
use edgesr_core::metrics::evaluate_dir;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "edgesr", version, about = "Edge-attention super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a directory of high-resolution images.
    Train(TrainArgs),
    /// Continue an interrupted training run from its state file.
    Resume {
        /// State file, usually OUT/last.ckpt.
        #[arg(long)]
        state: PathBuf,
        /// Training images; may be omitted when the run is already complete.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; defaults to the state file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Upscale an image or every image in a directory.
    Sr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail unless the checkpoint was trained for this scale.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// PSNR and SSIM of super-resolved images against same-named references.
    Eval {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        /// Also write per-image scores as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the Canny edge map of an image.
    Edges {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 5)]
        ksize: usize,
        #[arg(long, default_value_t = 0.1)]
        low: f64,
        #[arg(long, default_value_t = 0.2)]
        high: f64,
        /// Treat --low/--high as gradient magnitudes instead of fractions of the maximum.
        #[arg(long)]
        absolute: bool,
    },
    /// Finite-difference gradient checks of every differentiable operation.
    Gradcheck {
        /// Only run cases whose name contains this string.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Train one ablation variant (or all of them) and optionally score it.
    Ablate {
        /// full, no_edge_attention, no_pixel, no_perceptual, no_adversarial or all.
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        train: TrainArgs,
        /// Held-out HR images; reports model and bicubic PSNR after training.
        #[arg(long)]
        held_out: Option<PathBuf>,
    },
    /// Write a synthetic image corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override a configuration key, e.g. --set schedule.epochs_full=10. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<edgesr_core::Error> for Failure {
    fn from(e: edgesr_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Train(args) => {
            let config = load_config(&args)?;
            let images = load_dir(&args.data)?;
            let out = train(config, &images, &args.out, &options(args.quiet))?;
            report_run(&out);
        }
        Command::Resume { state, data, out, quiet } => {
            let images = match data {
                Some(dir) => load_dir(&dir)?,
                None => Vec::new(),
            };
            let out_dir = out.unwrap_or_else(|| state.parent().map(Path::to_path_buf).unwrap_or_default());
            let out = resume(&state, &images, &out_dir, &options(quiet))?;
            report_run(&out);
        }
        Command::Sr { ckpt, input, out, scale } => {
            let inputs = if input.is_dir() { list_images(&input)? } else { vec![input] };
            let written = super_resolve(&ckpt, &inputs, &out, scale)?;
            println!("wrote {} image(s) to {}", written.len(), out.display());
        }
        Command::Eval { sr, hr, csv } => {
            let report = evaluate_dir(&sr, &hr)?;
            print!("{}", report.table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).map_err(|e| edgesr_core::Error::io(&path, e))?;
            }
        }
        Command::Edges { input, out, sigma, ksize, low, high, absolute } => {
            let params = CannyParams { sigma, ksize, low, high, relative: !absolute };
            params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let edges = canny(&load_image(&input)?, &params)?;
            save_image(&out, &edges.to_image())?;
            println!("{} edge pixels", edges.count());
        }
        Command::Gradcheck { module, seeds } => {
            let reports = run_suite(module.as_deref(), &seeds, &GradCheckOptions::default())?;
            if reports.is_empty() {
                return Err(Failure::Usage(format!("no gradient check matches {:?}", module.unwrap_or_default())));
            }
            for r in &reports {
                println!("{}", r.summary());
                for f in r.failures.iter().take(3) {
                    println!("      {f}");
                }
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{} of {} checks passed", reports.len() - failed, reports.len());
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} gradient check(s) failed")));
            }
        }
        Command::Ablate { variant, train: args, held_out } => {
            let variants = if variant == "all" {
                std::iter::once(Variant::Full).chain(Variant::ABLATIONS).collect()
            } else {
                vec![Variant::parse(&variant).map_err(|e| Failure::Usage(e.to_string()))?]
            };
            let config = load_config(&args)?;
            let images = load_dir(&args.data)?;
            let pairs = match &held_out {
                Some(dir) => load_dir(dir)?
                    .iter()
                    .map(|im| PatchPair::from_image(im, config.scale))
                    .collect::<Result<Vec<_>, _>>()?,
                None => Vec::new(),
            };
            for v in variants {
                let dir = if variant == "all" { args.out.join(v.name()) } else { args.out.clone() };
                let out = ablate(&config, v, &images, &dir, &options(args.quiet))?;
                if pairs.is_empty() {
                    println!("{:<18} {}", v.name(), out.last.display());
                } else {
                    let eval = evaluate_pairs(&mut out.trainer.model(), &pairs)?;
                    println!(
                        "{:<18} psnr {:.3} dB  bicubic {:.3} dB  ({:+.3})",
                        v.name(),
                        eval.model_psnr,
                        eval.bicubic_psnr,
                        eval.model_psnr - eval.bicubic_psnr
                    );
                }
            }
        }
        Command::Synth { out, count, size, seed } => {
            let written = synth::write_corpus(&out, count, size, size, seed)?;
            println!("wrote {} image(s) to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn options(quiet: bool) -> RunOptions {
    RunOptions { verbose: !quiet, ..Default::default() }
}

fn load_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn load_dir(dir: &Path) -> CliResult<Vec<Image>> {
    Ok(list_images(dir)?.iter().map(load_image).collect::<Result<_, _>>()?)
}

fn report_run(out: &RunOutcome) {
    println!(
        "epochs {}/{}  steps {}  state {}",
        out.trainer.epochs_completed,
        out.trainer.config.total_epochs(),
        out.trainer.steps,
        out.last.display()
    );
}
