//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::coder::{Codec, Container, TruncateTarget};
use crate::error::Error;
use crate::harness::data::{Dataset, Image};
use crate::harness::{eval, train, TrainConfig};

/// Seed of the synthetic evaluation set, distinct from any training seed.
pub const HELD_OUT_SEED: u64 = 9001;

#[derive(Parser, Debug)]
#[command(
    name = "deepfgs",
    version,
    about = "Fine-grained scalable learned image codec"
)]
struct Cli {
    /// Overrides the seed of training or of synthetic evaluation images.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Serial data order and single-threaded execution (always the case in
    /// this build; accepted for scripts).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output file or directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write machine-readable results to this path.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ImageSource {
    /// Directory of evaluation images (PNG or JPEG).
    #[arg(long, conflicts_with = "synthetic")]
    images: Option<PathBuf>,
    /// Use this many synthetic held-out images instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side of the synthetic images.
    #[arg(long, default_value_t = 128)]
    size: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes checkpoints and a step log under the output directory.
    Train {
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, for example `model.c2=16`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Directory of training images.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Encode an image into a container holding every scalable channel.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
    /// Decode a container, complete or truncated, to PNG.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
    /// Drop trailing scalable channels from a container.
    Truncate {
        input: PathBuf,
        #[arg(long, group = "target")]
        channels: Option<usize>,
        /// Whole-file byte budget, header included.
        #[arg(long, group = "target")]
        max_bytes: Option<usize>,
        /// Payload bits-per-pixel budget.
        #[arg(long, group = "target")]
        bpp: Option<f64>,
    },
    /// Print a container's header and segment table.
    Inspect { input: PathBuf },
    /// Rate–distortion sweep over truncation levels.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: ImageSource,
        /// Channels between truncation levels.
        #[arg(long, default_value_t = 8)]
        interval: usize,
    },
    /// Estimated bits and prefix quality per group of scalable channels.
    AnalyzeEntropy {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: ImageSource,
        #[arg(long, default_value_t = 8)]
        groups: usize,
    },
    /// Per-channel energies of the decoder fusion features.
    DumpFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type CliResult = std::result::Result<(), Failure>;

fn require_out(out: &Option<PathBuf>) -> std::result::Result<&Path, Failure> {
    out.as_deref()
        .ok_or_else(|| Failure::Usage("this command needs --out".into()))
}

fn write_json<S: Serialize>(path: &Option<PathBuf>, value: &S) -> CliResult {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(value).map_err(Error::from)?)?;
    }
    Ok(())
}

fn read_container(path: &Path) -> Result<Container, Error> {
    Container::from_bytes(&std::fs::read(path)?)
}

fn load_images(
    src: &ImageSource,
    seed: Option<u64>,
) -> std::result::Result<(Vec<Image>, String), Failure> {
    let ds = match (&src.images, src.synthetic) {
        (Some(dir), _) => Dataset::load_dir(dir)?,
        (None, Some(n)) => Dataset::synthetic(n, src.size, seed.unwrap_or(HELD_OUT_SEED)),
        (None, None) => return Err(Failure::Usage("give --images DIR or --synthetic N".into())),
    };
    let ds = ds.conformed()?;
    Ok((ds.images, ds.id))
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `deepfgs --help` for usage.");
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let Cli {
        seed,
        deterministic: _,
        out,
        json,
        command,
    } = cli;
    match command {
        Command::Train {
            config,
            mut overrides,
            steps,
            dataset,
        } => {
            if let Some(s) = steps {
                overrides.push(format!("steps={s}"));
                overrides.push(format!("lr_drop_step={}", s * 3 / 4));
            }
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
                overrides.push(format!("model.seed={s}"));
            }
            if let Some(d) = dataset {
                overrides.push(format!(
                    "dataset_dir={}",
                    toml::Value::String(d.display().to_string())
                ));
            }
            if let Some(o) = &out {
                overrides.push(format!(
                    "out_dir={}",
                    toml::Value::String(o.display().to_string())
                ));
            }
            let cfg = match &config {
                Some(path) => TrainConfig::load(path, &overrides)?,
                None => TrainConfig::from_toml("", &overrides)?,
            };
            let data = train::dataset_for(&cfg)?;
            eprintln!(
                "training {} steps on {} ({} images), {} parameters",
                cfg.steps,
                data.id,
                data.len(),
                crate::DeepFgs::<f32>::new(cfg.model.clone())?.param_count()
            );
            let outcome = train::train(&cfg, &data, |_| {})?;
            let hash = crate::coder::container::hex(&outcome.hash);
            println!("checkpoint {} ({hash})", outcome.checkpoint.display());
            write_json(
                &json,
                &serde_json::json!({
                    "checkpoint": outcome.checkpoint,
                    "hash": hash,
                    "history": outcome.history,
                }),
            )
        }
        Command::Encode { checkpoint, input } => {
            let out = require_out(&out)?;
            let codec = Codec::load(&checkpoint)?;
            let img = Image::load(&input)?.conformed()?;
            let enc = codec.encode(&img.to_batch()?)?;
            std::fs::write(out, enc.container.to_bytes())?;
            let summary = enc.container.summary();
            println!("{summary}");
            println!(
                "estimated {:.1} bits, coded {} bits over {} symbols",
                enc.estimated_total(),
                enc.coded_bits(),
                enc.symbols
            );
            write_json(
                &json,
                &serde_json::json!({
                    "container": summary,
                    "estimated_bits": enc.estimated_bits,
                    "coded_bits": enc.coded_bits(),
                }),
            )
        }
        Command::Decode { checkpoint, input } => {
            let out = require_out(&out)?;
            let codec = Codec::load(&checkpoint)?;
            let dec = codec.decode(&read_container(&input)?)?;
            Image::from_tensor("decoded", &dec.x_hat, 0).save(out)?;
            let s = &dec.stats;
            println!(
                "decoded {} scalable channels: {:.4} bpp ({:.4} basic + {:.4} scalable), header {} bytes",
                s.n_present, s.bpp, s.bpp_basic, s.bpp_scalable, s.header_bytes
            );
            write_json(&json, s)
        }
        Command::Truncate {
            input,
            channels,
            max_bytes,
            bpp,
        } => {
            let out = require_out(&out)?;
            let target = match (channels, max_bytes, bpp) {
                (Some(n), None, None) => TruncateTarget::Channels(n),
                (None, Some(b), None) => TruncateTarget::MaxBytes(b),
                (None, None, Some(r)) => TruncateTarget::Bpp(r),
                _ => {
                    return Err(Failure::Usage(
                        "give one of --channels, --max-bytes, --bpp".into(),
                    ))
                }
            };
            let c = read_container(&input)?.truncate(target)?;
            std::fs::write(out, c.to_bytes())?;
            let summary = c.summary();
            println!("{summary}");
            write_json(&json, &summary)
        }
        Command::Inspect { input } => {
            let summary = read_container(&input)?.summary();
            println!("{summary}");
            write_json(&json, &summary)
        }
        Command::Eval {
            checkpoint,
            source,
            interval,
        } => {
            let out = require_out(&out)?;
            let codec = Codec::load(&checkpoint)?;
            let (images, id) = load_images(&source, seed)?;
            let report = eval::rd_sweep(
                &codec,
                &images,
                interval,
                seed.unwrap_or(HELD_OUT_SEED),
                &id,
            )?;
            report.check_integrity()?;
            report.write(out)?;
            print!("{}", report.curve_csv());
            write_json(&json, &report)
        }
        Command::AnalyzeEntropy {
            checkpoint,
            source,
            groups,
        } => {
            let codec = Codec::load(&checkpoint)?;
            let (images, _) = load_images(&source, seed)?;
            let analysis = eval::analyze_entropy(&codec, &images, groups)?;
            let csv = analysis.to_csv();
            if let Some(o) = &out {
                std::fs::create_dir_all(o)?;
                std::fs::write(o.join("entropy.csv"), &csv)?;
            }
            print!("{csv}");
            println!("basic layer PSNR {:.3} dB", analysis.psnr_basic);
            write_json(&json, &analysis)
        }
        Command::DumpFeatures { checkpoint, input } => {
            let codec = Codec::load(&checkpoint)?;
            let img = Image::load(&input)?.conformed()?;
            let dump = eval::dump_features(&codec, &img)?;
            let csv = dump.to_csv();
            if let Some(o) = &out {
                std::fs::create_dir_all(o)?;
                std::fs::write(o.join("features.csv"), &csv)?;
            }
            print!("{csv}");
            write_json(&json, &dump)
        }
    }
}
