//! Rate-distortion curve over every truncation level on held-out synthetic
//! images.
//!
//! ```text
//! cargo run --release --example rd_sweep -- [checkpoint] [interval]
//! ```

use std::path::Path;

use deepfgs::coder::Codec;
use deepfgs::harness::data::Dataset;
use deepfgs::harness::eval::rd_sweep;
use deepfgs::{DeepFgs, ModelConfig};

fn main() -> deepfgs::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let codec = match args.first() {
        Some(path) => Codec::load(Path::new(path))?,
        None => Codec::new(DeepFgs::new(ModelConfig::default())?),
    };
    let interval = args
        .get(1)
        .map_or(4, |s| s.parse().expect("interval must be an integer"));

    let images = Dataset::synthetic(4, 128, 9001).images;
    let report = rd_sweep(&codec, &images, interval, 9001, "synthetic")?;
    print!("{}", report.curve_csv());
    let (first, last) = (&report.curve[0], &report.curve[report.curve.len() - 1]);
    println!(
        "basic {:.4} bpp / {:.2} dB, full {:.4} bpp / {:.2} dB",
        first.bpp, first.psnr, last.bpp, last.psnr
    );
    Ok(())
}
