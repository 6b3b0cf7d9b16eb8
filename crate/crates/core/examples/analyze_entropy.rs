//! Mean estimated bits per scalable channel and per channel group, with the
//! PSNR reached after each group.
//!
//! ```text
//! cargo run --release --example analyze_entropy -- [checkpoint] [groups]
//! ```

use std::path::Path;

use deepfgs::coder::Codec;
use deepfgs::harness::data::Dataset;
use deepfgs::harness::eval::analyze_entropy;
use deepfgs::{DeepFgs, ModelConfig};

fn main() -> deepfgs::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let codec = match args.first() {
        Some(path) => Codec::load(Path::new(path))?,
        None => Codec::new(DeepFgs::new(ModelConfig::default())?),
    };
    let groups = args
        .get(1)
        .map_or(4, |s| s.parse().expect("groups must be an integer"));

    let images = Dataset::synthetic(4, 128, 9001).images;
    let analysis = analyze_entropy(&codec, &images, groups)?;
    print!("{}", analysis.to_csv());
    println!("basic layer {:.2} dB", analysis.psnr_basic);
    for (i, bits) in analysis.channel_bits.iter().enumerate() {
        println!(
            "channel {i:3}  {bits:9.1} bits  {}",
            "#".repeat((bits / 50.0).ceil() as usize)
        );
    }
    Ok(())
}
