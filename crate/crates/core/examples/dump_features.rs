//! Per-channel energy of the fused decoder features with and without the
//! scalable latent. Rows 1..=C1 are basic channels, the rest scalable.
//!
//! ```text
//! cargo run --release --example dump_features -- [checkpoint] [image.png]
//! ```

use std::path::Path;

use deepfgs::coder::Codec;
use deepfgs::harness::data::{synthetic_image, Image};
use deepfgs::harness::eval::dump_features;
use deepfgs::{DeepFgs, ModelConfig};

fn main() -> deepfgs::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let codec = match args.first() {
        Some(path) => Codec::load(Path::new(path))?,
        None => Codec::new(DeepFgs::new(ModelConfig::default())?),
    };
    let image = match args.get(1) {
        Some(path) => Image::load(Path::new(path))?.conformed()?,
        None => synthetic_image("synthetic".into(), 64, 64, 11),
    };

    let dump = dump_features(&codec, &image)?;
    let c1 = codec.model.cfg.c1;
    println!("feature shape {:?}", dump.shape);
    println!("channel      basic       full   difference");
    for row in &dump.rows {
        let tag = if row.channel <= c1 { "b" } else { "s" };
        println!(
            "{tag}{:<6} {:10.4} {:10.4} {:12.4}",
            row.channel, row.basic, row.full, row.difference
        );
    }
    Ok(())
}
