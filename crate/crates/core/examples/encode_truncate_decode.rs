//! Encodes one image once, then decodes it from several truncated copies of
//! the same container.
//!
//! ```text
//! cargo run --release --example encode_truncate_decode -- [checkpoint] [image.png]
//! ```
//!
//! Without a checkpoint the model is freshly initialized, which shows the
//! mechanics but not useful quality.

use std::path::Path;

use deepfgs::coder::{Codec, Container, TruncateTarget};
use deepfgs::harness::data::{synthetic_image, Image};
use deepfgs::objective::psnr;
use deepfgs::{DeepFgs, ModelConfig};

fn main() -> deepfgs::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let codec = match args.first() {
        Some(path) => Codec::load(Path::new(path))?,
        None => Codec::new(DeepFgs::new(ModelConfig::default())?),
    };
    let image = match args.get(1) {
        Some(path) => Image::load(Path::new(path))?.conformed()?,
        None => synthetic_image("synthetic".into(), 128, 128, 42),
    };
    let x = image.to_batch()?;

    let encoded = codec.encode(&x)?;
    let estimated = encoded.estimated_total();
    let full = encoded.container;
    println!(
        "{}x{}: {} bytes, {} segments, estimated {:.0} bits, coded {} bits",
        full.width,
        full.height,
        full.total_bytes(),
        full.segments().len(),
        estimated,
        8 * full.payload_bytes()
    );

    let c2 = codec.model.cfg.c2;
    for n in [0, c2 / 8, c2 / 4, c2 / 2, c2] {
        // a byte round trip, as if the prefix had been sent over the wire
        let bytes = full.truncate(TruncateTarget::Channels(n))?.to_bytes();
        let decoded = codec.decode(&Container::from_bytes(&bytes)?)?;
        println!(
            "{n:3} channels  {:6} bytes  {:.4} bpp  {:.2} dB",
            bytes.len(),
            decoded.stats.bpp,
            psnr(x.tensor(), &decoded.x_hat)
        );
    }
    Ok(())
}
