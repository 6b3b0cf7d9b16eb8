//! Writes a container to disk, cuts it down to a byte budget and prints the
//! segment table of both files.
//!
//! ```text
//! cargo run --release --example inspect_container -- [checkpoint] [max_bytes]
//! ```

use std::path::Path;

use deepfgs::coder::{Codec, Container, TruncateTarget};
use deepfgs::harness::data::synthetic_image;
use deepfgs::{DeepFgs, ModelConfig};

fn show(label: &str, c: &Container) {
    let summary = c.summary();
    println!(
        "{label}: {} bytes, {}/{} scalable channels, {:.4} bpp",
        c.total_bytes(),
        summary.n_present,
        summary.c2,
        c.bpp()
    );
    for s in &summary.segments {
        println!("  {:<8} {:6} bytes", s.name, s.bytes);
    }
}

fn main() -> deepfgs::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let codec = match args.first() {
        Some(path) => Codec::load(Path::new(path))?,
        None => Codec::new(DeepFgs::new(ModelConfig::default())?),
    };
    let image = synthetic_image("synthetic".into(), 64, 96, 3);
    let full = codec.encode(&image.to_batch()?)?.container;

    let dir = std::env::temp_dir();
    let path = dir.join("deepfgs-example.fgs");
    std::fs::write(&path, full.to_bytes())?;
    let reread = Container::from_bytes(&std::fs::read(&path)?)?;
    show(&path.display().to_string(), &reread);

    let budget = args.get(1).map_or(reread.total_bytes() / 2, |s| {
        s.parse().expect("max_bytes must be an integer")
    });
    let cut = reread.truncate(TruncateTarget::MaxBytes(budget))?;
    show(&format!("within {budget} bytes"), &cut);
    Ok(())
}
