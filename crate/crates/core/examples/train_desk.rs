//! Trains the desk configuration on synthetic images and prints the loss
//! every 50 steps.
//!
//! ```text
//! cargo run --release --example train_desk -- [steps] [out_dir]
//! ```

use deepfgs::harness::train::{dataset_for, moving_average, train};
use deepfgs::harness::TrainConfig;

fn main() -> deepfgs::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args
        .next()
        .map_or(200, |s| s.parse().expect("steps must be an integer"));
    let out_dir = args.next().unwrap_or_else(|| "runs/example".into());

    let cfg = TrainConfig {
        steps,
        lr_drop_step: steps * 3 / 4,
        out_dir: out_dir.into(),
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let data = dataset_for(&cfg)?;
    println!(
        "{} parameters, {} images",
        deepfgs::DeepFgs::<f32>::new(cfg.model.clone())?.param_count(),
        data.len()
    );

    let outcome = train(&cfg, &data, |r| {
        if r.step % 50 == 0 {
            println!(
                "step {:5}  loss {:9.4}  rate {:.4}+{:.4} bpp  j {:2}",
                r.step, r.loss.total, r.loss.rate_b, r.loss.rate_s, r.loss.j
            );
        }
    })?;
    let totals = outcome.totals();
    println!(
        "final 100-step average {:.4}; checkpoint {}",
        moving_average(&totals, totals.len() - 1, 100),
        outcome.checkpoint.display()
    );
    Ok(())
}
