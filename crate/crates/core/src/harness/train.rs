//! The training loop.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::data::Dataset;
use super::optim::{Adam, AdamConfig};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::{DeepFgs, Mode};
use crate::objective::{composite_loss, sample_j, LossBreakdown};

/// Independent random streams of one run.
const STREAM_CROPS: u64 = 1;
const STREAM_CHANNELS: u64 = 2;

/// One logged optimizer step.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub model: DeepFgs<f32>,
    pub history: Vec<StepRecord>,
    /// Final checkpoint and its hash.
    pub checkpoint: PathBuf,
    pub hash: [u8; 8],
}

impl TrainOutcome {
    pub fn totals(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss.total).collect()
    }
}

/// Trailing moving average ending at index `end` (inclusive).
pub fn moving_average(values: &[f64], end: usize, window: usize) -> f64 {
    let start = (end + 1).saturating_sub(window);
    let slice = &values[start..=end];
    slice.iter().sum::<f64>() / slice.len() as f64
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Noise seed for the quantization surrogate of a given step.
fn noise_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(step as u64)
}

/// Loads the configured dataset, or generates the synthetic set.
pub fn dataset_for(cfg: &TrainConfig) -> Result<Dataset> {
    match &cfg.dataset_dir {
        Some(dir) => Dataset::load_dir(dir),
        None => Ok(Dataset::synthetic(
            cfg.synthetic_images,
            cfg.synthetic_size,
            cfg.seed,
        )),
    }
}

/// Runs the configured schedule, writing `train_log.csv`, periodic
/// checkpoints and `final.ckpt` under `cfg.out_dir`. `on_step` sees every
/// step.
///
/// A non-finite loss or gradient stops the run after writing
/// `nonfinite.ckpt` (the parameters before the failing step) and
/// `nonfinite.json`.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset {
            path: PathBuf::from(&data.id),
        });
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    let mut log =
        std::io::BufWriter::new(std::fs::File::create(cfg.out_dir.join("train_log.csv"))?);
    writeln!(
        log,
        "step,lr,total,rate_b,rate_s,dist_b,dist_s,j,w_j,grad_norm"
    )?;

    let mut model = DeepFgs::<f32>::new(cfg.model.clone())?;
    let mut adam = Adam::new(
        &model,
        AdamConfig {
            clip_norm: (cfg.clip_norm > 0.0).then_some(cfg.clip_norm),
            ..AdamConfig::default()
        },
    );
    let mut crops = stream(cfg.seed, STREAM_CROPS);
    let mut channels = stream(cfg.seed, STREAM_CHANNELS);
    let mut history = Vec::with_capacity(cfg.steps);
    let started = Instant::now();

    for step in 1..=cfg.steps {
        let batch = data.sample_batch(&mut crops, cfg.crop, cfg.batch)?;
        let j = if cfg.model.single_rate {
            cfg.model.c2
        } else {
            sample_j(&mut channels, cfg.model.c2)
        };
        let fp = model.forward(
            batch.tensor(),
            Mode::Train {
                seed: noise_seed(cfg.seed, step),
            },
        )?;
        let loss = composite_loss(&fp, &model, j)?;
        let grads = loss.total.backward();
        drop(fp);

        let finite = loss.breakdown.check_finite(step).and_then(|()| {
            let bad = model.named_params().iter().any(|(_, p)| {
                grads
                    .get(p)
                    .is_some_and(|g| g.iter().any(|v| !v.is_finite()))
            });
            if bad {
                Err(Error::NonFinite {
                    component: "gradient",
                    step,
                })
            } else {
                Ok(())
            }
        });
        if let Err(e) = finite {
            checkpoint::save(&model, &cfg.out_dir.join("nonfinite.ckpt"))?;
            std::fs::write(
                cfg.out_dir.join("nonfinite.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "step": step,
                    "error": e.to_string(),
                    "loss": loss.breakdown,
                }))?,
            )?;
            log.flush()?;
            return Err(e);
        }

        let lr = cfg.lr_at(step);
        let grad_norm = adam.step(&mut model, &grads, lr);
        let b = &loss.breakdown;
        writeln!(
            log,
            "{step},{lr:e},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{grad_norm:.6}",
            b.total, b.rate_b, b.rate_s, b.dist_b, b.dist_s, b.j, b.w_j
        )?;
        let record = StepRecord {
            step,
            lr,
            loss: loss.breakdown,
            grad_norm,
        };
        on_step(&record);
        history.push(record);

        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            let totals: Vec<f64> = history.iter().map(|r| r.loss.total).collect();
            eprintln!(
                "step {step:>6}  loss(avg{}) {:.4}  lr {lr:e}  {:.1}s",
                cfg.log_every,
                moving_average(&totals, step - 1, cfg.log_every),
                started.elapsed().as_secs_f64()
            );
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps {
            checkpoint::save(&model, &cfg.out_dir.join(format!("step{step:06}.ckpt")))?;
        }
    }
    log.flush()?;
    let path = cfg.out_dir.join("final.ckpt");
    let hash = checkpoint::save(&model, &path)?;
    Ok(TrainOutcome {
        model,
        history,
        checkpoint: path,
        hash,
    })
}
