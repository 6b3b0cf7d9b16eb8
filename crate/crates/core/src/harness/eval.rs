//! Rate–distortion sweeps and the channel analysis experiments.

use std::fmt::Write as _;
use std::path::Path;

use fgs_autograd::{no_grad, Tensor};
use serde::Serialize;

use super::data::Image;
use crate::coder::{Codec, TruncateTarget};
use crate::entropy::channel_bits;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::objective::{ms_ssim, ms_ssim_scales, psnr};

/// Version of the CSV layouts written below.
pub const CSV_SCHEMA: u32 = 1;

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// MS-SSIM, or `None` when the image is too small for even one scale.
fn ms_ssim_opt(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Option<f64>> {
    let [_, _, h, w] = a.shape();
    if ms_ssim_scales(h.min(w)).is_err() {
        return Ok(None);
    }
    Ok(Some(no_grad(|| ms_ssim(a, b))?.item() as f64))
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub image: String,
    pub n_channels: usize,
    /// Whole file, header included.
    pub bytes: usize,
    /// Payload bits per source pixel.
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: Option<f64>,
}

/// Mean over images at one truncation level.
#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub n_channels: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalMeta {
    pub schema: u32,
    pub checkpoint_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub interval: usize,
    pub c2: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    /// Sorted by image, then by `n_channels`.
    pub rows: Vec<EvalRow>,
    pub curve: Vec<CurvePoint>,
}

/// Truncation levels `0, interval, 2·interval, …` with `c2` always last.
pub fn sweep_levels(c2: usize, interval: usize) -> Result<Vec<usize>> {
    if interval == 0 || interval > c2 {
        return Err(Error::Config(format!(
            "interval {interval} must lie in [1, c2 = {c2}]"
        )));
    }
    let mut levels: Vec<usize> = (0..=c2).step_by(interval).collect();
    if levels.last() != Some(&c2) {
        levels.push(c2);
    }
    Ok(levels)
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,n_channels,bytes,bpp,psnr,ms_ssim\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.image,
                r.n_channels,
                r.bytes,
                fmt_f64(r.bpp),
                fmt_f64(r.psnr),
                fmt_opt(r.ms_ssim)
            );
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("n_channels,bpp,psnr,ms_ssim\n");
        for p in &self.curve {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                p.n_channels,
                fmt_f64(p.bpp),
                fmt_f64(p.psnr),
                fmt_opt(p.ms_ssim)
            );
        }
        out
    }

    /// Writes `eval.csv`, `eval_curve.csv` and `eval.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("eval.csv"), self.to_csv())?;
        std::fs::write(dir.join("eval_curve.csv"), self.curve_csv())?;
        std::fs::write(dir.join("eval.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Checks row order and that bpp never falls as channels are added.
    pub fn check_integrity(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.image == b.image && (b.n_channels <= a.n_channels || b.bpp < a.bpp) {
                return Err(Error::format(
                    "report",
                    format!(
                        "{}: rows at n = {} and {} break the ordering",
                        a.image, a.n_channels, b.n_channels
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Encodes each image once, then truncates and decodes at every level.
pub fn rd_sweep(
    codec: &Codec,
    images: &[Image],
    interval: usize,
    seed: u64,
    dataset: &str,
) -> Result<EvalReport> {
    let c2 = codec.model.cfg.c2;
    let levels = sweep_levels(c2, interval)?;
    let mut rows = Vec::with_capacity(images.len() * levels.len());
    for img in images {
        let batch = img.to_batch()?;
        let full = codec.encode(&batch)?.container;
        for &n in &levels {
            let c = full.truncate(TruncateTarget::Channels(n))?;
            let dec = codec.decode(&c)?;
            rows.push(EvalRow {
                image: img.name.clone(),
                n_channels: n,
                bytes: c.total_bytes(),
                bpp: c.bpp(),
                psnr: psnr(batch.tensor(), &dec.x_hat),
                ms_ssim: ms_ssim_opt(batch.tensor(), &dec.x_hat)?,
            });
        }
    }
    let curve = levels
        .iter()
        .map(|&n| {
            let at: Vec<&EvalRow> = rows.iter().filter(|r| r.n_channels == n).collect();
            let mean = |f: &dyn Fn(&EvalRow) -> f64| {
                at.iter().map(|r| f(r)).sum::<f64>() / at.len().max(1) as f64
            };
            let ms = at.iter().map(|r| r.ms_ssim).collect::<Option<Vec<f64>>>();
            CurvePoint {
                n_channels: n,
                bpp: mean(&|r| r.bpp),
                psnr: mean(&|r| r.psnr),
                ms_ssim: ms
                    .filter(|v| !v.is_empty())
                    .map(|v| v.iter().sum::<f64>() / v.len() as f64),
            }
        })
        .collect();
    Ok(EvalReport {
        meta: EvalMeta {
            schema: CSV_SCHEMA,
            checkpoint_hash: crate::coder::container::hex(&codec.hash),
            seed,
            dataset: dataset.to_string(),
            interval,
            c2,
        },
        rows,
        curve,
    })
}

/// One contiguous group of scalable channels.
#[derive(Clone, Debug, Serialize)]
pub struct GroupRow {
    pub group: usize,
    pub first_channel: usize,
    pub last_channel: usize,
    /// Mean estimated bits of this group's channels per image.
    pub bits: f64,
    /// Mean PSNR decoding groups `1..=group`, the rest zero-filled.
    pub psnr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyAnalysis {
    pub schema: u32,
    pub groups: Vec<GroupRow>,
    /// Mean estimated bits of every scalable channel, in order.
    pub channel_bits: Vec<f64>,
    /// Mean PSNR of the basic reconstruction.
    pub psnr_basic: f64,
}

impl EntropyAnalysis {
    pub fn total_bits(&self) -> f64 {
        self.channel_bits.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,first_channel,last_channel,bits,psnr\n");
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                g.group,
                g.first_channel,
                g.last_channel,
                fmt_f64(g.bits),
                fmt_f64(g.psnr)
            );
        }
        out
    }
}

/// Splits the scalable channels into `groups` equal groups and reports the
/// estimated bits of each and the quality of every group prefix.
pub fn analyze_entropy(codec: &Codec, images: &[Image], groups: usize) -> Result<EntropyAnalysis> {
    let model = &codec.model;
    let c2 = model.cfg.c2;
    if groups == 0 || !c2.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "{groups} groups do not divide c2 = {c2}"
        )));
    }
    if images.is_empty() {
        return Err(Error::Config("no images to analyze".into()));
    }
    let size = c2 / groups;
    let mut bits = vec![0f64; c2];
    let mut group_psnr = vec![0f64; groups];
    let mut psnr_basic = 0.0;
    for img in images {
        let batch = img.to_batch()?;
        let x = batch.tensor();
        let fp = no_grad(|| model.forward(x, Mode::Infer))?;
        for (acc, b) in bits.iter_mut().zip(channel_bits(&fp.lik_y_s)) {
            *acc += b;
        }
        psnr_basic += psnr(x, &fp.x_hat_b);
        for (g, acc) in group_psnr.iter_mut().enumerate() {
            let x_hat = no_grad(|| fp.reconstruct(model, (g + 1) * size))?;
            *acc += psnr(x, &x_hat);
        }
    }
    let n = images.len() as f64;
    let channel_bits: Vec<f64> = bits.iter().map(|b| b / n).collect();
    let groups = (0..groups)
        .map(|g| GroupRow {
            group: g + 1,
            first_channel: g * size + 1,
            last_channel: (g + 1) * size,
            bits: channel_bits[g * size..(g + 1) * size].iter().sum(),
            psnr: group_psnr[g] / n,
        })
        .collect();
    Ok(EntropyAnalysis {
        schema: CSV_SCHEMA,
        groups,
        channel_bits,
        psnr_basic: psnr_basic / n,
    })
}

/// `max − min` over one `h×w` plane.
pub fn plane_energy(plane: &[f32]) -> f32 {
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if plane.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Per-channel energies of a `1×C×h×w` tensor.
pub fn channel_energies(t: &Tensor<f32>) -> Vec<f32> {
    let [_, c, h, w] = t.shape();
    (0..c)
        .map(|i| plane_energy(&t.data()[i * h * w..(i + 1) * h * w]))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FeatureRow {
    pub channel: usize,
    pub basic: f32,
    pub full: f32,
    pub difference: f32,
}

/// Fused decoder-head features for the basic and full latents.
#[derive(Clone, Debug, Serialize)]
pub struct FeatureDump {
    pub schema: u32,
    pub shape: [usize; 4],
    /// Fusion output for `ŷ_b || 0`.
    pub basic: Vec<f32>,
    /// Fusion output for `ŷ_b || ŷ_s`.
    pub full: Vec<f32>,
    /// `full − basic`.
    pub difference: Vec<f32>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDump {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,basic,full,difference\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                r.channel, r.basic, r.full, r.difference
            );
        }
        out
    }
}

pub fn dump_features(codec: &Codec, image: &Image) -> Result<FeatureDump> {
    let model = &codec.model;
    let batch = image.to_batch()?;
    let fp = no_grad(|| model.forward(batch.tensor(), Mode::Infer))?;
    let zeros = Tensor::zeros(fp.y_s_hat.shape());
    let (basic, full) = no_grad(|| -> Result<_> {
        let b = model
            .backbone
            .g_d
            .fuse(&Tensor::cat(&[fp.y_b_hat.clone(), zeros], 1))?;
        let f = model
            .backbone
            .g_d
            .fuse(&Tensor::cat(&[fp.y_b_hat.clone(), fp.y_s_hat.clone()], 1))?;
        Ok((b, f))
    })?;
    let difference = no_grad(|| full.sub(&basic));
    let rows = channel_energies(&basic)
        .into_iter()
        .zip(channel_energies(&full))
        .zip(channel_energies(&difference))
        .enumerate()
        .map(|(i, ((b, f), d))| FeatureRow {
            channel: i + 1,
            basic: b,
            full: f,
            difference: d,
        })
        .collect();
    Ok(FeatureDump {
        schema: CSV_SCHEMA,
        shape: basic.shape(),
        basic: basic.to_vec(),
        full: full.to_vec(),
        difference: difference.to_vec(),
        rows,
    })
}
