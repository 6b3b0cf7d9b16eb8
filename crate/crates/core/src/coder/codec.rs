//! One-pass image encoding and prefix decoding.

use std::path::Path;

use fgs_autograd::{no_grad, ConvGeom, Tensor};
use serde::Serialize;

use super::cdf::{check_integral, decode_gaussian, encode_gaussian, table_from_cdf, CdfTable};
use super::container::{hex, Container, VERSION};
use super::rans::{Decoder, Encoder};
use crate::checkpoint;
use crate::config::DOWNSAMPLE;
use crate::entropy::{channel_bits, DecodeSession, FactorizedPrior};
use crate::error::{Error, Result};
use crate::model::{DeepFgs, Mode};
use crate::transforms::ImageBatch;

/// A model ready for entropy coding: parameters, their hash, and the
/// hyper-latent tables derived from the factorized priors.
pub struct Codec {
    pub model: DeepFgs<f32>,
    pub hash: [u8; 8],
    prior_b: Vec<CdfTable>,
    prior_s: Vec<CdfTable>,
}

fn prior_tables(prior: &FactorizedPrior<f32>) -> Vec<CdfTable> {
    (0..prior.channels())
        .map(|c| table_from_cdf(|x| prior.cdf_f64(c, x)))
        .collect()
}

/// Output of [`Codec::encode`].
pub struct Encoded {
    pub container: Container,
    /// Model-estimated bits for each segment, in container order.
    pub estimated_bits: Vec<f64>,
    /// Coded symbols, not counting escape payloads.
    pub symbols: usize,
}

impl Encoded {
    pub fn estimated_total(&self) -> f64 {
        self.estimated_bits.iter().sum()
    }

    pub fn coded_bits(&self) -> usize {
        8 * self.container.payload_bytes()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecodeStats {
    pub n_present: usize,
    pub basic_bytes: usize,
    pub scalable_bytes: usize,
    pub header_bytes: usize,
    pub bpp_basic: f64,
    pub bpp_scalable: f64,
    pub bpp: f64,
}

/// Output of [`Codec::decode`].
pub struct Decoded {
    /// Clamped reconstruction, `1×3×H×W`.
    pub x_hat: Tensor<f32>,
    pub y_b_hat: Tensor<f32>,
    /// All `C2` channels; channels past `n_present` are zero.
    pub y_s_hat: Tensor<f32>,
    pub stats: DecodeStats,
}

fn hyper_extent(latent: usize) -> usize {
    let g = ConvGeom::new(5, 2, 2);
    g.out_len(g.out_len(latent))
}

fn encode_factorized(z: &Tensor<f32>, tables: &[CdfTable]) -> Result<Vec<u8>> {
    let [_, c, h, w] = z.shape();
    let mut enc = Encoder::new();
    for ch in 0..c {
        for &v in &z.data()[ch * h * w..(ch + 1) * h * w] {
            tables[ch].encode(&mut enc, check_integral(v as f64)?);
        }
    }
    Ok(enc.finish())
}

fn encode_block(values: &[f32], mu: &[f32], sigma: &[f32]) -> Result<Vec<u8>> {
    let mut enc = Encoder::new();
    for i in 0..values.len() {
        encode_gaussian(
            &mut enc,
            check_integral(values[i] as f64)?,
            mu[i] as f64,
            sigma[i] as f64,
        );
    }
    Ok(enc.finish())
}

/// Rebases a segment-relative corruption offset onto the file.
fn locate(e: Error, segment: &str, file_offset: usize) -> Error {
    match e {
        Error::Corrupt { offset, reason } => Error::Corrupt {
            offset: file_offset + offset,
            reason: format!("{segment}: {reason}"),
        },
        other => other,
    }
}

struct SegmentReader {
    offset: usize,
}

impl SegmentReader {
    fn run<R>(
        &mut self,
        name: &str,
        bytes: &[u8],
        f: impl FnOnce(&mut Decoder) -> Result<R>,
    ) -> Result<R> {
        let start = self.offset;
        self.offset += bytes.len();
        let inner = || -> Result<R> {
            let mut dec = Decoder::new(bytes)?;
            let out = f(&mut dec)?;
            dec.finish()?;
            Ok(out)
        };
        inner().map_err(|e| locate(e, name, start))
    }
}

fn decode_factorized(
    dec: &mut Decoder,
    tables: &[CdfTable],
    shape: [usize; 4],
) -> Result<Tensor<f32>> {
    let [_, c, h, w] = shape;
    let mut data = Vec::with_capacity(c * h * w);
    for table in tables.iter().take(c) {
        for _ in 0..h * w {
            data.push(table.decode(dec)? as f32);
        }
    }
    Ok(Tensor::from_vec(data, shape))
}

fn decode_block(dec: &mut Decoder, mu: &[f32], sigma: &[f32]) -> Result<Vec<f32>> {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| decode_gaussian(dec, m as f64, s as f64).map(|v| v as f32))
        .collect()
}

impl Codec {
    pub fn new(model: DeepFgs<f32>) -> Self {
        let hash = checkpoint::model_hash(&model);
        Self::with_hash(model, hash)
    }

    pub fn with_hash(model: DeepFgs<f32>, hash: [u8; 8]) -> Self {
        let prior_b = prior_tables(&model.entropy.prior_b);
        let prior_s = prior_tables(&model.entropy.prior_s);
        Self {
            model,
            hash,
            prior_b,
            prior_s,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, hash) = checkpoint::load(path)?;
        Ok(Self::with_hash(model, hash))
    }

    /// Encodes one image with every scalable channel present.
    pub fn encode(&self, image: &ImageBatch<f32>) -> Result<Encoded> {
        let x = image.tensor();
        let [n, _, h, w] = x.shape();
        if n != 1 {
            return Err(Error::Shape(format!(
                "the codec encodes one image at a time, got a batch of {n}"
            )));
        }
        if h > u16::MAX as usize || w > u16::MAX as usize {
            return Err(Error::Shape(format!(
                "{h}×{w} does not fit the 16-bit header fields"
            )));
        }
        let fp = no_grad(|| self.model.forward(x, Mode::Infer))?;
        let cfg = &self.model.cfg;
        let plane = (h / DOWNSAMPLE) * (w / DOWNSAMPLE);

        let z_b = encode_factorized(&fp.z_b_hat, &self.prior_b)?;
        let y_b = encode_block(
            fp.y_b_hat.data(),
            fp.params_b.mu.data(),
            fp.params_b.sigma.data(),
        )?;
        let z_s = encode_factorized(&fp.z_s_hat, &self.prior_s)?;
        let (y_s, mu_s, sigma_s) = (
            fp.y_s_hat.data(),
            fp.params_s.mu.data(),
            fp.params_s.sigma.data(),
        );
        let y_s_segments = (0..cfg.c2)
            .map(|c| {
                let r = c * plane..(c + 1) * plane;
                encode_block(&y_s[r.clone()], &mu_s[r.clone()], &sigma_s[r])
            })
            .collect::<Result<Vec<_>>>()?;

        let total = |lik: &Tensor<f32>| channel_bits(lik).iter().sum::<f64>();
        let mut estimated_bits = vec![total(&fp.lik_z_b), total(&fp.lik_y_b), total(&fp.lik_z_s)];
        estimated_bits.extend(channel_bits(&fp.lik_y_s));
        let symbols =
            fp.z_b_hat.numel() + fp.y_b_hat.numel() + fp.z_s_hat.numel() + fp.y_s_hat.numel();

        Ok(Encoded {
            container: Container {
                version: VERSION,
                model_hash: self.hash,
                height: h as u16,
                width: w as u16,
                c1: cfg.c1 as u16,
                c2: cfg.c2 as u16,
                z_b,
                y_b,
                z_s: Some(z_s),
                y_s: y_s_segments,
            },
            estimated_bits,
            symbols,
        })
    }

    pub fn decode(&self, c: &Container) -> Result<Decoded> {
        if c.model_hash != self.hash {
            return Err(Error::HashMismatch {
                expected: hex(&self.hash),
                found: hex(&c.model_hash),
            });
        }
        let cfg = &self.model.cfg;
        if (c.c1 as usize, c.c2 as usize) != (cfg.c1, cfg.c2) {
            return Err(Error::format(
                "container",
                format!(
                    "latent widths {}+{} do not match the model's {}+{}",
                    c.c1, c.c2, cfg.c1, cfg.c2
                ),
            ));
        }
        let (h, w) = (c.height as usize, c.width as usize);
        if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::format(
                "container",
                format!("image size {h}×{w} is not a multiple of 16"),
            ));
        }
        let (lh, lw) = (h / DOWNSAMPLE, w / DOWNSAMPLE);
        let z_shape = [1, cfg.hyper_channels, hyper_extent(lh), hyper_extent(lw)];
        let plane = lh * lw;
        let n = c.n_present();
        let entropy = &self.model.entropy;
        let mut reader = SegmentReader {
            offset: c.overhead_bytes(),
        };

        no_grad(|| {
            let mut session = DecodeSession::new(entropy, lh, lw);
            let z_b = reader.run("z_b", &c.z_b, |d| {
                decode_factorized(d, &self.prior_b, z_shape)
            })?;
            let params_b = session.basic_params(&z_b)?;
            let y_b = reader.run("y_b", &c.y_b, |d| {
                decode_block(d, params_b.mu.data(), params_b.sigma.data())
            })?;
            session.set_basic(Tensor::from_vec(y_b, [1, cfg.c1, lh, lw]))?;

            let mut y_s = vec![0f32; cfg.c2 * plane];
            if let Some(z_s_bytes) = &c.z_s {
                let z_s = reader.run("z_s", z_s_bytes, |d| {
                    decode_factorized(d, &self.prior_s, z_shape)
                })?;
                let params = session.scalable_params(&z_s)?;
                let (mu, sigma) = (params.mu.data(), params.sigma.data());
                for (ch, seg) in c.y_s.iter().enumerate() {
                    let r = ch * plane..(ch + 1) * plane;
                    let values = reader.run(&format!("y_s[{}]", ch + 1), seg, |d| {
                        decode_block(d, &mu[r.clone()], &sigma[r.clone()])
                    })?;
                    y_s[r].copy_from_slice(&values);
                }
            }
            let y_b_hat = session.basic().expect("set above").clone();
            let y_s_hat = Tensor::from_vec(y_s, [1, cfg.c2, lh, lw]);
            let x_hat = self.model.reconstruct(&y_b_hat, &y_s_hat, n, true)?;

            let basic_bytes = c.z_b.len() + c.y_b.len();
            let scalable_bytes = c.payload_bytes() - basic_bytes;
            let px = (h * w) as f64;
            Ok(Decoded {
                x_hat,
                y_b_hat,
                y_s_hat,
                stats: DecodeStats {
                    n_present: n,
                    basic_bytes,
                    scalable_bytes,
                    header_bytes: c.overhead_bytes(),
                    bpp_basic: 8.0 * basic_bytes as f64 / px,
                    bpp_scalable: 8.0 * scalable_bytes as f64 / px,
                    bpp: c.bpp(),
                },
            })
        })
    }
}
