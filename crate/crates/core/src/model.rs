//! The complete codec network and its single shared forward pass.

use std::collections::HashMap;

use fgs_autograd::{Float, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::entropy::{likelihood, quantize, rate, EntropyModel, EntropyParams, QuantMode};
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::transforms::{channel_select, Backbone};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Noise quantization; four noise streams derived from `seed`.
    Train { seed: u64 },
    /// Rounding, clamped reconstructions.
    Infer,
}

impl Mode {
    fn quant(self, stream: u64) -> QuantMode {
        match self {
            Mode::Train { seed } => QuantMode::Noise {
                seed: seed.wrapping_mul(4).wrapping_add(stream),
            },
            Mode::Infer => QuantMode::Round,
        }
    }
}

pub struct DeepFgs<T: Float> {
    pub cfg: ModelConfig,
    pub backbone: Backbone<T>,
    pub entropy: EntropyModel<T>,
}

impl<T: Float> DeepFgs<T> {
    /// Fresh parameters drawn from a stream seeded by `cfg.seed`. The same
    /// seed gives the same values (up to rounding) in `f32` and `f64`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let backbone = Backbone::new(&mut rng, &cfg);
        let entropy = EntropyModel::new(&mut rng, &cfg);
        Ok(Self {
            cfg,
            backbone,
            entropy,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every parameter from `values`; names and shapes must match.
    pub fn load_params(&mut self, values: &HashMap<String, (Vec<usize>, Vec<T>)>) -> Result<()> {
        let mut seen = 0;
        for (name, slot) in self.named_params_mut() {
            let (shape, data) = values
                .get(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter {name}")))?;
            if shape.as_slice() != slot.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "{name} has shape {shape:?}, model expects {:?}",
                        slot.shape()
                    ),
                ));
            }
            *slot = Tensor::param(data.clone(), slot.shape());
            seen += 1;
        }
        if seen != values.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} parameters stored, model has {seen}", values.len()),
            ));
        }
        Ok(())
    }

    /// Copies parameters into another precision.
    pub fn cast<U: Float>(&self) -> DeepFgs<U> {
        let mut other =
            DeepFgs::<U>::new(self.cfg.clone()).expect("configuration already validated");
        let src = self.named_params();
        for ((_, dst), (_, s)) in other.named_params_mut().into_iter().zip(src) {
            *dst = s.cast::<U>().into_param();
        }
        other
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<ForwardPass<T>> {
        let bb = &self.backbone;
        let infer = mode == Mode::Infer;
        let y_b = bb.encode_basic(x)?;
        let [_, _, h, w] = y_b.shape();

        let z_b = self.entropy.hyper_encode_b(&y_b);
        let z_b_hat = quantize(&z_b, mode.quant(0));
        let y_b_hat = quantize(&y_b, mode.quant(1));
        let params_b = self.entropy.hyper_decode_b(&z_b_hat, h, w)?;
        let lik_y_b = likelihood(&y_b_hat, &params_b);
        let lik_z_b = self.entropy.prior_b.likelihood(&z_b_hat)?;

        let mut x_hat_b = bb.decode(&bb.basic_input(&y_b_hat))?;
        if infer {
            x_hat_b = x_hat_b.clamp(0.0, 1.0);
        }

        let y_s_prime = bb.encode_scalable(x, &x_hat_b)?;
        let y_s = bb.frr(&y_s_prime, &y_b)?;
        let z_s = self.entropy.hyper_encode_s(&y_s);
        let z_s_hat = quantize(&z_s, mode.quant(2));
        let y_s_hat = quantize(&y_s, mode.quant(3));
        let params_s = self.entropy.mem_params(&z_s_hat, &y_b_hat)?;
        let lik_y_s = likelihood(&y_s_hat, &params_s);
        let lik_z_s = self.entropy.prior_s.likelihood(&z_s_hat)?;

        Ok(ForwardPass {
            mode,
            x: x.clone(),
            y_b,
            y_b_hat,
            z_b_hat,
            params_b,
            lik_y_b,
            lik_z_b,
            x_hat_b,
            y_s_prime,
            y_s,
            y_s_hat,
            z_s_hat,
            params_s,
            lik_y_s,
            lik_z_s,
        })
    }

    /// Reconstruction from the basic latent and the first `j` scalable channels.
    pub fn reconstruct(
        &self,
        y_b_hat: &Tensor<T>,
        y_s_hat: &Tensor<T>,
        j: usize,
        clamp: bool,
    ) -> Result<Tensor<T>> {
        let y = Tensor::cat(&[y_b_hat.clone(), channel_select(y_s_hat, j)?], 1);
        let x = self.backbone.decode(&y)?;
        Ok(if clamp { x.clamp(0.0, 1.0) } else { x })
    }
}

impl<T: Float> Params<T> for DeepFgs<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.backbone.params(prefix, out);
        self.entropy
            .params(&crate::nn::join(prefix, "entropy"), out);
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.backbone.params_mut(prefix, out);
        self.entropy
            .params_mut(&crate::nn::join(prefix, "entropy"), out);
    }
}

/// Every intermediate of one encoder-side pass, shared by all loss terms.
pub struct ForwardPass<T: Float> {
    pub mode: Mode,
    pub x: Tensor<T>,
    pub y_b: Tensor<T>,
    pub y_b_hat: Tensor<T>,
    pub z_b_hat: Tensor<T>,
    pub params_b: EntropyParams<T>,
    pub lik_y_b: Tensor<T>,
    pub lik_z_b: Tensor<T>,
    /// Decoder output for `ŷ_b || 0`.
    pub x_hat_b: Tensor<T>,
    pub y_s_prime: Tensor<T>,
    pub y_s: Tensor<T>,
    pub y_s_hat: Tensor<T>,
    pub z_s_hat: Tensor<T>,
    pub params_s: EntropyParams<T>,
    pub lik_y_s: Tensor<T>,
    pub lik_z_s: Tensor<T>,
}

impl<T: Float> ForwardPass<T> {
    /// Source pixels across the batch.
    pub fn pixels(&self) -> usize {
        let [n, _, h, w] = self.x.shape();
        n * h * w
    }

    pub fn c2(&self) -> usize {
        self.y_s.shape()[1]
    }

    /// Bits of `ŷ_b` plus `ẑ_b`.
    pub fn bits_basic(&self) -> Tensor<T> {
        rate(&self.lik_y_b).add(&rate(&self.lik_z_b))
    }

    /// Bits of the first `j` channels of `ŷ_s`, without `ẑ_s`.
    pub fn bits_scalable_prefix(&self, j: usize) -> Result<Tensor<T>> {
        let c2 = self.c2();
        if j > c2 {
            return Err(Error::ChannelRange { j, max: c2 });
        }
        if j == 0 {
            return Ok(Tensor::scalar(T::zero()));
        }
        Ok(rate(&self.lik_y_s.narrow(1, 0, j)))
    }

    pub fn bits_z_s(&self) -> Tensor<T> {
        rate(&self.lik_z_s)
    }

    pub fn reconstruct(&self, model: &DeepFgs<T>, j: usize) -> Result<Tensor<T>> {
        if j == 0 {
            return Ok(self.x_hat_b.clone());
        }
        model.reconstruct(&self.y_b_hat, &self.y_s_hat, j, self.mode == Mode::Infer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fgs_autograd::no_grad;

    fn tiny(c1: usize, c2: usize) -> ModelConfig {
        ModelConfig {
            n_hidden: 8,
            hyper_channels: 4,
            ..ModelConfig::desk(c1, c2)
        }
    }

    fn image(h: usize, w: usize) -> Tensor<f32> {
        let data = (0..3 * h * w)
            .map(|i| ((i * 37) % 101) as f32 / 100.0)
            .collect();
        Tensor::from_vec(data, [1, 3, h, w])
    }

    #[test]
    fn forward_shapes() {
        let model = DeepFgs::<f32>::new(tiny(4, 6)).unwrap();
        let fp = no_grad(|| model.forward(&image(64, 48), Mode::Infer)).unwrap();
        assert_eq!(fp.y_b.shape(), [1, 4, 4, 3]);
        assert_eq!(fp.y_s.shape(), [1, 6, 4, 3]);
        assert_eq!(fp.x_hat_b.shape(), [1, 3, 64, 48]);
        assert_eq!(fp.lik_y_s.shape(), fp.y_s.shape());
        assert!(fp.y_b_hat.data().iter().all(|v| v.fract() == 0.0));
        let full = fp.reconstruct(&model, 6).unwrap();
        assert!(full.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn params_have_unique_names_and_round_trip() {
        let model = DeepFgs::<f32>::new(tiny(4, 6)).unwrap();
        let params = model.named_params();
        let names: std::collections::HashSet<_> = params.iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names.len(), params.len());
        assert!(names.contains("g_d.ffm.mlp0.weight"));
        assert!(names.contains("entropy.mem.context0.weight"));

        let mut other = DeepFgs::<f32>::new(ModelConfig {
            seed: 99,
            ..tiny(4, 6)
        })
        .unwrap();
        let map = params
            .iter()
            .map(|(n, t)| (n.clone(), (t.shape().to_vec(), t.to_vec())))
            .collect();
        other.load_params(&map).unwrap();
        for ((_, a), (_, b)) in model.named_params().iter().zip(other.named_params()) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn the_decoder_is_shared() {
        // gradients of the basic and the full reconstruction land on the
        // same decoder tensors, and there is exactly one decoder
        let model = DeepFgs::<f64>::new(tiny(2, 3)).unwrap();
        let x = image(16, 16).cast::<f64>();
        let fp = model.forward(&x, Mode::Train { seed: 1 }).unwrap();
        let g_basic = fp.x_hat_b.sum_all().backward();
        let g_full = fp.reconstruct(&model, 3).unwrap().sum_all().backward();
        let decoder: Vec<_> = model
            .named_params()
            .into_iter()
            .filter(|(n, _)| n.starts_with("g_d."))
            .collect();
        assert!(!decoder.is_empty());
        for (name, t) in &decoder {
            assert!(g_basic.get(t).is_some(), "{name} unused by basic path");
            assert!(g_full.get(t).is_some(), "{name} unused by full path");
        }
        let decoders = model
            .named_params()
            .iter()
            .filter(|(n, _)| n.ends_with("deconv0.weight") && !n.starts_with("entropy"))
            .count();
        assert_eq!(decoders, 1);
    }

    #[test]
    fn f32_and_f64_models_start_from_the_same_values() {
        let a = DeepFgs::<f32>::new(tiny(2, 3)).unwrap();
        let b = DeepFgs::<f64>::new(tiny(2, 3)).unwrap();
        for ((_, x), (_, y)) in a.named_params().iter().zip(b.named_params()) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert_eq!(*u, *v as f32);
            }
        }
    }
}
