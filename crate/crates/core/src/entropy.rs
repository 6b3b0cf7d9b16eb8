//! Probability models for the quantized latents.
//!
//! `ŷ_b` uses a mean-scale hyperprior. `ŷ_s` uses the mutual entropy model:
//! its hyperprior feature is fused with a context feature computed from
//! `ŷ_b`, never from `ŷ_s` itself, so any channel prefix is decodable.
//! Both hyper-latents use a per-channel factorized prior.

use fgs_autograd::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{join, Conv, Deconv, Params};

pub const SIGMA_MIN: f64 = 0.11;
/// 2^-24.
pub const LIKELIHOOD_FLOOR: f64 = 5.960_464_477_539_063e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive uniform noise on (−½, ½) drawn from a stream seeded by `seed`.
    Noise { seed: u64 },
    /// Nearest integer, ties to even.
    Round,
}

pub fn quantize<T: Float>(y: &Tensor<T>, mode: QuantMode) -> Tensor<T> {
    match mode {
        QuantMode::Noise { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise: Vec<T> = (0..y.numel())
                .map(|_| loop {
                    let u = rng.random::<f64>() - 0.5;
                    if u > -0.5 {
                        break T::from_f64(u);
                    }
                })
                .collect();
            y.add(&Tensor::from_vec(noise, y.shape()))
        }
        QuantMode::Round => Tensor::from_vec(
            y.data()
                .iter()
                // `+ 0.0` turns −0 into +0 so decoded integers compare bitwise
                .map(|v| T::from_f64(v.as_f64().round_ties_even() + 0.0))
                .collect(),
            y.shape(),
        ),
    }
}

/// Per-element Gaussian mean and scale for one latent.
#[derive(Clone, Debug)]
pub struct EntropyParams<T: Float> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

impl<T: Float> EntropyParams<T> {
    /// Splits a `2C`-channel head output into `μ` and a floored `σ`.
    fn from_head(raw: &Tensor<T>) -> Self {
        let c = raw.shape()[1] / 2;
        Self {
            mu: raw.narrow(1, 0, c),
            sigma: raw.narrow(1, c, c).lower_bound(SIGMA_MIN),
        }
    }

    pub fn channel(&self, c: usize) -> Self {
        Self {
            mu: self.mu.narrow(1, c, 1),
            sigma: self.sigma.narrow(1, c, 1),
        }
    }
}

/// Discretized Gaussian probability of each element, floored at 2^-24.
pub fn likelihood<T: Float>(y_hat: &Tensor<T>, params: &EntropyParams<T>) -> Tensor<T> {
    Tensor::gaussian_likelihood(y_hat, &params.mu, &params.sigma, LIKELIHOOD_FLOOR)
}

/// `−Σ log2 p`, as a scalar tensor.
pub fn rate<T: Float>(likelihoods: &Tensor<T>) -> Tensor<T> {
    likelihoods.ln().sum_all().scale(-std::f64::consts::LOG2_E)
}

/// Bits per channel, summed over batch and space.
pub fn channel_bits<T: Float>(likelihoods: &Tensor<T>) -> Vec<f64> {
    let [n, c, h, w] = likelihoods.shape();
    let data = likelihoods.data();
    let mut bits = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in bits.iter_mut().enumerate() {
            let base = (b * c + ch) * h * w;
            *acc -= data[base..base + h * w]
                .iter()
                .map(|p| p.as_f64().log2())
                .sum::<f64>();
        }
    }
    bits
}

/// `3×3 s1 → ReLU → 5×5 s2 → ReLU → 5×5 s2`.
pub struct HyperAnalysis<T: Float> {
    convs: [Conv<T>; 3],
}

impl<T: Float> HyperAnalysis<T> {
    pub fn new<R: Rng>(rng: &mut R, c_in: usize, hyper: usize) -> Self {
        Self {
            convs: [
                Conv::new(rng, c_in, hyper, 3, 1, true),
                Conv::new(rng, hyper, hyper, 5, 2, true),
                Conv::new(rng, hyper, hyper, 5, 2, true),
            ],
        }
    }

    pub fn forward(&self, y: &Tensor<T>) -> Tensor<T> {
        let h = self.convs[0].forward(y).relu();
        let h = self.convs[1].forward(&h).relu();
        self.convs[2].forward(&h)
    }
}

/// Two stride-2 transposed convolutions back to the latent grid, cropped
/// to the latent extent, then a 3×3 convolution. Output is ReLU'd.
pub struct HyperSynthesis<T: Float> {
    up: [Deconv<T>; 2],
    out: Conv<T>,
}

impl<T: Float> HyperSynthesis<T> {
    pub fn new<R: Rng>(rng: &mut R, hyper: usize, hidden: usize) -> Self {
        Self {
            up: [
                Deconv::new(rng, hyper, hidden, 5),
                Deconv::new(rng, hidden, hidden, 5),
            ],
            out: Conv::new(rng, hidden, hidden, 3, 1, true),
        }
    }

    pub fn forward(&self, z_hat: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        let u = self.up[0].forward(z_hat).relu();
        let u = self.up[1].forward(&u).relu();
        let [_, _, uh, uw] = u.shape();
        if uh < h || uw < w {
            return Err(Error::Shape(format!(
                "hyper-latent {:?} too small for a {h}×{w} latent",
                z_hat.shape()
            )));
        }
        let u = if (uh, uw) == (h, w) {
            u
        } else {
            u.narrow(2, 0, h).narrow(3, 0, w)
        };
        Ok(self.out.forward(&u).relu())
    }
}

/// Two 1×1 convolutions emitting `μ || σ_raw`.
pub struct ParamHead<T: Float> {
    l0: Conv<T>,
    l1: Conv<T>,
}

impl<T: Float> ParamHead<T> {
    pub fn new<R: Rng>(rng: &mut R, c_in: usize, hidden: usize, latent: usize) -> Self {
        Self {
            l0: Conv::new(rng, c_in, hidden, 1, 1, true),
            l1: Conv::new(rng, hidden, 2 * latent, 1, 1, true),
        }
    }

    pub fn forward(&self, feature: &Tensor<T>) -> EntropyParams<T> {
        EntropyParams::from_head(&self.l1.forward(&self.l0.forward(feature).relu()))
    }
}

/// Learned context feature of `ŷ_b`: two 3×3 stride-1 convolutions.
pub struct ContextExtractor<T: Float> {
    c0: Conv<T>,
    c1: Conv<T>,
}

impl<T: Float> ContextExtractor<T> {
    pub fn new<R: Rng>(rng: &mut R, c1: usize, hidden: usize) -> Self {
        Self {
            c0: Conv::new(rng, c1, hidden, 3, 1, true),
            c1: Conv::new(rng, hidden, hidden, 3, 1, true),
        }
    }

    pub fn forward(&self, y_b_hat: &Tensor<T>) -> Tensor<T> {
        self.c1.forward(&self.c0.forward(y_b_hat).relu()).relu()
    }
}

const PRIOR_FILTERS: [usize; 5] = [1, 3, 3, 3, 1];
const PRIOR_INIT_SCALE: f64 = 10.0;

/// Per-channel monotone CDF `sigmoid(f_c(v))` where `f_c` is a chain of
/// nonnegative-weight affine maps with `tanh` corrections.
pub struct FactorizedPrior<T: Float> {
    channels: usize,
    /// `[C, f_out, f_in, 1]`, passed through softplus.
    matrices: Vec<Tensor<T>>,
    /// `[C, f_out, 1, 1]`.
    biases: Vec<Tensor<T>>,
    /// `[C, f_out, 1, 1]`, passed through tanh.
    factors: Vec<Tensor<T>>,
}

impl<T: Float> FactorizedPrior<T> {
    /// Starts as an odd map (zero biases and factors) so the initial prior
    /// is symmetric about zero; small weight jitter breaks filter symmetry.
    pub fn new<R: Rng>(rng: &mut R, channels: usize) -> Self {
        let layers = PRIOR_FILTERS.len() - 1;
        let scale = PRIOR_INIT_SCALE.powf(1.0 / layers as f64);
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for k in 0..layers {
            let (f_in, f_out) = (PRIOR_FILTERS[k], PRIOR_FILTERS[k + 1]);
            let base = (1.0 / scale / f_out as f64).exp_m1().ln();
            let m = (0..channels * f_out * f_in)
                .map(|_| T::from_f64(base + rng.random_range(-0.01..0.01)))
                .collect();
            matrices.push(Tensor::param(m, [channels, f_out, f_in, 1]));
            biases.push(Tensor::param(
                vec![T::zero(); channels * f_out],
                [channels, f_out, 1, 1],
            ));
            if k + 1 < layers {
                factors.push(Tensor::param(
                    vec![T::zero(); channels * f_out],
                    [channels, f_out, 1, 1],
                ));
            }
        }
        Self {
            channels,
            matrices,
            biases,
            factors,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Logits for `x` laid out as `[C, 1, 1, M]`.
    fn logits(&self, x: &Tensor<T>) -> Tensor<T> {
        let m = x.shape()[3];
        let mut h = x.clone();
        for k in 0..self.matrices.len() {
            let f_out = PRIOR_FILTERS[k + 1];
            // [C,1,f_in,M] × [C,f_out,f_in,1] summed over f_in
            h = h
                .mul(&self.matrices[k].softplus())
                .sum_axes([false, false, true, false])
                .add(&self.biases[k]);
            if let Some(a) = self.factors.get(k) {
                h = h.add(&a.tanh().mul(&h.tanh()));
            }
            h = h.reshape([self.channels, 1, f_out, m]);
        }
        h
    }

    /// Probability of each integer-valued element of `z_hat` (`N×C×h×w`).
    pub fn likelihood(&self, z_hat: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = z_hat.shape();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "factorized prior has {} channels, hyper-latent has {c}",
                self.channels
            )));
        }
        let m = n * h * w;
        let flat = z_hat.permute([1, 0, 2, 3]).reshape([c, 1, 1, m]);
        let both = Tensor::cat(&[flat.add_scalar(0.5), flat.add_scalar(-0.5)], 3);
        let logits = self.logits(&both);
        let (upper, lower) = (logits.narrow(3, 0, m), logits.narrow(3, m, m));
        // evaluate on the side of the median where sigmoid is least saturated
        let sign: Vec<T> = upper
            .data()
            .iter()
            .zip(lower.data())
            .map(|(&u, &l)| {
                if u + l > T::zero() {
                    -T::one()
                } else {
                    T::one()
                }
            })
            .collect();
        let sign = Tensor::from_vec(sign, [c, 1, 1, m]);
        let p = upper
            .mul(&sign)
            .sigmoid()
            .sub(&lower.mul(&sign).sigmoid())
            .abs()
            .lower_bound(LIKELIHOOD_FLOOR);
        Ok(p.reshape([c, n, h, w]).permute([1, 0, 2, 3]))
    }

    /// Scalar CDF logit for one channel, in f64, straight from the stored
    /// parameters. Used to build coding tables.
    pub fn logit_f64(&self, channel: usize, x: f64) -> f64 {
        let mut h = vec![x];
        for k in 0..self.matrices.len() {
            let (f_in, f_out) = (PRIOR_FILTERS[k], PRIOR_FILTERS[k + 1]);
            let m = self.matrices[k].data();
            let b = self.biases[k].data();
            let mut next = vec![0.0; f_out];
            for (o, v) in next.iter_mut().enumerate() {
                let row = (channel * f_out + o) * f_in;
                *v = (0..f_in)
                    .map(|i| fgs_autograd::softplus(m[row + i]).as_f64() * h[i])
                    .sum::<f64>()
                    + b[channel * f_out + o].as_f64();
            }
            if let Some(a) = self.factors.get(k) {
                let a = a.data();
                for (o, v) in next.iter_mut().enumerate() {
                    *v += a[channel * f_out + o].as_f64().tanh() * v.tanh();
                }
            }
            h = next;
        }
        h[0]
    }

    pub fn cdf_f64(&self, channel: usize, x: f64) -> f64 {
        1.0 / (1.0 + (-self.logit_f64(channel, x)).exp())
    }
}

impl<T: Float> Params<T> for FactorizedPrior<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for k in 0..self.matrices.len() {
            out.push((
                join(prefix, &format!("matrix{k}")),
                self.matrices[k].clone(),
            ));
            out.push((join(prefix, &format!("bias{k}")), self.biases[k].clone()));
            if let Some(a) = self.factors.get(k) {
                out.push((join(prefix, &format!("factor{k}")), a.clone()));
            }
        }
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        let mut factors = self.factors.iter_mut();
        for (k, (m, b)) in self
            .matrices
            .iter_mut()
            .zip(self.biases.iter_mut())
            .enumerate()
        {
            out.push((join(prefix, &format!("matrix{k}")), m));
            out.push((join(prefix, &format!("bias{k}")), b));
            if let Some(a) = factors.next() {
                out.push((join(prefix, &format!("factor{k}")), a));
            }
        }
    }
}

/// All entropy-model parameters.
pub struct EntropyModel<T: Float> {
    pub hyper_a_b: HyperAnalysis<T>,
    pub hyper_s_b: HyperSynthesis<T>,
    pub head_b: ParamHead<T>,
    pub prior_b: FactorizedPrior<T>,
    pub hyper_a_s: HyperAnalysis<T>,
    pub hyper_s_s: HyperSynthesis<T>,
    /// `None` when MEM is disabled.
    pub context: Option<ContextExtractor<T>>,
    pub head_s: ParamHead<T>,
    pub prior_s: FactorizedPrior<T>,
}

impl<T: Float> EntropyModel<T> {
    pub fn new<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        let (n, hc) = (cfg.n_hidden, cfg.hyper_channels);
        let context = cfg.use_mem.then(|| ContextExtractor::new(rng, cfg.c1, n));
        let head_in = if cfg.use_mem { 2 * n } else { n };
        Self {
            hyper_a_b: HyperAnalysis::new(rng, cfg.c1, hc),
            hyper_s_b: HyperSynthesis::new(rng, hc, n),
            head_b: ParamHead::new(rng, n, n, cfg.c1),
            prior_b: FactorizedPrior::new(rng, hc),
            hyper_a_s: HyperAnalysis::new(rng, cfg.c2, hc),
            hyper_s_s: HyperSynthesis::new(rng, hc, n),
            context,
            head_s: ParamHead::new(rng, head_in, n, cfg.c2),
            prior_s: FactorizedPrior::new(rng, hc),
        }
    }

    pub fn hyper_encode_b(&self, y_b: &Tensor<T>) -> Tensor<T> {
        self.hyper_a_b.forward(y_b)
    }

    pub fn hyper_encode_s(&self, y_s: &Tensor<T>) -> Tensor<T> {
        self.hyper_a_s.forward(y_s)
    }

    /// Parameters for `ŷ_b` on an `h×w` latent grid.
    pub fn hyper_decode_b(
        &self,
        z_b_hat: &Tensor<T>,
        h: usize,
        w: usize,
    ) -> Result<EntropyParams<T>> {
        Ok(self.head_b.forward(&self.hyper_s_b.forward(z_b_hat, h, w)?))
    }

    /// Parameters for `ŷ_s` from `ẑ_s` and the decoded `ŷ_b`. With MEM
    /// disabled `ŷ_b` is ignored.
    pub fn mem_params(&self, z_s_hat: &Tensor<T>, y_b_hat: &Tensor<T>) -> Result<EntropyParams<T>> {
        let [_, _, h, w] = y_b_hat.shape();
        let hyper = self.hyper_s_s.forward(z_s_hat, h, w)?;
        let feature = match &self.context {
            Some(ctx) => Tensor::cat(&[hyper, ctx.forward(y_b_hat)], 1),
            None => hyper,
        };
        Ok(self.head_s.forward(&feature))
    }
}

impl<T: Float> Params<T> for EntropyModel<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        let conv = |c: &Conv<T>, name: &str, out: &mut Vec<(String, Tensor<T>)>| {
            c.params(&join(prefix, name), out)
        };
        for (i, c) in self.hyper_a_b.convs.iter().enumerate() {
            conv(c, &format!("h_a_b.conv{i}"), out);
        }
        for (i, d) in self.hyper_s_b.up.iter().enumerate() {
            d.params(&join(prefix, &format!("h_s_b.deconv{i}")), out);
        }
        conv(&self.hyper_s_b.out, "h_s_b.conv", out);
        conv(&self.head_b.l0, "head_b.conv0", out);
        conv(&self.head_b.l1, "head_b.conv1", out);
        self.prior_b.params(&join(prefix, "prior_b"), out);
        for (i, c) in self.hyper_a_s.convs.iter().enumerate() {
            conv(c, &format!("h_a_s.conv{i}"), out);
        }
        for (i, d) in self.hyper_s_s.up.iter().enumerate() {
            d.params(&join(prefix, &format!("h_s_s.deconv{i}")), out);
        }
        conv(&self.hyper_s_s.out, "h_s_s.conv", out);
        if let Some(ctx) = &self.context {
            conv(&ctx.c0, "mem.context0", out);
            conv(&ctx.c1, "mem.context1", out);
        }
        conv(&self.head_s.l0, "head_s.conv0", out);
        conv(&self.head_s.l1, "head_s.conv1", out);
        self.prior_s.params(&join(prefix, "prior_s"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        let p = |name: &str| join(prefix, name);
        for (i, c) in self.hyper_a_b.convs.iter_mut().enumerate() {
            c.params_mut(&p(&format!("h_a_b.conv{i}")), out);
        }
        for (i, d) in self.hyper_s_b.up.iter_mut().enumerate() {
            d.params_mut(&p(&format!("h_s_b.deconv{i}")), out);
        }
        self.hyper_s_b.out.params_mut(&p("h_s_b.conv"), out);
        self.head_b.l0.params_mut(&p("head_b.conv0"), out);
        self.head_b.l1.params_mut(&p("head_b.conv1"), out);
        self.prior_b.params_mut(&p("prior_b"), out);
        for (i, c) in self.hyper_a_s.convs.iter_mut().enumerate() {
            c.params_mut(&p(&format!("h_a_s.conv{i}")), out);
        }
        for (i, d) in self.hyper_s_s.up.iter_mut().enumerate() {
            d.params_mut(&p(&format!("h_s_s.deconv{i}")), out);
        }
        self.hyper_s_s.out.params_mut(&p("h_s_s.conv"), out);
        if let Some(ctx) = &mut self.context {
            ctx.c0.params_mut(&p("mem.context0"), out);
            ctx.c1.params_mut(&p("mem.context1"), out);
        }
        self.head_s.l0.params_mut(&p("head_s.conv0"), out);
        self.head_s.l1.params_mut(&p("head_s.conv1"), out);
        self.prior_s.params_mut(&p("prior_s"), out);
    }
}

/// Enforces the decode order `ẑ_b → ŷ_b → ẑ_s → ŷ_s`.
pub struct DecodeSession<'m, T: Float> {
    model: &'m EntropyModel<T>,
    latent_hw: (usize, usize),
    y_b_hat: Option<Tensor<T>>,
}

impl<'m, T: Float> DecodeSession<'m, T> {
    pub fn new(model: &'m EntropyModel<T>, latent_h: usize, latent_w: usize) -> Self {
        Self {
            model,
            latent_hw: (latent_h, latent_w),
            y_b_hat: None,
        }
    }

    pub fn basic_params(&self, z_b_hat: &Tensor<T>) -> Result<EntropyParams<T>> {
        self.model
            .hyper_decode_b(z_b_hat, self.latent_hw.0, self.latent_hw.1)
    }

    pub fn set_basic(&mut self, y_b_hat: Tensor<T>) -> Result<()> {
        let [_, _, h, w] = y_b_hat.shape();
        if (h, w) != self.latent_hw {
            return Err(Error::Shape(format!(
                "decoded basic latent is {h}×{w}, session expects {:?}",
                self.latent_hw
            )));
        }
        self.y_b_hat = Some(y_b_hat);
        Ok(())
    }

    pub fn basic(&self) -> Option<&Tensor<T>> {
        self.y_b_hat.as_ref()
    }

    pub fn scalable_params(&self, z_s_hat: &Tensor<T>) -> Result<EntropyParams<T>> {
        let y_b = self.y_b_hat.as_ref().ok_or(Error::OrderingViolation)?;
        self.model.mem_params(z_s_hat, y_b)
    }
}
