//! Feature-separation backbone: the basic and scalable analysis transforms,
//! the residual fusion in front of the scalable encoder, the cross-guided
//! gate (FRR), and the shared synthesis transform with its self-guided
//! fusion gate (FFM).

use fgs_autograd::{Float, Tensor};
use rand::Rng;

use crate::config::{ModelConfig, DOWNSAMPLE};
use crate::error::{Error, Result};
use crate::nn::{join, Conv, Deconv, Gdn, Params};

/// A batch of RGB images in `[0, 1]`, `N×3×H×W`, `H` and `W` multiples of 16.
#[derive(Clone, Debug)]
pub struct ImageBatch<T: Float>(Tensor<T>);

impl<T: Float> ImageBatch<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        let [_, c, h, w] = data.shape();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 colour channels, got {c}")));
        }
        check_spatial(h, w)?;
        if let Some(v) = data
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self(data))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }
}

fn check_spatial(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(DOWNSAMPLE) || !w.is_multiple_of(DOWNSAMPLE) {
        return Err(Error::Shape(format!(
            "image {h}×{w} is not a positive multiple of {DOWNSAMPLE} in both dimensions"
        )));
    }
    Ok(())
}

/// Basic and scalable latents at 1/16 resolution.
#[derive(Clone, Debug)]
pub struct LatentPair<T: Float> {
    pub y_b: Tensor<T>,
    pub y_s: Tensor<T>,
    /// Leading scalable channels that carry data; the rest are zero.
    pub j_available: usize,
}

impl<T: Float> LatentPair<T> {
    pub fn new(y_b: Tensor<T>, y_s: Tensor<T>) -> Self {
        let j_available = y_s.shape()[1];
        Self {
            y_b,
            y_s,
            j_available,
        }
    }

    /// Keeps the first `j` scalable channels.
    pub fn select(&self, j: usize) -> Result<Self> {
        Ok(Self {
            y_b: self.y_b.clone(),
            y_s: channel_select(&self.y_s, j)?,
            j_available: j.min(self.j_available),
        })
    }

    /// `y_b || y_s`, the fixed-width decoder input.
    pub fn concat(&self) -> Tensor<T> {
        Tensor::cat(&[self.y_b.clone(), self.y_s.clone()], 1)
    }
}

/// Zeroes every scalable channel after the first `j`.
pub fn channel_select<T: Float>(y_s: &Tensor<T>, j: usize) -> Result<Tensor<T>> {
    let [n, c2, h, w] = y_s.shape();
    if j > c2 {
        return Err(Error::ChannelRange { j, max: c2 });
    }
    if j == c2 {
        return Ok(y_s.clone());
    }
    let zeros = Tensor::zeros([n, c2 - j, h, w]);
    if j == 0 {
        return Ok(zeros);
    }
    Ok(Tensor::cat(&[y_s.narrow(1, 0, j), zeros], 1))
}

/// Four stride-2 5×5 convolutions with GDN between them.
pub struct AnalysisTransform<T: Float> {
    convs: Vec<Conv<T>>,
    gdns: Vec<Gdn<T>>,
}

impl<T: Float> AnalysisTransform<T> {
    pub fn new<R: Rng>(rng: &mut R, c_in: usize, hidden: usize, c_out: usize) -> Self {
        let widths = [c_in, hidden, hidden, hidden, c_out];
        let convs = (0..4)
            .map(|i| Conv::new(rng, widths[i], widths[i + 1], 5, 2, true))
            .collect();
        let gdns = (0..3).map(|_| Gdn::new(hidden, false)).collect();
        Self { convs, gdns }
    }

    pub fn out_channels(&self) -> usize {
        self.convs[3].weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.shape();
        let expect = self.convs[0].weight.shape()[1];
        if c != expect {
            return Err(Error::Shape(format!(
                "analysis expects {expect} channels, got {c}"
            )));
        }
        check_spatial(h, w)?;
        let mut y = x.clone();
        for i in 0..4 {
            y = self.convs[i].forward(&y);
            if i < 3 {
                y = self.gdns[i].forward(&y);
            }
        }
        Ok(y)
    }
}

impl<T: Float> Params<T> for AnalysisTransform<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.params(&join(prefix, &format!("conv{i}")), out);
            if let Some(g) = self.gdns.get(i) {
                g.params(&join(prefix, &format!("gdn{i}")), out);
            }
        }
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        let mut gdns = self.gdns.iter_mut();
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.params_mut(&join(prefix, &format!("conv{i}")), out);
            if let Some(g) = gdns.next() {
                g.params_mut(&join(prefix, &format!("gdn{i}")), out);
            }
        }
    }
}

/// Learned residual operator on `x || x̂_b` (3×3, 6 → 3, no bias).
///
/// The two halves of the kernel are applied separately, which is the same
/// linear map as one convolution over the concatenation; initialised
/// antisymmetric so it starts out as a learned difference `x − x̂_b`.
pub struct ResidualFusion<T: Float> {
    pub conv: Conv<T>,
}

impl<T: Float> ResidualFusion<T> {
    pub fn new<R: Rng>(rng: &mut R) -> Self {
        let mut conv = Conv::<T>::new(rng, 6, 3, 3, 1, false);
        let mut w = conv.weight.to_vec();
        for o in 0..3 {
            for i in 0..3 {
                for k in 0..9 {
                    w[(o * 6 + 3 + i) * 9 + k] = -w[(o * 6 + i) * 9 + k];
                }
            }
        }
        conv.weight = Tensor::param(w, [3, 6, 3, 3]);
        Self { conv }
    }

    pub fn forward(&self, x: &Tensor<T>, x_hat_b: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != x_hat_b.shape() {
            return Err(Error::Shape(format!(
                "image {:?} and basic reconstruction {:?} differ",
                x.shape(),
                x_hat_b.shape()
            )));
        }
        let w = &self.conv.weight;
        let on_x = x.conv2d(&w.narrow(1, 0, 3), None, self.conv.geom);
        let on_b = x_hat_b.conv2d(&w.narrow(1, 3, 3), None, self.conv.geom);
        Ok(on_x.add(&on_b))
    }
}

impl<T: Float> Params<T> for ResidualFusion<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv.params(&join(prefix, "conv"), out);
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv.params_mut(&join(prefix, "conv"), out);
    }
}

/// Width of the squeeze-excite bottleneck in the spatial gate branch.
const SPATIAL_GATE_WIDTH: usize = 8;

/// Channel-and-spatial sigmoid gate computed from a guide tensor.
///
/// The channel branch averages the guide over space and runs a two-layer
/// MLP; the spatial branch averages over channels and runs a 1→8→1 pair of
/// 3×3 convolutions. Used cross-guided for FRR and self-guided for FFM.
pub struct Gate<T: Float> {
    mlp0: Conv<T>,
    mlp1: Conv<T>,
    st0: Conv<T>,
    st1: Conv<T>,
}

impl<T: Float> Gate<T> {
    pub fn new<R: Rng>(rng: &mut R, guide_channels: usize, target_channels: usize) -> Self {
        Self {
            mlp0: Conv::new(rng, guide_channels, target_channels, 1, 1, true),
            mlp1: Conv::new(rng, target_channels, target_channels, 1, 1, true),
            st0: Conv::new(rng, 1, SPATIAL_GATE_WIDTH, 3, 1, true),
            st1: Conv::new(rng, SPATIAL_GATE_WIDTH, 1, 3, 1, true),
        }
    }

    pub fn guide_channels(&self) -> usize {
        self.mlp0.weight.shape()[1]
    }

    pub fn target_channels(&self) -> usize {
        self.mlp0.weight.shape()[0]
    }

    /// Channel gate `N×C×1×1` and spatial gate `N×1×h×w`, both in (0, 1).
    pub fn gates(&self, guide: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let pooled = guide.mean_axes([false, false, true, true]);
        let channel = self
            .mlp1
            .forward(&self.mlp0.forward(&pooled).relu())
            .sigmoid();
        let plane = guide.mean_axes([false, true, false, false]);
        let spatial = self.st1.forward(&self.st0.forward(&plane).relu()).sigmoid();
        (channel, spatial)
    }

    pub fn forward(&self, target: &Tensor<T>, guide: &Tensor<T>) -> Result<Tensor<T>> {
        let [tn, tc, th, tw] = target.shape();
        let [gn, gc, gh, gw] = guide.shape();
        if (tn, th, tw) != (gn, gh, gw) {
            return Err(Error::Shape(format!(
                "gate target {:?} and guide {:?} disagree",
                target.shape(),
                guide.shape()
            )));
        }
        if tc != self.target_channels() || gc != self.guide_channels() {
            return Err(Error::Shape(format!(
                "gate built for {}→{} channels, got guide {gc} target {tc}",
                self.guide_channels(),
                self.target_channels()
            )));
        }
        let (channel, spatial) = self.gates(guide);
        Ok(apply_gates(target, &channel, &spatial))
    }
}

/// `target ⊗ channel ⊗ spatial`.
pub fn apply_gates<T: Float>(
    target: &Tensor<T>,
    channel: &Tensor<T>,
    spatial: &Tensor<T>,
) -> Tensor<T> {
    target.mul(channel).mul(spatial)
}

impl<T: Float> Params<T> for Gate<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.mlp0.params(&join(prefix, "mlp0"), out);
        self.mlp1.params(&join(prefix, "mlp1"), out);
        self.st0.params(&join(prefix, "st0"), out);
        self.st1.params(&join(prefix, "st1"), out);
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.mlp0.params_mut(&join(prefix, "mlp0"), out);
        self.mlp1.params_mut(&join(prefix, "mlp1"), out);
        self.st0.params_mut(&join(prefix, "st0"), out);
        self.st1.params_mut(&join(prefix, "st1"), out);
    }
}

/// Cross-guided redundancy reduction: gates `y_s′` by statistics of `y_b`.
/// Identity when disabled.
pub fn frr<T: Float>(
    gate: Option<&Gate<T>>,
    y_s_prime: &Tensor<T>,
    y_b: &Tensor<T>,
) -> Result<Tensor<T>> {
    match gate {
        Some(g) => g.forward(y_s_prime, y_b),
        None => {
            let (a, b) = (y_s_prime.shape(), y_b.shape());
            if a[0] != b[0] || a[2..] != b[2..] {
                return Err(Error::Shape(format!("FRR inputs {a:?} and {b:?} disagree")));
            }
            Ok(y_s_prime.clone())
        }
    }
}

/// The shared decoder: optional FFM gate followed by four stride-2
/// transposed convolutions with inverse GDN between them.
pub struct SynthesisTransform<T: Float> {
    pub ffm: Option<Gate<T>>,
    deconvs: Vec<Deconv<T>>,
    igdns: Vec<Gdn<T>>,
    in_channels: usize,
}

impl<T: Float> SynthesisTransform<T> {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, hidden: usize, use_ffm: bool) -> Self {
        let ffm = use_ffm.then(|| Gate::new(rng, in_channels, in_channels));
        let widths = [in_channels, hidden, hidden, hidden, 3];
        let deconvs = (0..4)
            .map(|i| Deconv::new(rng, widths[i], widths[i + 1], 5))
            .collect();
        let igdns = (0..3).map(|_| Gdn::new(hidden, true)).collect();
        Self {
            ffm,
            deconvs,
            igdns,
            in_channels,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// FFM output (identity without FFM).
    pub fn fuse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let c = y.shape()[1];
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "decoder expects {} latent channels, got {c}",
                self.in_channels
            )));
        }
        match &self.ffm {
            Some(g) => g.forward(y, y),
            None => Ok(y.clone()),
        }
    }

    /// Unclamped reconstruction (training graph).
    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.fuse(y)?;
        for i in 0..4 {
            h = self.deconvs[i].forward(&h);
            if i < 3 {
                h = self.igdns[i].forward(&h);
            }
        }
        Ok(h)
    }

    /// Reconstruction clamped to `[0, 1]`.
    pub fn reconstruct(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(y)?.clamp(0.0, 1.0))
    }
}

impl<T: Float> Params<T> for SynthesisTransform<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        if let Some(g) = &self.ffm {
            g.params(&join(prefix, "ffm"), out);
        }
        for (i, d) in self.deconvs.iter().enumerate() {
            d.params(&join(prefix, &format!("deconv{i}")), out);
            if let Some(g) = self.igdns.get(i) {
                g.params(&join(prefix, &format!("igdn{i}")), out);
            }
        }
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        if let Some(g) = &mut self.ffm {
            g.params_mut(&join(prefix, "ffm"), out);
        }
        let mut igdns = self.igdns.iter_mut();
        for (i, d) in self.deconvs.iter_mut().enumerate() {
            d.params_mut(&join(prefix, &format!("deconv{i}")), out);
            if let Some(g) = igdns.next() {
                g.params_mut(&join(prefix, &format!("igdn{i}")), out);
            }
        }
    }
}

/// The four trainable parts of the backbone.
pub struct Backbone<T: Float> {
    pub g_b: AnalysisTransform<T>,
    pub g_s: AnalysisTransform<T>,
    pub f_conv: ResidualFusion<T>,
    pub frr: Option<Gate<T>>,
    pub g_d: SynthesisTransform<T>,
}

impl<T: Float> Backbone<T> {
    pub fn new<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        let c2 = cfg.c2;
        Self {
            g_b: AnalysisTransform::new(rng, 3, cfg.n_hidden, cfg.c1),
            g_s: AnalysisTransform::new(rng, 3, cfg.n_hidden, c2),
            f_conv: ResidualFusion::new(rng),
            frr: cfg.use_frr.then(|| Gate::new(rng, cfg.c1, c2)),
            g_d: SynthesisTransform::new(rng, cfg.c1 + cfg.c2, cfg.n_hidden, cfg.use_ffm),
        }
    }

    pub fn encode_basic(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.g_b.forward(x)
    }

    /// `g_s(F_conv(x || x̂_b))`, before FRR.
    pub fn encode_scalable(&self, x: &Tensor<T>, x_hat_b: &Tensor<T>) -> Result<Tensor<T>> {
        let fused = self.f_conv.forward(x, x_hat_b)?;
        self.g_s.forward(&fused)
    }

    pub fn frr(&self, y_s_prime: &Tensor<T>, y_b: &Tensor<T>) -> Result<Tensor<T>> {
        frr(self.frr.as_ref(), y_s_prime, y_b)
    }

    /// Decoder input for the basic layer alone: `y_b || 0`.
    pub fn basic_input(&self, y_b: &Tensor<T>) -> Tensor<T> {
        let [n, _, h, w] = y_b.shape();
        let c2 = self.g_d.in_channels() - y_b.shape()[1];
        if c2 == 0 {
            return y_b.clone();
        }
        Tensor::cat(&[y_b.clone(), Tensor::zeros([n, c2, h, w])], 1)
    }

    pub fn decode(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.g_d.forward(y)
    }
}

impl<T: Float> Params<T> for Backbone<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.g_b.params(&join(prefix, "g_b"), out);
        self.g_s.params(&join(prefix, "g_s"), out);
        self.f_conv.params(&join(prefix, "f_conv"), out);
        if let Some(g) = &self.frr {
            g.params(&join(prefix, "frr"), out);
        }
        self.g_d.params(&join(prefix, "g_d"), out);
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.g_b.params_mut(&join(prefix, "g_b"), out);
        self.g_s.params_mut(&join(prefix, "g_s"), out);
        self.f_conv.params_mut(&join(prefix, "f_conv"), out);
        if let Some(g) = &mut self.frr {
            g.params_mut(&join(prefix, "frr"), out);
        }
        self.g_d.params_mut(&join(prefix, "g_d"), out);
    }
}
