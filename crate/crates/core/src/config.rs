//! Model configuration and the ablation flag matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total spatial downsampling of the analysis transforms (four stride-2 stages).
pub const DOWNSAMPLE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Mse,
    MsSsim,
}

impl Metric {
    /// Default rate–distortion tradeoff for the metric.
    pub fn default_lambda(self) -> f64 {
        match self {
            Metric::Mse => 0.002,
            Metric::MsSsim => 7.0,
        }
    }
}

/// How the distortion weight `w(i)` treats the first group of channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `floor(i / d)`: channel counts below `d` carry no distortion weight.
    Floor,
    /// `max(1, floor(i / d))`.
    Clamped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Basic latent channels.
    pub c1: usize,
    /// Scalable latent channels.
    pub c2: usize,
    /// Internal convolution width.
    pub n_hidden: usize,
    pub hyper_channels: usize,
    pub downsample_factor: usize,
    /// Channel group size `d` of the distortion weight.
    pub group_size: usize,
    pub lambda: f64,
    pub metric: Metric,
    pub weight_mode: WeightMode,
    /// Adds `λ·D(x, x̂_b)` to every scalable training step.
    pub include_basic_distortion: bool,
    pub use_frr: bool,
    pub use_ffm: bool,
    pub use_mem: bool,
    /// Non-scalable baseline: same layers, always trained on the full-width path.
    pub single_rate: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(32, 32)
    }
}

impl ModelConfig {
    /// Desk-scale configuration with the given latent widths.
    pub fn desk(c1: usize, c2: usize) -> Self {
        Self {
            c1,
            c2,
            n_hidden: 64,
            hyper_channels: 32,
            downsample_factor: DOWNSAMPLE,
            group_size: Self::default_group_size(c2),
            lambda: Metric::Mse.default_lambda(),
            metric: Metric::Mse,
            weight_mode: WeightMode::Floor,
            include_basic_distortion: true,
            use_frr: true,
            use_ffm: true,
            use_mem: true,
            single_rate: false,
            seed: 7,
        }
    }

    /// Layer sizes of the published model (192 + 192 channels).
    pub fn full_scale() -> Self {
        Self {
            n_hidden: 192,
            hyper_channels: 192,
            ..Self::desk(192, 192)
        }
    }

    /// Keeps 24 channel groups regardless of width; exactly 8 at `c2 = 192`.
    pub fn default_group_size(c2: usize) -> usize {
        ((c2 as f64 / 24.0).round() as usize).max(1)
    }

    pub fn total_channels(&self) -> usize {
        self.c1 + self.c2
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.c1 == 0 {
            return fail("c1 must be at least 1".into());
        }
        if self.c2 == 0 {
            return fail("c2 must be at least 1".into());
        }
        if self.n_hidden == 0 || self.hyper_channels == 0 {
            return fail("n_hidden and hyper_channels must be positive".into());
        }
        if self.downsample_factor != DOWNSAMPLE {
            return fail(format!("downsample_factor must be {DOWNSAMPLE}"));
        }
        if self.group_size == 0 || self.group_size > self.c2 {
            return fail(format!(
                "group_size {} must lie in [1, c2 = {}]",
                self.group_size, self.c2
            ));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return fail("lambda must be positive".into());
        }
        Ok(())
    }

    /// Applies the FRR/FFM/MEM toggles of an ablation case.
    pub fn with_ablation(mut self, case: AblationCase) -> Self {
        let (frr, ffm, mem) = case.flags();
        self.use_frr = frr;
        self.use_ffm = ffm;
        self.use_mem = mem;
        self
    }
}

/// The seven module combinations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationCase {
    Case1,
    Case2,
    Case3,
    Case4,
    Case5,
    Case6,
    Case7,
}

impl AblationCase {
    pub const ALL: [AblationCase; 7] = [
        AblationCase::Case1,
        AblationCase::Case2,
        AblationCase::Case3,
        AblationCase::Case4,
        AblationCase::Case5,
        AblationCase::Case6,
        AblationCase::Case7,
    ];

    /// `(use_frr, use_ffm, use_mem)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            AblationCase::Case1 => (true, true, true),
            AblationCase::Case2 => (true, true, false),
            AblationCase::Case3 => (true, false, true),
            AblationCase::Case4 => (true, false, false),
            AblationCase::Case5 => (false, true, false),
            AblationCase::Case6 => (false, false, true),
            AblationCase::Case7 => (false, false, false),
        }
    }
}
