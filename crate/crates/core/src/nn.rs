//! Parameterised layers shared by the transforms and entropy models.

use fgs_autograd::{ConvGeom, Float, Tensor};
use rand::Rng;

/// Named access to trainable tensors, used by the optimizer and checkpoints.
pub trait Params<T: Float> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform<T: Float, R: Rng>(rng: &mut R, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect()
}

/// Square-kernel convolution with bias.
pub struct Conv<T: Float> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geom: ConvGeom,
}

impl<T: Float> Conv<T> {
    pub fn new<R: Rng>(
        rng: &mut R,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::param(
            uniform(rng, c_out * fan_in, bound),
            [c_out, c_in, kernel, kernel],
        );
        let bias = bias.then(|| Tensor::param(uniform(rng, c_out, bound), [c_out, 1, 1, 1]));
        Self {
            weight,
            bias,
            geom: ConvGeom::new(kernel, stride, kernel / 2),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.geom)
    }
}

impl<T: Float> Params<T> for Conv<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

/// Stride-2 transposed convolution that exactly doubles the spatial extent.
pub struct Deconv<T: Float> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geom: ConvGeom,
}

impl<T: Float> Deconv<T> {
    pub fn new<R: Rng>(rng: &mut R, c_in: usize, c_out: usize, kernel: usize) -> Self {
        let fan_in = c_out * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Tensor::param(
                uniform(rng, c_in * fan_in, bound),
                [c_in, c_out, kernel, kernel],
            ),
            bias: Tensor::param(uniform(rng, c_out, bound), [c_out, 1, 1, 1]),
            geom: ConvGeom::new(kernel, 2, kernel / 2),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv_transpose2d(&self.weight, Some(&self.bias), self.geom, 1)
    }
}

impl<T: Float> Params<T> for Deconv<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Generalized divisive normalization, `x / sqrt(β + Γ x²)` or its inverse
/// `x · sqrt(β + Γ x²)`.
///
/// β and Γ are stored as square roots so both stay nonnegative.
pub struct Gdn<T: Float> {
    pub beta_root: Tensor<T>,
    pub gamma_root: Tensor<T>,
    pub inverse: bool,
}

const GDN_BETA_FLOOR: f64 = 1e-6;

impl<T: Float> Gdn<T> {
    pub fn new(channels: usize, inverse: bool) -> Self {
        let mut gamma = vec![T::zero(); channels * channels];
        for c in 0..channels {
            gamma[c * channels + c] = T::from_f64(0.1f64.sqrt());
        }
        Self {
            beta_root: Tensor::param(vec![T::one(); channels], [channels, 1, 1, 1]),
            gamma_root: Tensor::param(gamma, [channels, channels, 1, 1]),
            inverse,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let beta = self.beta_root.square().add_scalar(GDN_BETA_FLOOR);
        let gamma = self.gamma_root.square();
        let norm = x
            .square()
            .conv2d(&gamma, Some(&beta), ConvGeom::new(1, 1, 0))
            .sqrt();
        if self.inverse {
            x.mul(&norm)
        } else {
            x.div(&norm)
        }
    }
}

impl<T: Float> Params<T> for Gdn<T> {
    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "beta"), self.beta_root.clone()));
        out.push((join(prefix, "gamma"), self.gamma_root.clone()));
    }
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "beta"), &mut self.beta_root));
        out.push((join(prefix, "gamma"), &mut self.gamma_root));
    }
}
