//! Rate–distortion training objectives and image quality metrics.
//!
//! Rates enter the objective in bits per source pixel and MSE distortion is
//! measured on the 0–255 scale, so `λ = 0.002` has its usual meaning.

use fgs_autograd::{Float, Tensor};
use rand::Rng;
use serde::Serialize;

use crate::config::{Metric, ModelConfig, WeightMode};
use crate::error::{Error, Result};
use crate::model::{DeepFgs, ForwardPass};

/// Distortion weight of a `i`-channel prefix.
pub fn w(i: usize, d: usize, mode: WeightMode) -> usize {
    let base = i / d.max(1);
    match mode {
        WeightMode::Floor => base,
        WeightMode::Clamped => base.max(1),
    }
}

/// Uniform draw from `{0, 1, …, c2}`.
pub fn sample_j<R: Rng>(rng: &mut R, c2: usize) -> usize {
    rng.random_range(0..=c2)
}

/// Scalar summary of one loss evaluation. Rates are bits per pixel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub rate_b: f64,
    pub rate_s: f64,
    pub dist_b: f64,
    pub dist_s: f64,
    pub j: usize,
    pub w_j: usize,
    pub total: f64,
}

impl LossBreakdown {
    /// Names the first non-finite component, if any.
    pub fn check_finite(&self, step: usize) -> Result<()> {
        let parts = [
            ("rate_b", self.rate_b),
            ("rate_s", self.rate_s),
            ("dist_b", self.dist_b),
            ("dist_s", self.dist_s),
            ("total", self.total),
        ];
        match parts.iter().find(|(_, v)| !v.is_finite()) {
            Some((component, _)) => Err(Error::NonFinite { component, step }),
            None => Ok(()),
        }
    }
}

/// A differentiable total plus its breakdown.
pub struct Loss<T: Float> {
    pub total: Tensor<T>,
    pub breakdown: LossBreakdown,
}

/// `D(x, x̂)` under the configured metric: `255²·MSE` or `1 − MS-SSIM`.
pub fn distortion<T: Float>(metric: Metric, x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Shape(format!(
            "distortion of {:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    match metric {
        Metric::Mse => Ok(x.sub(x_hat).square().mean_all().scale(255.0 * 255.0)),
        Metric::MsSsim => Ok(ms_ssim(x, x_hat)?.neg().add_scalar(1.0)),
    }
}

/// Rate plus weighted distortion of the basic layer alone.
pub fn basic_loss<T: Float>(fp: &ForwardPass<T>, cfg: &ModelConfig) -> Result<Loss<T>> {
    let px = fp.pixels() as f64;
    let rate_b = fp.bits_basic().scale(1.0 / px);
    let dist_b = distortion(cfg.metric, &fp.x, &fp.x_hat_b)?;
    let total = rate_b.add(&dist_b.scale(cfg.lambda));
    Ok(Loss {
        breakdown: LossBreakdown {
            rate_b: rate_b.item().as_f64(),
            rate_s: 0.0,
            dist_b: dist_b.item().as_f64(),
            dist_s: 0.0,
            j: 0,
            w_j: 0,
            total: total.item().as_f64(),
        },
        total,
    })
}

fn scalable_terms<T: Float>(
    fp: &ForwardPass<T>,
    model: &DeepFgs<T>,
    j: usize,
    w_j: usize,
    include_basic: bool,
) -> Result<Loss<T>> {
    let cfg = &model.cfg;
    let c2 = fp.c2();
    if j == 0 || j > c2 {
        return Err(Error::ChannelRange { j, max: c2 });
    }
    let px = fp.pixels() as f64;
    let rate_b = fp.bits_basic().scale(1.0 / px);
    let rate_s = fp
        .bits_scalable_prefix(j)?
        .add(&fp.bits_z_s())
        .scale(1.0 / px);
    let dist_s = distortion(cfg.metric, &fp.x, &fp.reconstruct(model, j)?)?;
    let mut weighted = dist_s.scale(w_j as f64);
    let mut dist_b_value = 0.0;
    if include_basic {
        let dist_b = distortion(cfg.metric, &fp.x, &fp.x_hat_b)?;
        dist_b_value = dist_b.item().as_f64();
        weighted = weighted.add(&dist_b);
    }
    let total = rate_b.add(&rate_s).add(&weighted.scale(cfg.lambda));
    Ok(Loss {
        breakdown: LossBreakdown {
            rate_b: rate_b.item().as_f64(),
            rate_s: rate_s.item().as_f64(),
            dist_b: dist_b_value,
            dist_s: dist_s.item().as_f64(),
            j,
            w_j,
            total: total.item().as_f64(),
        },
        total,
    })
}

/// Sampled scalable loss for one prefix length `1 ≤ j ≤ C2`.
pub fn scalable_loss_sampled<T: Float>(
    fp: &ForwardPass<T>,
    model: &DeepFgs<T>,
    j: usize,
) -> Result<Loss<T>> {
    let cfg = &model.cfg;
    scalable_terms(
        fp,
        model,
        j,
        w(j, cfg.group_size, cfg.weight_mode),
        cfg.include_basic_distortion,
    )
}

/// Largest `C2` the exhaustive sum accepts.
pub const FULL_LOSS_MAX_C2: usize = 16;

/// The exhaustive sum over every prefix `i = 1..k−C1`, without the basic
/// distortion term. Only for small models.
pub fn scalable_loss_full<T: Float>(
    fp: &ForwardPass<T>,
    model: &DeepFgs<T>,
    k: usize,
) -> Result<Tensor<T>> {
    let cfg = &model.cfg;
    if cfg.c2 > FULL_LOSS_MAX_C2 {
        return Err(Error::Config(format!(
            "exhaustive loss is limited to c2 ≤ {FULL_LOSS_MAX_C2}, got {}",
            cfg.c2
        )));
    }
    if k < cfg.c1 || k > cfg.c1 + cfg.c2 {
        return Err(Error::ChannelRange {
            j: k.saturating_sub(cfg.c1),
            max: cfg.c2,
        });
    }
    let mut sum = Tensor::scalar(T::zero());
    for i in 1..=k - cfg.c1 {
        let term = scalable_terms(fp, model, i, w(i, cfg.group_size, cfg.weight_mode), false)?;
        sum = sum.add(&term.total);
    }
    Ok(sum)
}

/// The per-step objective: basic loss for `j = 0`, the sampled scalable
/// loss otherwise. A single-rate model always trains the full width with
/// unit weight and no separate basic term.
pub fn composite_loss<T: Float>(
    fp: &ForwardPass<T>,
    model: &DeepFgs<T>,
    j: usize,
) -> Result<Loss<T>> {
    let cfg = &model.cfg;
    if cfg.single_rate {
        return scalable_terms(fp, model, cfg.c2, 1, false);
    }
    if j == 0 {
        basic_loss(fp, cfg)
    } else {
        scalable_loss_sampled(fp, model, j)
    }
}

pub fn mse<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse: shapes differ");
    let n = a.numel().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio for unit peak; `+∞` for identical inputs.
pub fn psnr<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    }
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Floor for the per-scale factors before exponentiation.
const SSIM_EPS: f64 = 1e-8;

/// Number of scales for an image whose shorter side is `min_side`: every
/// scale must still fit the 11-tap window.
pub fn ms_ssim_scales(min_side: usize) -> Result<usize> {
    let s = (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| (min_side >> (s - 1)) >= SSIM_WINDOW)
        .ok_or_else(|| {
            Error::Shape(format!(
                "MS-SSIM needs a side of at least {SSIM_WINDOW}, got {min_side}"
            ))
        })?;
    Ok(s)
}

/// The 1-D normalized Gaussian window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Multi-scale SSIM averaged over batch and colour channels, in `(0, 1]`.
pub fn ms_ssim<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "ms_ssim of {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let [n, c, h, w] = a.shape();
    let scales = ms_ssim_scales(h.min(w))?;
    let norm: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();

    let g = gaussian_window();
    let kernel: Vec<f64> = g
        .iter()
        .flat_map(|u| g.iter().map(move |v| u * v))
        .collect();
    let window = Tensor::<T>::from_f64(&kernel, [1, 1, SSIM_WINDOW, SSIM_WINDOW]);
    let pool = Tensor::<T>::full([1, 1, 2, 2], T::from_f64(0.25));
    let filter = fgs_autograd::ConvGeom::new(SSIM_WINDOW, 1, 0);
    let halve = fgs_autograd::ConvGeom::new(2, 2, 0);
    let blur = |t: &Tensor<T>| t.conv2d(&window, None, filter);

    let mut x = a.reshape([n * c, 1, h, w]);
    let mut y = b.reshape([n * c, 1, h, w]);
    let mut product: Option<Tensor<T>> = None;
    for s in 0..scales {
        let (mx, my) = (blur(&x), blur(&y));
        let (mx2, my2, mxy) = (mx.square(), my.square(), mx.mul(&my));
        let sxx = blur(&x.square()).sub(&mx2);
        let syy = blur(&y.square()).sub(&my2);
        let sxy = blur(&x.mul(&y)).sub(&mxy);
        let cs_map = sxy
            .scale(2.0)
            .add_scalar(SSIM_C2)
            .div(&sxx.add(&syy).add_scalar(SSIM_C2));
        let last = s + 1 == scales;
        let value = if last {
            let l_map = mxy
                .scale(2.0)
                .add_scalar(SSIM_C1)
                .div(&mx2.add(&my2).add_scalar(SSIM_C1));
            l_map.mul(&cs_map)
        } else {
            cs_map
        };
        let factor = value
            .mean_axes([false, false, true, true])
            .clamp(SSIM_EPS, f64::MAX)
            .powf(MS_SSIM_WEIGHTS[s] / norm);
        product = Some(match product {
            Some(p) => p.mul(&factor),
            None => factor,
        });
        if !last {
            x = x.conv2d(&pool, None, halve);
            y = y.conv2d(&pool, None, halve);
        }
    }
    Ok(product.expect("at least one scale").mean_all())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_schedule() {
        assert_eq!(w(8, 8, WeightMode::Floor), 1);
        assert_eq!(w(7, 8, WeightMode::Floor), 0);
        assert_eq!(w(0, 8, WeightMode::Floor), 0);
        assert_eq!(w(192, 8, WeightMode::Floor), 24);
        assert_eq!(w(0, 8, WeightMode::Clamped), 1);
        assert_eq!(w(17, 8, WeightMode::Clamped), 2);
        for i in 0..400 {
            assert_eq!(
                w(i + 8, 8, WeightMode::Floor),
                w(i, 8, WeightMode::Floor) + 1
            );
            assert!(w(i + 1, 3, WeightMode::Clamped) >= w(i, 3, WeightMode::Clamped));
        }
    }

    #[test]
    fn sample_j_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c2 = 32;
        let draws = 100_000;
        let mut counts = vec![0usize; c2 + 1];
        for _ in 0..draws {
            counts[sample_j(&mut rng, c2)] += 1;
        }
        let p = 1.0 / (c2 + 1) as f64;
        let expect = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for &k in &counts {
            assert!((k as f64 - expect).abs() <= 4.0 * sd, "{counts:?}");
        }
        let chi2: f64 = counts
            .iter()
            .map(|&k| (k as f64 - expect).powi(2) / expect)
            .sum();
        // 99.9th percentile of χ² with 32 degrees of freedom
        assert!(chi2 < 62.5, "χ² = {chi2}");
        assert_eq!(sample_j(&mut rng, 0), 0);
    }

    #[test]
    fn metric_identities() {
        let a = Tensor::<f64>::zeros([1, 3, 16, 16]);
        let b = Tensor::<f64>::full([1, 3, 16, 16], 1.0);
        assert_eq!(mse(&a, &b), 1.0);
        assert_eq!(psnr(&a, &b), 0.0);
        assert_eq!(psnr(&a, &a), f64::INFINITY);
        let img: Vec<f64> = (0..3 * 32 * 32)
            .map(|i| ((i * 13) % 29) as f64 / 28.0)
            .collect();
        let img = Tensor::<f64>::from_f64(&img, [1, 3, 32, 32]);
        assert!((ms_ssim(&img, &img).unwrap().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base: Vec<f64> = (0..3 * 32 * 32)
            .map(|_| rng.random_range(0.2..0.8))
            .collect();
        let noise: Vec<f64> = (0..base.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let clean = Tensor::<f64>::from_f64(&base, [1, 3, 32, 32]);
        let mut last = f64::INFINITY;
        for level in [0.01, 0.02, 0.05, 0.1] {
            let noisy: Vec<f64> = base
                .iter()
                .zip(&noise)
                .map(|(b, n)| b + level * n)
                .collect();
            let p = psnr(&clean, &Tensor::<f64>::from_f64(&noisy, [1, 3, 32, 32]));
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn scale_count() {
        assert_eq!(ms_ssim_scales(256).unwrap(), 5);
        assert_eq!(ms_ssim_scales(176).unwrap(), 5);
        assert_eq!(ms_ssim_scales(175).unwrap(), 4);
        assert_eq!(ms_ssim_scales(48).unwrap(), 3);
        assert_eq!(ms_ssim_scales(11).unwrap(), 1);
        assert!(ms_ssim_scales(10).is_err());
    }

    #[test]
    fn nonfinite_component_is_named() {
        let mut b = LossBreakdown {
            rate_b: 1.0,
            rate_s: 0.0,
            dist_b: 2.0,
            dist_s: 0.0,
            j: 0,
            w_j: 0,
            total: 3.0,
        };
        assert!(b.check_finite(5).is_ok());
        b.dist_s = f64::NAN;
        match b.check_finite(5) {
            Err(Error::NonFinite { component, step }) => {
                assert_eq!(component, "dist_s");
                assert_eq!(step, 5);
            }
            other => panic!("{other:?}"),
        }
    }
}
