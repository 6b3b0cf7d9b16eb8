//! Fused discretized-Gaussian likelihood.

use crate::float::{normal_cdf, normal_pdf, Float};
use crate::tensor::{Backward, GradAcc, Tensor};

struct GaussianLikelihood<T: Float> {
    y: Tensor<T>,
    mu: Tensor<T>,
    sigma: Tensor<T>,
    floor: T,
}

/// Probability mass of the unit-width bin centred on `y` under
/// `N(mu, sigma²)`. Evaluated on the left tail for accuracy.
pub fn gaussian_bin_mass<T: Float>(y: T, mu: T, sigma: T) -> T {
    let half = T::from_f64(0.5);
    let v = (y - mu).abs();
    normal_cdf((half - v) / sigma) - normal_cdf((-half - v) / sigma)
}

impl<T: Float> Backward<T> for GaussianLikelihood<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.y, &self.mu, &self.sigma]
    }

    fn backward(&self, _out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let half = T::from_f64(0.5);
        let (y, mu, sigma) = (self.y.data(), self.mu.data(), self.sigma.data());
        let n = y.len();
        // d p / d(y - mu) and d p / d sigma, zero where the floor is active
        let mut d_diff = vec![T::zero(); n];
        let mut d_sigma = vec![T::zero(); n];
        for i in 0..n {
            let raw = gaussian_bin_mass(y[i], mu[i], sigma[i]);
            if raw < self.floor {
                continue;
            }
            let s = sigma[i];
            let diff = y[i] - mu[i];
            let v = diff.abs();
            let u = (half - v) / s;
            let l = (-half - v) / s;
            let (pu, pl) = (normal_pdf(u), normal_pdf(l));
            let dv = (pl - pu) / s;
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            d_diff[i] = grad[i] * dv * sign;
            d_sigma[i] = grad[i] * (l * pl - u * pu) / s;
        }
        if let Some(g) = acc.slot(&self.y) {
            for i in 0..n {
                g[i] += d_diff[i];
            }
        }
        if let Some(g) = acc.slot(&self.mu) {
            for i in 0..n {
                g[i] -= d_diff[i];
            }
        }
        if let Some(g) = acc.slot(&self.sigma) {
            for i in 0..n {
                g[i] += d_sigma[i];
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    /// `max(Φ((y+½−μ)/σ) − Φ((y−½−μ)/σ), floor)` elementwise; all three
    /// tensors share one shape.
    pub fn gaussian_likelihood(
        y: &Tensor<T>,
        mu: &Tensor<T>,
        sigma: &Tensor<T>,
        floor: f64,
    ) -> Tensor<T> {
        assert_eq!(y.shape(), mu.shape(), "likelihood: mean shape");
        assert_eq!(y.shape(), sigma.shape(), "likelihood: scale shape");
        let floor = T::from_f64(floor);
        let data = y
            .data()
            .iter()
            .zip(mu.data())
            .zip(sigma.data())
            .map(|((&y, &m), &s)| gaussian_bin_mass(y, m, s).max(floor))
            .collect();
        Tensor::from_op(
            data,
            y.shape(),
            Box::new(GaussianLikelihood {
                y: y.clone(),
                mu: mu.clone(),
                sigma: sigma.clone(),
                floor,
            }),
        )
    }
}
