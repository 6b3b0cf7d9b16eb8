//! Entropy-model parameter paths against scalar reimplementations, and the
//! rate of a forward pass against a direct log-sum.

mod common;

use common::{Planes, Weights};
use deepfgs::entropy::{channel_bits, rate, SIGMA_MIN};
use deepfgs::{AblationCase, DeepFgs, Mode, ModelConfig};
use fgs_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(mem: bool) -> ModelConfig {
    let case = if mem {
        AblationCase::Case1
    } else {
        AblationCase::Case2
    };
    ModelConfig {
        n_hidden: 3,
        hyper_channels: 2,
        seed: 17,
        ..ModelConfig::desk(2, 3)
    }
    .with_ablation(case)
}

fn random(seed: u64, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape)
}

fn relu(p: Planes) -> Planes {
    p.map(|v| v.max(0.0))
}

fn hyper_analysis(wts: &Weights, y: &Planes, prefix: &str) -> Planes {
    let h = relu(wts.conv(y, &format!("{prefix}.conv0"), 1, true));
    let h = relu(wts.conv(&h, &format!("{prefix}.conv1"), 2, true));
    wts.conv(&h, &format!("{prefix}.conv2"), 2, true)
}

fn hyper_synthesis(wts: &Weights, z: &Planes, prefix: &str, h: usize, w: usize) -> Planes {
    let u = relu(wts.deconv(z, &format!("{prefix}.deconv0")));
    let u = relu(wts.deconv(&u, &format!("{prefix}.deconv1")));
    let mut crop = Planes::zeros(u.c, h, w);
    for c in 0..u.c {
        for i in 0..h {
            for j in 0..w {
                *crop.at_mut(c, i, j) = u.at(c, i, j);
            }
        }
    }
    relu(wts.conv(&crop, &format!("{prefix}.conv"), 1, true))
}

/// `(μ, σ)` planes from a feature, as the two-layer head computes them.
fn head(wts: &Weights, feature: &Planes, prefix: &str) -> (Vec<f64>, Vec<f64>) {
    let hidden = relu(wts.conv(feature, &format!("{prefix}.conv0"), 1, true));
    let raw = wts.conv(&hidden, &format!("{prefix}.conv1"), 1, true);
    let half = raw.v.len() / 2;
    let sigma = raw.v[half..].iter().map(|&s| s.max(SIGMA_MIN)).collect();
    (raw.v[..half].to_vec(), sigma)
}

fn concat(a: &Planes, b: &Planes) -> Planes {
    let mut v = a.v.clone();
    v.extend_from_slice(&b.v);
    Planes {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        v,
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}");
    let worst = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= tol, "{what}: max abs diff {worst:e}");
}

#[test]
fn basic_hyperprior_matches_direct_convolution() {
    let model = DeepFgs::<f64>::new(toy(true)).unwrap();
    let wts = Weights::of(&model);
    let y_b = random(1, [1, 2, 4, 4], -6.0, 6.0);
    let z = model.entropy.hyper_encode_b(&y_b);
    assert_eq!(z.shape(), [1, 2, 1, 1]);
    assert_close(
        &z.to_vec(),
        &hyper_analysis(&wts, &Planes::from_tensor(&y_b), "entropy.h_a_b").v,
        1e-12,
        "h_a",
    );

    let z_hat = random(2, [1, 2, 1, 1], -3.0, 3.0);
    let params = model.entropy.hyper_decode_b(&z_hat, 4, 4).unwrap();
    assert_eq!(params.mu.shape(), [1, 2, 4, 4]);
    let feature = hyper_synthesis(&wts, &Planes::from_tensor(&z_hat), "entropy.h_s_b", 4, 4);
    let (mu, sigma) = head(&wts, &feature, "entropy.head_b");
    assert_close(&params.mu.to_vec(), &mu, 1e-12, "μ_b");
    assert_close(&params.sigma.to_vec(), &sigma, 1e-12, "σ_b");
    assert!(params.sigma.to_vec().iter().all(|&s| s >= SIGMA_MIN));
}

#[test]
fn mutual_entropy_head_matches_scalar_oracle() {
    for mem in [true, false] {
        let model = DeepFgs::<f64>::new(toy(mem)).unwrap();
        let wts = Weights::of(&model);
        // a 3×5 latent grid exercises the crop of the 4×8 upsampled feature
        let y_b_hat = random(3, [1, 2, 3, 5], -4.0, 4.0);
        let z_s_hat = random(4, [1, 2, 1, 2], -3.0, 3.0);
        let params = model.entropy.mem_params(&z_s_hat, &y_b_hat).unwrap();

        let hyper = hyper_synthesis(&wts, &Planes::from_tensor(&z_s_hat), "entropy.h_s_s", 3, 5);
        let feature = if mem {
            let yb = Planes::from_tensor(&y_b_hat);
            let ctx = relu(wts.conv(
                &relu(wts.conv(&yb, "entropy.mem.context0", 1, true)),
                "entropy.mem.context1",
                1,
                true,
            ));
            concat(&hyper, &ctx)
        } else {
            hyper
        };
        let (mu, sigma) = head(&wts, &feature, "entropy.head_s");
        assert_close(&params.mu.to_vec(), &mu, 1e-12, "μ_s");
        assert_close(&params.sigma.to_vec(), &sigma, 1e-12, "σ_s");
    }
}

#[test]
fn forward_rate_matches_direct_log_sum() {
    let model = DeepFgs::<f64>::new(toy(true)).unwrap();
    let x = random(5, [2, 3, 32, 16], 0.0, 1.0);
    let fp = model.forward(&x, Mode::Infer).unwrap();

    // Φ through erfc, upper tail used on the right so small masses keep their digits
    let phi = |t: f64| 0.5 * libm::erfc(-t / std::f64::consts::SQRT_2);
    let (y, mu, sigma) = (
        fp.y_s_hat.to_vec(),
        fp.params_s.mu.to_vec(),
        fp.params_s.sigma.to_vec(),
    );
    let mut oracle_bits = 0.0;
    for i in 0..y.len() {
        let (lo, hi) = (
            (y[i] - mu[i] - 0.5) / sigma[i],
            (y[i] - mu[i] + 0.5) / sigma[i],
        );
        let p = if lo > 0.0 {
            phi(-lo) - phi(-hi)
        } else {
            phi(hi) - phi(lo)
        };
        oracle_bits -= p.max(2f64.powi(-24)).log2();
    }
    let bits = rate(&fp.lik_y_s).item();
    assert!(
        ((bits - oracle_bits) / oracle_bits).abs() <= 1e-10,
        "{bits} vs {oracle_bits}"
    );
    let per_channel: f64 = channel_bits(&fp.lik_y_s).iter().sum();
    assert!(((per_channel - bits) / bits).abs() <= 1e-10);
}

#[test]
fn scalable_parameters_never_see_the_scalable_latent() {
    let model = DeepFgs::<f64>::new(toy(true)).unwrap();
    let x = random(6, [1, 3, 16, 32], 0.0, 1.0);
    let fp = model.forward(&x, Mode::Infer).unwrap();
    let again = model.entropy.mem_params(&fp.z_s_hat, &fp.y_b_hat).unwrap();
    assert_eq!(again.mu.to_vec(), fp.params_s.mu.to_vec());
    assert_eq!(again.sigma.to_vec(), fp.params_s.sigma.to_vec());

    let shape = fp.y_b_hat.shape();
    let other_basic = Tensor::from_vec(
        random(7, shape, -4.0, 4.0)
            .to_vec()
            .into_iter()
            .map(f64::round)
            .collect(),
        shape,
    );
    let moved = model.entropy.mem_params(&fp.z_s_hat, &other_basic).unwrap();
    assert_ne!(
        moved.mu.to_vec(),
        fp.params_s.mu.to_vec(),
        "context from ŷ_b must be live"
    );
}
