//! Finite-difference checks of every differentiable operation in double
//! precision on a toy configuration. Each check panics on failure.
//!
//! Loss-level checks run on a toy model that has taken a few optimizer
//! steps: at a fresh initialization the scalable path barely reaches the
//! output, and its gradients sit below what differencing can resolve.

use std::cell::RefCell;

use deepfgs::entropy::{
    likelihood, quantize, rate, EntropyParams, QuantMode, LIKELIHOOD_FLOOR, SIGMA_MIN,
};
use deepfgs::harness::optim::{Adam, AdamConfig};
use deepfgs::objective::{composite_loss, distortion, ms_ssim, scalable_loss_sampled};
use deepfgs::transforms::channel_select;
use deepfgs::{DeepFgs, Metric, Mode, ModelConfig};
use fgs_autograd::gradcheck::check_gradient;
use fgs_autograd::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
/// Difference step for single operations with O(1) outputs.
const EPS: f64 = 1e-5;
/// Larger step for whole losses, whose values run into the tens.
const EPS_LOSS: f64 = 1e-4;
/// Entries with a smaller gradient are judged on absolute error.
const FLOOR: f64 = 1e-5;

fn toy_cfg() -> ModelConfig {
    ModelConfig {
        n_hidden: 4,
        hyper_channels: 2,
        seed: 11,
        ..ModelConfig::desk(4, 4)
    }
}

fn uniform(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn numel(s: Shape) -> usize {
    s.iter().product()
}

/// A fixed random linear functional, so every output element matters.
fn project(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let r = Tensor::from_vec(uniform(seed, t.numel(), -1.0, 1.0), t.shape());
    t.mul(&r).sum_all()
}

/// Raises the raw scale outputs of both parameter heads so that no σ sits
/// on its lower bound at the checked point.
fn lift_scales(model: &mut DeepFgs<f64>) {
    let (c1, c2) = (model.cfg.c1, model.cfg.c2);
    for (name, slot) in model.named_params_mut() {
        let c = match name.as_str() {
            "entropy.head_b.conv1.bias" => c1,
            "entropy.head_s.conv1.bias" => c2,
            _ => continue,
        };
        let mut v = slot.to_vec();
        for b in &mut v[c..] {
            *b += 2.0;
        }
        *slot = Tensor::param(v, slot.shape());
    }
}

fn toy_model(cfg: ModelConfig) -> DeepFgs<f64> {
    let mut m = DeepFgs::<f64>::new(cfg).unwrap();
    lift_scales(&mut m);
    m
}

fn toy_image(seed: u64, side: usize) -> Tensor<f64> {
    Tensor::from_vec(
        uniform(seed, 3 * side * side, 0.05, 0.95),
        [1, 3, side, side],
    )
}

/// Checks the gradient of `f(model)` with respect to every parameter whose
/// name starts with one of `prefixes`.
fn check_params(
    model: &RefCell<DeepFgs<f64>>,
    prefixes: &[&str],
    f: &dyn Fn(&DeepFgs<f64>) -> Tensor<f64>,
) {
    check_params_at(model, prefixes, f, EPS)
}

fn check_params_at(
    model: &RefCell<DeepFgs<f64>>,
    prefixes: &[&str],
    f: &dyn Fn(&DeepFgs<f64>) -> Tensor<f64>,
    eps: f64,
) {
    let names: Vec<(String, Tensor<f64>)> = model
        .borrow()
        .named_params()
        .into_iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .collect();
    assert!(!names.is_empty(), "no parameters under {prefixes:?}");
    for (name, original) in names {
        let set = |t: Tensor<f64>| {
            let mut m = model.borrow_mut();
            for (n, slot) in m.named_params_mut() {
                if n == name {
                    *slot = t;
                    return;
                }
            }
        };
        let g = |ts: &[Tensor<f64>]| {
            set(ts[0].clone());
            f(&model.borrow())
        };
        let report = check_gradient(&[original.to_vec()], &[original.shape()], 0, &g, eps, FLOOR);
        set(original.clone());
        assert!(report.passes(TOL), "{name}: {report:?}");
    }
}

fn check_inputs(
    values: &[Vec<f64>],
    shapes: &[Shape],
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    what: &str,
) {
    check_inputs_at(values, shapes, f, what, EPS)
}

fn check_inputs_at(
    values: &[Vec<f64>],
    shapes: &[Shape],
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    what: &str,
    eps: f64,
) {
    for i in 0..values.len() {
        let report = check_gradient(values, shapes, i, f, eps, FLOOR);
        assert!(report.passes(TOL), "{what}, input {i}: {report:?}");
    }
}

pub fn basic_encoder() {
    let model = RefCell::new(toy_model(toy_cfg()));
    let x = toy_image(1, 16);
    check_inputs(
        &[x.to_vec()],
        &[x.shape()],
        &|ts| project(&model.borrow().backbone.encode_basic(&ts[0]).unwrap(), 2),
        "encode_basic",
    );
    check_params(&model, &["g_b."], &|m| {
        project(&m.backbone.encode_basic(&x).unwrap(), 2)
    });
}

pub fn scalable_encoder_with_residual_fusion() {
    let model = RefCell::new(toy_model(toy_cfg()));
    let (x, xb) = (toy_image(3, 16), toy_image(4, 16));
    check_inputs(
        &[x.to_vec(), xb.to_vec()],
        &[x.shape(), xb.shape()],
        &|ts| {
            project(
                &model
                    .borrow()
                    .backbone
                    .encode_scalable(&ts[0], &ts[1])
                    .unwrap(),
                5,
            )
        },
        "encode_scalable",
    );
    check_params(&model, &["g_s.", "f_conv."], &|m| {
        project(&m.backbone.encode_scalable(&x, &xb).unwrap(), 5)
    });
}

pub fn cross_guided_gate() {
    let model = RefCell::new(toy_model(toy_cfg()));
    let shape = [1, 4, 3, 2];
    let (ys, yb) = (uniform(6, 24, -2.0, 2.0), uniform(7, 24, -2.0, 2.0));
    let f = |ts: &[Tensor<f64>]| project(&model.borrow().backbone.frr(&ts[0], &ts[1]).unwrap(), 8);
    check_inputs(&[ys.clone(), yb.clone()], &[shape, shape], &f, "frr");
    let (ys, yb) = (Tensor::from_vec(ys, shape), Tensor::from_vec(yb, shape));
    check_params(&model, &["frr."], &|m| {
        project(&m.backbone.frr(&ys, &yb).unwrap(), 8)
    });
}

pub fn decoder_with_fusion_gate() {
    let model = RefCell::new(toy_model(toy_cfg()));
    let shape = [1, 8, 1, 2];
    let y = uniform(9, numel(shape), -2.0, 2.0);
    check_inputs(
        std::slice::from_ref(&y),
        &[shape],
        &|ts| project(&model.borrow().backbone.g_d.fuse(&ts[0]).unwrap(), 10),
        "ffm",
    );
    check_inputs(
        std::slice::from_ref(&y),
        &[shape],
        &|ts| project(&model.borrow().backbone.decode(&ts[0]).unwrap(), 11),
        "decode",
    );
    let y = Tensor::from_vec(y, shape);
    check_params(&model, &["g_d."], &|m| {
        project(&m.backbone.decode(&y).unwrap(), 11)
    });
}

pub fn channel_select_passes_gradients_to_kept_channels() {
    let shape = [1, 5, 2, 2];
    check_inputs(
        &[uniform(12, 20, -1.0, 1.0)],
        &[shape],
        &|ts| project(&channel_select(&ts[0], 3).unwrap(), 13),
        "channel_select",
    );
}

pub fn gaussian_likelihood_and_rate() {
    let shape = [1, 2, 3, 3];
    let n = numel(shape);
    let y = uniform(14, n, -3.0, 3.0);
    let mu = uniform(15, n, -1.0, 1.0);
    let sigma = uniform(16, n, 0.3, 4.0);
    let f = |ts: &[Tensor<f64>]| {
        let p = EntropyParams {
            mu: ts[1].clone(),
            sigma: ts[2].clone(),
        };
        rate(&likelihood(&ts[0], &p))
    };
    check_inputs(&[y, mu, sigma], &[shape; 3], &f, "likelihood/rate");
}

pub fn noise_quantization_is_a_unit_slope() {
    let shape = [1, 1, 4, 4];
    check_inputs(
        &[uniform(17, 16, -3.0, 3.0)],
        &[shape],
        &|ts| project(&quantize(&ts[0], QuantMode::Noise { seed: 4 }), 18),
        "quantize",
    );
}

pub fn factorized_priors() {
    let model = RefCell::new(toy_model(toy_cfg()));
    let shape = [1, 2, 2, 2];
    let z = uniform(19, 8, -3.0, 3.0);
    check_inputs(
        std::slice::from_ref(&z),
        &[shape],
        &|ts| rate(&model.borrow().entropy.prior_b.likelihood(&ts[0]).unwrap()),
        "prior",
    );
    let z = Tensor::from_vec(z, shape);
    check_params(&model, &["entropy.prior_b.", "entropy.prior_s."], &|m| {
        rate(&m.entropy.prior_b.likelihood(&z).unwrap())
            .add(&rate(&m.entropy.prior_s.likelihood(&z).unwrap()))
    });
}

fn params_functional(p: &EntropyParams<f64>) -> Tensor<f64> {
    assert!(
        p.sigma.data().iter().all(|&s| s > SIGMA_MIN),
        "a scale sits on its floor"
    );
    project(&p.mu, 20).add(&project(&p.sigma, 21))
}

pub fn hyperprior_paths() {
    let model = RefCell::new(toy_model(toy_cfg()));
    let y_shape = [1, 4, 4, 4];
    let y = uniform(22, numel(y_shape), -4.0, 4.0);
    check_inputs(
        std::slice::from_ref(&y),
        &[y_shape],
        &|ts| project(&model.borrow().entropy.hyper_encode_b(&ts[0]), 23),
        "hyper analysis",
    );
    let z_shape = [1, 2, 1, 1];
    let z = uniform(24, 2, -2.0, 2.0);
    check_inputs(
        std::slice::from_ref(&z),
        &[z_shape],
        &|ts| params_functional(&model.borrow().entropy.hyper_decode_b(&ts[0], 4, 4).unwrap()),
        "hyper synthesis",
    );
    let (y, z) = (Tensor::from_vec(y, y_shape), Tensor::from_vec(z, z_shape));
    check_params(&model, &["entropy.h_a_b."], &|m| {
        project(&m.entropy.hyper_encode_b(&y), 23)
    });
    check_params(&model, &["entropy.h_s_b.", "entropy.head_b."], &|m| {
        params_functional(&m.entropy.hyper_decode_b(&z, 4, 4).unwrap())
    });
}

pub fn mutual_entropy_model() {
    let model = RefCell::new(toy_model(toy_cfg()));
    let (z_shape, y_shape) = ([1, 2, 1, 1], [1, 4, 4, 4]);
    let z = uniform(25, 2, -2.0, 2.0);
    let yb = uniform(26, numel(y_shape), -4.0, 4.0);
    check_inputs(
        &[z.clone(), yb.clone()],
        &[z_shape, y_shape],
        &|ts| params_functional(&model.borrow().entropy.mem_params(&ts[0], &ts[1]).unwrap()),
        "mem_params",
    );
    let (z, yb) = (Tensor::from_vec(z, z_shape), Tensor::from_vec(yb, y_shape));
    check_params(
        &model,
        &[
            "entropy.h_a_s.",
            "entropy.h_s_s.",
            "entropy.mem.",
            "entropy.head_s.",
        ],
        &|m| {
            let y = Tensor::from_vec(uniform(27, 64, -4.0, 4.0), y_shape);
            params_functional(&m.entropy.mem_params(&z, &yb).unwrap())
                .add(&project(&m.entropy.hyper_encode_s(&y), 28))
        },
    );
}

/// A toy model after a few steps on `x`, with scales lifted off their floor.
fn warmed_model(cfg: ModelConfig, x: &Tensor<f64>) -> DeepFgs<f64> {
    let mut m = DeepFgs::<f64>::new(cfg).unwrap();
    let mut adam = Adam::new(&m, AdamConfig::default());
    for step in 0..40u64 {
        let fp = m.forward(x, Mode::Train { seed: step }).unwrap();
        let j = [0, 4, 2, 3, 1][step as usize % 5];
        let grads = composite_loss(&fp, &m, j).unwrap().total.backward();
        adam.step(&mut m, &grads, 1e-2);
    }
    lift_scales(&mut m);
    m
}

fn assert_smooth_point(fp: &deepfgs::ForwardPass<f64>) {
    for sigma in [&fp.params_b.sigma, &fp.params_s.sigma] {
        assert!(
            sigma.data().iter().all(|&s| s > SIGMA_MIN),
            "a scale sits on its floor"
        );
    }
    for lik in [&fp.lik_y_b, &fp.lik_z_b, &fp.lik_y_s, &fp.lik_z_s] {
        assert!(
            lik.data().iter().all(|&p| p > LIKELIHOOD_FLOOR),
            "a likelihood sits on its floor"
        );
    }
}

fn loss_at(m: &DeepFgs<f64>, x: &Tensor<f64>, j: usize) -> Tensor<f64> {
    let fp = m.forward(x, Mode::Train { seed: 5 }).unwrap();
    assert_smooth_point(&fp);
    composite_loss(&fp, m, j).unwrap().total
}

pub fn composite_loss_all_parameters() {
    let x = toy_image(29, 16);
    let model = RefCell::new(warmed_model(toy_cfg(), &x));
    let basic = [
        "g_b.",
        "g_d.",
        "entropy.h_a_b.",
        "entropy.h_s_b.",
        "entropy.head_b.",
        "entropy.prior_b.",
    ];
    for (j, prefixes) in [(0, &basic[..]), (3, &[""][..])] {
        let what = format!("loss at j = {j} wrt x");
        check_inputs_at(
            &[x.to_vec()],
            &[x.shape()],
            &|ts| loss_at(&model.borrow(), &ts[0], j),
            &what,
            EPS_LOSS,
        );
        check_params_at(&model, prefixes, &|m| loss_at(m, &x, j), EPS_LOSS);
    }
}

pub fn sampled_loss_with_floor_weights_and_ms_ssim_metric() {
    let cfg = ModelConfig {
        metric: Metric::MsSsim,
        lambda: 7.0,
        group_size: 2,
        ..toy_cfg()
    };
    let x = toy_image(30, 16);
    let model = RefCell::new(warmed_model(cfg, &x));
    let f = |m: &DeepFgs<f64>| {
        let fp = m.forward(&x, Mode::Train { seed: 6 }).unwrap();
        assert_smooth_point(&fp);
        scalable_loss_sampled(&fp, m, 4).unwrap().total
    };
    check_params_at(&model, &["g_d.", "g_s.", "entropy.head_s."], &f, EPS_LOSS);
}

pub fn ms_ssim_against_its_reference() {
    for side in [16, 32] {
        let a = uniform(31, 3 * side * side, 0.1, 0.9);
        let b: Vec<f64> = a
            .iter()
            .zip(uniform(32, a.len(), -0.08, 0.08))
            .map(|(x, n)| x + n)
            .collect();
        let shape = [1, 3, side, side];
        let at = Tensor::from_vec(a.clone(), shape);
        check_inputs(
            std::slice::from_ref(&b),
            &[shape],
            &|ts| ms_ssim(&at, &ts[0]).unwrap(),
            "ms_ssim",
        );
        check_inputs(
            &[b],
            &[shape],
            &|ts| distortion(Metric::Mse, &at, &ts[0]).unwrap(),
            "mse distortion",
        );
    }
}

/// Every check, by name.
pub const CHECKS: &[(&str, fn())] = &[
    ("basic_encoder", basic_encoder),
    (
        "scalable_encoder_with_residual_fusion",
        scalable_encoder_with_residual_fusion,
    ),
    ("cross_guided_gate", cross_guided_gate),
    ("decoder_with_fusion_gate", decoder_with_fusion_gate),
    (
        "channel_select_passes_gradients_to_kept_channels",
        channel_select_passes_gradients_to_kept_channels,
    ),
    ("gaussian_likelihood_and_rate", gaussian_likelihood_and_rate),
    (
        "noise_quantization_is_a_unit_slope",
        noise_quantization_is_a_unit_slope,
    ),
    ("factorized_priors", factorized_priors),
    ("hyperprior_paths", hyperprior_paths),
    ("mutual_entropy_model", mutual_entropy_model),
    (
        "composite_loss_all_parameters",
        composite_loss_all_parameters,
    ),
    (
        "sampled_loss_with_floor_weights_and_ms_ssim_metric",
        sampled_loss_with_floor_weights_and_ms_ssim_metric,
    ),
    (
        "ms_ssim_against_its_reference",
        ms_ssim_against_its_reference,
    ),
];
