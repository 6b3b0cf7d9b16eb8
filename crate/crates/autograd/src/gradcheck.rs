//! Central finite-difference checking of reverse-mode gradients.

use crate::tensor::Tensor;

/// Outcome of a gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` over the whole input.
    pub norm_rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Compares the analytic gradient of `f` at `inputs[which]` against central
/// differences with step `eps`.
///
/// Relative error is `|a − n| / max(|a|, |n|, abs_floor)` so that entries
/// with a vanishing gradient are judged on an absolute scale.
pub fn check_gradient(
    inputs: &[Vec<f64>],
    shapes: &[crate::Shape],
    which: usize,
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    eps: f64,
    abs_floor: f64,
) -> GradCheck {
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(shapes)
        .map(|(v, &s)| Tensor::param(v.clone(), s))
        .collect();
    let out = f(&leaves);
    let grads = out.backward();
    let analytic = grads.get_or_zeros(&leaves[which]);

    let eval = |vals: &[f64]| -> f64 {
        let ts: Vec<Tensor<f64>> = inputs
            .iter()
            .zip(shapes)
            .enumerate()
            .map(|(i, (v, &s))| {
                if i == which {
                    Tensor::from_vec(vals.to_vec(), s)
                } else {
                    Tensor::from_vec(v.clone(), s)
                }
            })
            .collect();
        crate::no_grad(|| f(&ts)).item()
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: 0,
        checked: 0,
        norm_rel_err: 0.0,
    };
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let mut probe = inputs[which].clone();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = eval(&probe);
        probe[i] = orig - eps;
        let down = eval(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(abs_floor);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
        report.max_abs_err = report.max_abs_err.max(abs);
        diff2 += abs * abs;
        a2 += a * a;
        n2 += numeric * numeric;
        report.checked += 1;
    }
    let scale = a2.max(n2).sqrt();
    report.norm_rel_err = if scale > 0.0 {
        diff2.sqrt() / scale
    } else {
        0.0
    };
    report
}
