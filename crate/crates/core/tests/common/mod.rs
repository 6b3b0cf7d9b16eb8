//! Scalar reimplementations of the network layers, reading weights from a
//! model's named parameters.

#![allow(dead_code)]

use std::collections::HashMap;

use deepfgs::DeepFgs;
use fgs_autograd::Tensor;

/// One image plane stack, `c × h × w`.
#[derive(Clone, Debug)]
pub struct Planes {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Planes {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Planes {
            c,
            h,
            w,
            v: vec![0.0; c * h * w],
        }
    }
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.v[(c * self.h + i) * self.w + j]
    }
    pub fn at_mut(&mut self, c: usize, i: usize, j: usize) -> &mut f64 {
        &mut self.v[(c * self.h + i) * self.w + j]
    }
    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        let [n, c, h, w] = t.shape();
        assert_eq!(n, 1);
        Planes {
            c,
            h,
            w,
            v: t.to_vec(),
        }
    }
    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.v.iter_mut().for_each(|x| *x = f(*x));
        self
    }
}

pub struct Weights(HashMap<String, (Vec<usize>, Vec<f64>)>);

impl Weights {
    pub fn of(model: &DeepFgs<f64>) -> Self {
        Weights(
            model
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, (t.shape().to_vec(), t.to_vec())))
                .collect(),
        )
    }
    pub fn get(&self, name: &str) -> &(Vec<usize>, Vec<f64>) {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
    }

    /// Zero-padded strided convolution, weight `[o, i, k, k]`.
    pub fn conv(&self, x: &Planes, layer: &str, stride: usize, bias: bool) -> Planes {
        let (shape, wt) = self.get(&format!("{layer}.weight"));
        let (o, k) = (shape[0], shape[2]);
        assert_eq!(shape[1], x.c);
        let pad = k / 2;
        let oh = (x.h + 2 * pad - k) / stride + 1;
        let ow = (x.w + 2 * pad - k) / stride + 1;
        let b = bias.then(|| &self.get(&format!("{layer}.bias")).1);
        let mut out = Planes::zeros(o, oh, ow);
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[oc]);
                    for ic in 0..x.c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let (si, sj) = (
                                    (i * stride + ki) as isize - pad as isize,
                                    (j * stride + kj) as isize - pad as isize,
                                );
                                if si < 0 || sj < 0 || si >= x.h as isize || sj >= x.w as isize {
                                    continue;
                                }
                                acc += wt[((oc * x.c + ic) * k + ki) * k + kj]
                                    * x.at(ic, si as usize, sj as usize);
                            }
                        }
                    }
                    *out.at_mut(oc, i, j) = acc;
                }
            }
        }
        out
    }

    /// Stride-2 transposed convolution that doubles the extent, weight
    /// `[i, o, k, k]`.
    pub fn deconv(&self, x: &Planes, layer: &str) -> Planes {
        let (shape, wt) = self.get(&format!("{layer}.weight"));
        let (o, k) = (shape[1], shape[2]);
        let pad = (k / 2) as isize;
        let b = &self.get(&format!("{layer}.bias")).1;
        let mut out = Planes::zeros(o, 2 * x.h, 2 * x.w);
        for oc in 0..o {
            for v in out.v[oc * 4 * x.h * x.w..(oc + 1) * 4 * x.h * x.w].iter_mut() {
                *v = b[oc];
            }
        }
        for ic in 0..x.c {
            for i in 0..x.h {
                for j in 0..x.w {
                    let xv = x.at(ic, i, j);
                    for oc in 0..o {
                        for ki in 0..k {
                            for kj in 0..k {
                                let oi = (2 * i + ki) as isize - pad;
                                let oj = (2 * j + kj) as isize - pad;
                                if oi < 0 || oj < 0 || oi >= out.h as isize || oj >= out.w as isize
                                {
                                    continue;
                                }
                                *out.at_mut(oc, oi as usize, oj as usize) +=
                                    xv * wt[((ic * o + oc) * k + ki) * k + kj];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn gdn(&self, x: &Planes, layer: &str, inverse: bool) -> Planes {
        let beta = &self.get(&format!("{layer}.beta")).1;
        let gamma = &self.get(&format!("{layer}.gamma")).1;
        let mut out = x.clone();
        for c in 0..x.c {
            for i in 0..x.h {
                for j in 0..x.w {
                    let mut s = beta[c] * beta[c] + 1e-6;
                    for k in 0..x.c {
                        s += gamma[c * x.c + k].powi(2) * x.at(k, i, j).powi(2);
                    }
                    let v = x.at(c, i, j);
                    *out.at_mut(c, i, j) = if inverse { v * s.sqrt() } else { v / s.sqrt() };
                }
            }
        }
        out
    }

    pub fn analysis(&self, x: &Planes, prefix: &str) -> Planes {
        let mut y = x.clone();
        for i in 0..4 {
            y = self.conv(&y, &format!("{prefix}.conv{i}"), 2, true);
            if i < 3 {
                y = self.gdn(&y, &format!("{prefix}.gdn{i}"), false);
            }
        }
        y
    }

    /// Channel and spatial gate values of the gate under `prefix`.
    pub fn gates(&self, guide: &Planes, prefix: &str) -> (Vec<f64>, Planes) {
        let area = (guide.h * guide.w) as f64;
        let mut pooled = Planes::zeros(guide.c, 1, 1);
        for c in 0..guide.c {
            pooled.v[c] = guide.v[c * guide.h * guide.w..(c + 1) * guide.h * guide.w]
                .iter()
                .sum::<f64>()
                / area;
        }
        let hidden = self
            .conv(&pooled, &format!("{prefix}.mlp0"), 1, true)
            .map(|v| v.max(0.0));
        let channel = self
            .conv(&hidden, &format!("{prefix}.mlp1"), 1, true)
            .map(sigmoid)
            .v;

        let mut plane = Planes::zeros(1, guide.h, guide.w);
        for i in 0..guide.h {
            for j in 0..guide.w {
                plane.v[i * guide.w + j] =
                    (0..guide.c).map(|c| guide.at(c, i, j)).sum::<f64>() / guide.c as f64;
            }
        }
        let hidden = self
            .conv(&plane, &format!("{prefix}.st0"), 1, true)
            .map(|v| v.max(0.0));
        let spatial = self
            .conv(&hidden, &format!("{prefix}.st1"), 1, true)
            .map(sigmoid);
        (channel, spatial)
    }

    pub fn gate(&self, target: &Planes, guide: &Planes, prefix: &str) -> Planes {
        let (channel, spatial) = self.gates(guide, prefix);
        let mut out = target.clone();
        for c in 0..target.c {
            for i in 0..target.h {
                for j in 0..target.w {
                    *out.at_mut(c, i, j) *= channel[c] * spatial.at(0, i, j);
                }
            }
        }
        out
    }

    pub fn synthesis(&self, y: &Planes, ffm: bool) -> Planes {
        let mut h = if ffm {
            self.gate(y, y, "g_d.ffm")
        } else {
            y.clone()
        };
        for i in 0..4 {
            h = self.deconv(&h, &format!("g_d.deconv{i}"));
            if i < 3 {
                h = self.gdn(&h, &format!("g_d.igdn{i}"), true);
            }
        }
        h
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}
