//! 2-D convolution and its adjoint (transposed convolution), both lowered to
//! `im2col` + GEMM.

use crate::float::{gemm, Float};
use crate::tensor::{Backward, GradAcc, Tensor};

/// Square-kernel geometry shared by both directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output extent of a forward convolution over `n` input samples.
    pub fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Unfolds one `c×h×w` image into a `(c·k·k)×(ho·wo)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let hw_o = ho * wo;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw_o..(row + 1) * hw_o];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    img: &mut [T],
) {
    let k = g.kernel;
    let hw_o = ho * wo;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw_o..(row + 1) * hw_o];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1 && g.pad == 0
}

struct Conv2d<T: Float> {
    x: Tensor<T>,
    w: Tensor<T>,
    b: Option<Tensor<T>>,
    geom: ConvGeom,
}

impl<T: Float> Backward<T> for Conv2d<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.x, &self.w];
        if let Some(b) = &self.b {
            v.push(b);
        }
        v
    }

    fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let [n, ci, h, w] = self.x.shape();
        let [_, co, ho, wo] = out.shape();
        let g = self.geom;
        let ckk = ci * g.kernel * g.kernel;
        let hw_o = ho * wo;
        let x = self.x.data();
        let wt = self.w.data();

        if let Some(b) = &self.b {
            if let Some(gb) = acc.slot(b) {
                for ni in 0..n {
                    for c in 0..co {
                        let off = (ni * co + c) * hw_o;
                        gb[c] += grad[off..off + hw_o].iter().copied().sum::<T>();
                    }
                }
            }
        }

        let want_w = self.w.requires_grad();
        let want_x = self.x.requires_grad();
        let mut cols = vec![T::zero(); ckk * hw_o];
        let mut gw = vec![T::zero(); co * ckk];
        let mut gx = if want_x {
            vec![T::zero(); self.x.numel()]
        } else {
            Vec::new()
        };
        for ni in 0..n {
            let img = &x[ni * ci * h * w..(ni + 1) * ci * h * w];
            let go = &grad[ni * co * hw_o..(ni + 1) * co * hw_o];
            if want_w {
                let cols_ref: &[T] = if is_pointwise(g) {
                    img
                } else {
                    im2col(img, ci, h, w, g, ho, wo, &mut cols);
                    &cols
                };
                // gw[co, ckk] += go[co, hw] * cols^T
                gemm(co, hw_o, ckk, go, false, cols_ref, true, &mut gw, true);
            }
            if want_x {
                let gimg = &mut gx[ni * ci * h * w..(ni + 1) * ci * h * w];
                if is_pointwise(g) {
                    gemm(ckk, co, hw_o, wt, true, go, false, gimg, true);
                } else {
                    // gcols[ckk, hw] = w^T * go
                    gemm(ckk, co, hw_o, wt, true, go, false, &mut cols, false);
                    col2im(&cols, ci, h, w, g, ho, wo, gimg);
                }
            }
        }
        if let Some(slot) = acc.slot(&self.w) {
            for (s, v) in slot.iter_mut().zip(gw) {
                *s += v;
            }
        }
        if let Some(slot) = acc.slot(&self.x) {
            for (s, v) in slot.iter_mut().zip(gx) {
                *s += v;
            }
        }
    }
}

struct ConvTranspose2d<T: Float> {
    x: Tensor<T>,
    w: Tensor<T>,
    b: Option<Tensor<T>>,
    geom: ConvGeom,
}

impl<T: Float> Backward<T> for ConvTranspose2d<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.x, &self.w];
        if let Some(b) = &self.b {
            v.push(b);
        }
        v
    }

    fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let [n, ci, h, w] = self.x.shape();
        let [_, co, ho, wo] = out.shape();
        let g = self.geom;
        let ckk = co * g.kernel * g.kernel;
        let hw = h * w;
        let x = self.x.data();
        let wt = self.w.data();

        if let Some(b) = &self.b {
            if let Some(gb) = acc.slot(b) {
                let plane = ho * wo;
                for ni in 0..n {
                    for c in 0..co {
                        let off = (ni * co + c) * plane;
                        gb[c] += grad[off..off + plane].iter().copied().sum::<T>();
                    }
                }
            }
        }

        let want_w = self.w.requires_grad();
        let want_x = self.x.requires_grad();
        let mut cols = vec![T::zero(); ckk * hw];
        let mut gw = vec![T::zero(); ci * ckk];
        let mut gx = if want_x {
            vec![T::zero(); self.x.numel()]
        } else {
            Vec::new()
        };
        for ni in 0..n {
            let go = &grad[ni * co * ho * wo..(ni + 1) * co * ho * wo];
            im2col(go, co, ho, wo, g, h, w, &mut cols);
            if want_w {
                let img = &x[ni * ci * hw..(ni + 1) * ci * hw];
                // gw[ci, ckk] += x[ci, hw] * gcols^T
                gemm(ci, hw, ckk, img, false, &cols, true, &mut gw, true);
            }
            if want_x {
                // gx[ci, hw] = w[ci, ckk] * gcols[ckk, hw]
                let gimg = &mut gx[ni * ci * hw..(ni + 1) * ci * hw];
                gemm(ci, ckk, hw, wt, false, &cols, false, gimg, true);
            }
        }
        if let Some(slot) = acc.slot(&self.w) {
            for (s, v) in slot.iter_mut().zip(gw) {
                *s += v;
            }
        }
        if let Some(slot) = acc.slot(&self.x) {
            for (s, v) in slot.iter_mut().zip(gx) {
                *s += v;
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    /// Cross-correlation of `self` (`N×Ci×H×W`) with `weight` (`Co×Ci×k×k`)
    /// plus an optional per-channel `bias` (`Co×1×1×1`).
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geom: ConvGeom,
    ) -> Tensor<T> {
        let [n, ci, h, w] = self.shape();
        let [co, wci, kh, kw] = weight.shape();
        assert_eq!(
            wci, ci,
            "conv2d: weight expects {wci} input channels, got {ci}"
        );
        assert!(
            kh == geom.kernel && kw == geom.kernel,
            "conv2d: kernel size mismatch"
        );
        assert!(h + 2 * geom.pad >= geom.kernel && w + 2 * geom.pad >= geom.kernel);
        if let Some(b) = bias {
            assert_eq!(b.numel(), co, "conv2d: bias length");
        }
        let ho = geom.out_len(h);
        let wo = geom.out_len(w);
        let ckk = ci * geom.kernel * geom.kernel;
        let hw_o = ho * wo;
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![T::zero(); n * co * hw_o];
        let mut cols = if is_pointwise(geom) {
            Vec::new()
        } else {
            vec![T::zero(); ckk * hw_o]
        };
        for ni in 0..n {
            let img = &x[ni * ci * h * w..(ni + 1) * ci * h * w];
            let cols_ref: &[T] = if is_pointwise(geom) {
                img
            } else {
                im2col(img, ci, h, w, geom, ho, wo, &mut cols);
                &cols
            };
            let dst = &mut out[ni * co * hw_o..(ni + 1) * co * hw_o];
            gemm(co, ckk, hw_o, wt, false, cols_ref, false, dst, false);
            if let Some(b) = bias {
                for (c, &bv) in b.data().iter().enumerate() {
                    for v in &mut dst[c * hw_o..(c + 1) * hw_o] {
                        *v += bv;
                    }
                }
            }
        }
        Tensor::from_op(
            out,
            [n, co, ho, wo],
            Box::new(Conv2d {
                x: self.clone(),
                w: weight.clone(),
                b: bias.cloned(),
                geom,
            }),
        )
    }

    /// Transposed convolution: the adjoint of [`conv2d`](Self::conv2d) with
    /// the same geometry. `weight` is `Ci×Co×k×k`; the output extent is
    /// `(H−1)·stride − 2·pad + k + output_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geom: ConvGeom,
        output_pad: usize,
    ) -> Tensor<T> {
        let [n, ci, h, w] = self.shape();
        let [wci, co, kh, kw] = weight.shape();
        assert_eq!(
            wci, ci,
            "conv_transpose2d: weight expects {wci} input channels, got {ci}"
        );
        assert!(
            kh == geom.kernel && kw == geom.kernel,
            "conv_transpose2d: kernel size mismatch"
        );
        assert!(
            output_pad < geom.stride,
            "output padding must be below the stride"
        );
        let ho = (h - 1) * geom.stride + geom.kernel + output_pad - 2 * geom.pad;
        let wo = (w - 1) * geom.stride + geom.kernel + output_pad - 2 * geom.pad;
        debug_assert_eq!(geom.out_len(ho), h);
        let ckk = co * geom.kernel * geom.kernel;
        let hw = h * w;
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![T::zero(); n * co * ho * wo];
        let mut cols = vec![T::zero(); ckk * hw];
        for ni in 0..n {
            let img = &x[ni * ci * hw..(ni + 1) * ci * hw];
            // cols[ckk, hw] = w^T * x
            gemm(ckk, ci, hw, wt, true, img, false, &mut cols, false);
            let dst = &mut out[ni * co * ho * wo..(ni + 1) * co * ho * wo];
            col2im(&cols, co, ho, wo, geom, h, w, dst);
            if let Some(b) = bias {
                for (c, &bv) in b.data().iter().enumerate() {
                    for v in &mut dst[c * ho * wo..(c + 1) * ho * wo] {
                        *v += bv;
                    }
                }
            }
        }
        Tensor::from_op(
            out,
            [n, co, ho, wo],
            Box::new(ConvTranspose2d {
                x: self.clone(),
                w: weight.clone(),
                b: bias.cloned(),
                geom,
            }),
        )
    }
}
