//! Unary pointwise maps and broadcasting binary arithmetic.

use crate::float::{normal_cdf, normal_pdf, Float};
use crate::tensor::{numel, Backward, GradAcc, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Neg,
    Scale(T),
    AddScalar(T),
    Square,
    Sqrt,
    Exp,
    Ln,
    Abs,
    Sigmoid,
    Tanh,
    Softplus,
    Relu,
    LeakyRelu(T),
    Powf(T),
    NormalCdf,
    /// `max(x, bound)`; gradient passes while `x >= bound` or while the
    /// incoming gradient would push `x` upwards.
    LowerBound(T),
    Clamp(T, T),
}

impl<T: Float> Unary<T> {
    fn apply(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Scale(c) => x * c,
            Unary::AddScalar(c) => x + c,
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Abs => x.abs(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::Relu => x.max(T::zero()),
            Unary::LeakyRelu(a) => {
                if x > T::zero() {
                    x
                } else {
                    a * x
                }
            }
            Unary::Powf(p) => x.powf(p),
            Unary::NormalCdf => normal_cdf(x),
            Unary::LowerBound(b) => x.max(b),
            Unary::Clamp(lo, hi) => x.max(lo).min(hi),
        }
    }

    /// d out / d in, given input `x`, output `y` and upstream gradient `g`.
    fn grad(self, x: T, y: T, g: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match self {
            Unary::Neg => -g,
            Unary::Scale(c) => g * c,
            Unary::AddScalar(_) => g,
            Unary::Square => g * (x + x),
            Unary::Sqrt => g / (y + y),
            Unary::Exp => g * y,
            Unary::Ln => g / x,
            Unary::Abs => {
                if x > zero {
                    g
                } else if x < zero {
                    -g
                } else {
                    zero
                }
            }
            Unary::Sigmoid => g * y * (one - y),
            Unary::Tanh => g * (one - y * y),
            Unary::Softplus => g * sigmoid(x),
            Unary::Relu => {
                if x > zero {
                    g
                } else {
                    zero
                }
            }
            Unary::LeakyRelu(a) => {
                if x > zero {
                    g
                } else {
                    g * a
                }
            }
            Unary::Powf(p) => g * p * x.powf(p - one),
            Unary::NormalCdf => g * normal_pdf(x),
            Unary::LowerBound(b) => {
                if x >= b || g < zero {
                    g
                } else {
                    zero
                }
            }
            Unary::Clamp(lo, hi) => {
                if x >= lo && x <= hi {
                    g
                } else {
                    zero
                }
            }
        }
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Float>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

struct UnaryOp<T: Float> {
    kind: Unary<T>,
    input: Tensor<T>,
}

impl<T: Float> Backward<T> for UnaryOp<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }
    fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let kind = self.kind;
        let x = self.input.data();
        let y = out.data();
        if let Some(gx) = acc.slot(&self.input) {
            for i in 0..gx.len() {
                gx[i] += kind.grad(x[i], y[i], grad[i]);
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    fn unary(&self, kind: Unary<T>) -> Tensor<T> {
        let data = self.data().iter().map(|&x| kind.apply(x)).collect();
        Tensor::from_op(
            data,
            self.shape(),
            Box::new(UnaryOp {
                kind,
                input: self.clone(),
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(Unary::Neg)
    }
    pub fn scale(&self, c: f64) -> Tensor<T> {
        self.unary(Unary::Scale(T::from_f64(c)))
    }
    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        self.unary(Unary::AddScalar(T::from_f64(c)))
    }
    pub fn square(&self) -> Tensor<T> {
        self.unary(Unary::Square)
    }
    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(Unary::Sqrt)
    }
    pub fn exp(&self) -> Tensor<T> {
        self.unary(Unary::Exp)
    }
    pub fn ln(&self) -> Tensor<T> {
        self.unary(Unary::Ln)
    }
    pub fn abs(&self) -> Tensor<T> {
        self.unary(Unary::Abs)
    }
    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(Unary::Sigmoid)
    }
    pub fn tanh(&self) -> Tensor<T> {
        self.unary(Unary::Tanh)
    }
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(Unary::Softplus)
    }
    pub fn relu(&self) -> Tensor<T> {
        self.unary(Unary::Relu)
    }
    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        self.unary(Unary::LeakyRelu(T::from_f64(slope)))
    }
    pub fn powf(&self, p: f64) -> Tensor<T> {
        self.unary(Unary::Powf(T::from_f64(p)))
    }
    pub fn normal_cdf(&self) -> Tensor<T> {
        self.unary(Unary::NormalCdf)
    }
    pub fn lower_bound(&self, bound: f64) -> Tensor<T> {
        self.unary(Unary::LowerBound(T::from_f64(bound)))
    }
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        self.unary(Unary::Clamp(T::from_f64(lo), T::from_f64(hi)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

fn broadcast_shape(a: Shape, b: Shape) -> Shape {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
        };
    }
    out
}

/// Element strides of `shape` when read with the iteration order of `out`;
/// broadcast axes get stride 0.
fn bstrides(shape: Shape) -> [usize; 4] {
    let mut s = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        s[d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    s
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_bcast(out: Shape, a: Shape, b: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let sa = bstrides(a);
    let sb = bstrides(b);
    let mut o = 0;
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..out[3] {
                    f(o, base_a + i3 * sa[3], base_b + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

struct BinaryOp<T: Float> {
    kind: Binary,
    a: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Float> Backward<T> for BinaryOp<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }
    fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let (sa, sb, so) = (self.a.shape(), self.b.shape(), out.shape());
        let a = self.a.data();
        let b = self.b.data();
        let kind = self.kind;
        if let Some(ga) = acc.slot(&self.a) {
            for_each_bcast(so, sa, sb, |o, ia, ib| {
                ga[ia] += match kind {
                    Binary::Add | Binary::Sub => grad[o],
                    Binary::Mul => grad[o] * b[ib],
                    Binary::Div => grad[o] / b[ib],
                }
            });
        }
        if let Some(gb) = acc.slot(&self.b) {
            for_each_bcast(so, sa, sb, |o, ia, ib| {
                gb[ib] += match kind {
                    Binary::Add => grad[o],
                    Binary::Sub => -grad[o],
                    Binary::Mul => grad[o] * a[ia],
                    Binary::Div => -grad[o] * a[ia] / (b[ib] * b[ib]),
                }
            });
        }
    }
}

impl<T: Float> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: Binary) -> Tensor<T> {
        let (sa, sb) = (self.shape(), other.shape());
        let out_shape = broadcast_shape(sa, sb);
        let a = self.data();
        let b = other.data();
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data = if sa == sb {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut data = vec![T::zero(); numel(&out_shape)];
            for_each_bcast(out_shape, sa, sb, |o, ia, ib| data[o] = f(a[ia], b[ib]));
            data
        };
        Tensor::from_op(
            data,
            out_shape,
            Box::new(BinaryOp {
                kind,
                a: self.clone(),
                b: other.clone(),
            }),
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Add)
    }
    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Sub)
    }
    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Mul)
    }
    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Div)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_mul_channel_gate() {
        let x = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0], [1, 2, 1, 2]);
        let g = Tensor::<f64>::from_f64(&[10.0, 0.5], [1, 2, 1, 1]);
        assert_eq!(x.mul(&g).data(), &[10.0, 20.0, 1.5, 2.0]);
    }

    #[test]
    #[should_panic]
    fn incompatible_shapes_panic() {
        let a = Tensor::<f32>::zeros([1, 2, 1, 1]);
        let b = Tensor::<f32>::zeros([1, 3, 1, 1]);
        let _ = a.add(&b);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0f64) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }
}
