//! Reductions and layout operations.

use crate::float::Float;
use crate::tensor::{numel, Backward, GradAcc, Shape, Tensor};

fn strides(shape: Shape) -> [usize; 4] {
    [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ]
}

struct SumAxes<T: Float> {
    input: Tensor<T>,
    axes: [bool; 4],
}

fn reduced_shape(shape: Shape, axes: [bool; 4]) -> Shape {
    let mut out = shape;
    for d in 0..4 {
        if axes[d] {
            out[d] = 1;
        }
    }
    out
}

/// Calls `f(in_index, out_index)` mapping every input element onto its
/// reduced slot.
fn for_each_reduce(shape: Shape, axes: [bool; 4], mut f: impl FnMut(usize, usize)) {
    let out = reduced_shape(shape, axes);
    let so = strides(out);
    let mask = |d: usize| if axes[d] { 0 } else { so[d] };
    let m = [mask(0), mask(1), mask(2), mask(3)];
    let mut i = 0;
    for i0 in 0..shape[0] {
        for i1 in 0..shape[1] {
            for i2 in 0..shape[2] {
                let base = i0 * m[0] + i1 * m[1] + i2 * m[2];
                for i3 in 0..shape[3] {
                    f(i, base + i3 * m[3]);
                    i += 1;
                }
            }
        }
    }
}

impl<T: Float> Backward<T> for SumAxes<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }
    fn backward(&self, _out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let shape = self.input.shape();
        let axes = self.axes;
        if let Some(g) = acc.slot(&self.input) {
            for_each_reduce(shape, axes, |i, o| g[i] += grad[o]);
        }
    }
}

impl<T: Float> Tensor<T> {
    /// Sum over the marked axes, keeping them as size 1.
    pub fn sum_axes(&self, axes: [bool; 4]) -> Tensor<T> {
        let shape = self.shape();
        let out_shape = reduced_shape(shape, axes);
        let mut data = vec![T::zero(); numel(&out_shape)];
        let x = self.data();
        for_each_reduce(shape, axes, |i, o| data[o] += x[i]);
        Tensor::from_op(
            data,
            out_shape,
            Box::new(SumAxes {
                input: self.clone(),
                axes,
            }),
        )
    }

    pub fn mean_axes(&self, axes: [bool; 4]) -> Tensor<T> {
        let shape = self.shape();
        let count: usize = (0..4).filter(|&d| axes[d]).map(|d| shape[d]).product();
        self.sum_axes(axes).scale(1.0 / count as f64)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        self.sum_axes([true; 4])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        self.mean_axes([true; 4])
    }
}

struct Reshape<T: Float> {
    input: Tensor<T>,
}

impl<T: Float> Backward<T> for Reshape<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }
    fn backward(&self, _out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        if let Some(g) = acc.slot(&self.input) {
            for (gi, &d) in g.iter_mut().zip(grad) {
                *gi += d;
            }
        }
    }
}

struct Narrow<T: Float> {
    input: Tensor<T>,
    axis: usize,
    start: usize,
}

/// Visits the `[start, start+len)` window of `axis` in a buffer of shape
/// `big`, calling `f(big_index, small_index)` for each element.
fn for_each_window(
    big: Shape,
    axis: usize,
    start: usize,
    len: usize,
    mut f: impl FnMut(usize, usize),
) {
    let outer: usize = big[..axis].iter().product();
    let inner: usize = big[axis + 1..].iter().product();
    let big_block = big[axis] * inner;
    let small_block = len * inner;
    for o in 0..outer {
        let b0 = o * big_block + start * inner;
        let s0 = o * small_block;
        for k in 0..small_block {
            f(b0 + k, s0 + k);
        }
    }
}

impl<T: Float> Backward<T> for Narrow<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }
    fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let big = self.input.shape();
        let len = out.shape()[self.axis];
        if let Some(g) = acc.slot(&self.input) {
            for_each_window(big, self.axis, self.start, len, |b, s| g[b] += grad[s]);
        }
    }
}

struct Cat<T: Float> {
    inputs: Vec<Tensor<T>>,
    axis: usize,
}

impl<T: Float> Backward<T> for Cat<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        self.inputs.iter().collect()
    }
    fn backward(&self, out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let big = out.shape();
        let mut start = 0;
        for t in &self.inputs {
            let len = t.shape()[self.axis];
            if let Some(g) = acc.slot(t) {
                for_each_window(big, self.axis, start, len, |b, s| g[s] += grad[b]);
            }
            start += len;
        }
    }
}

struct Permute<T: Float> {
    input: Tensor<T>,
    perm: [usize; 4],
}

/// Output element `o` of the permutation reads input element `map[o]`.
fn permute_map(shape: Shape, perm: [usize; 4]) -> (Shape, Vec<usize>) {
    let out: Shape = [
        shape[perm[0]],
        shape[perm[1]],
        shape[perm[2]],
        shape[perm[3]],
    ];
    let si = strides(shape);
    let s = [si[perm[0]], si[perm[1]], si[perm[2]], si[perm[3]]];
    let mut map = Vec::with_capacity(numel(&out));
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                for i3 in 0..out[3] {
                    map.push(i0 * s[0] + i1 * s[1] + i2 * s[2] + i3 * s[3]);
                }
            }
        }
    }
    (out, map)
}

impl<T: Float> Backward<T> for Permute<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }
    fn backward(&self, _out: &Tensor<T>, grad: &[T], acc: &mut GradAcc<T>) {
        let (_, map) = permute_map(self.input.shape(), self.perm);
        if let Some(g) = acc.slot(&self.input) {
            for (o, &i) in map.iter().enumerate() {
                g[i] += grad[o];
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    pub fn reshape(&self, shape: Shape) -> Tensor<T> {
        assert_eq!(
            numel(&shape),
            self.numel(),
            "cannot reshape {:?} to {shape:?}",
            self.shape()
        );
        Tensor::from_op(
            self.to_vec(),
            shape,
            Box::new(Reshape {
                input: self.clone(),
            }),
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let big = self.shape();
        assert!(start + len <= big[axis], "narrow out of range");
        let mut small = big;
        small[axis] = len;
        let mut data = vec![T::zero(); numel(&small)];
        let src = self.data();
        for_each_window(big, axis, start, len, |b, s| data[s] = src[b]);
        Tensor::from_op(
            data,
            small,
            Box::new(Narrow {
                input: self.clone(),
                axis,
                start,
            }),
        )
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn cat(parts: &[Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "cat of nothing");
        let mut shape = parts[0].shape();
        shape[axis] = 0;
        for p in parts {
            let s = p.shape();
            for d in 0..4 {
                if d != axis {
                    assert_eq!(s[d], shape[d], "cat: mismatched dim {d}");
                }
            }
            shape[axis] += s[axis];
        }
        let mut data = vec![T::zero(); numel(&shape)];
        let mut start = 0;
        for p in parts {
            let src = p.data();
            let len = p.shape()[axis];
            for_each_window(shape, axis, start, len, |b, s| data[b] = src[s]);
            start += len;
        }
        Tensor::from_op(
            data,
            shape,
            Box::new(Cat {
                inputs: parts.to_vec(),
                axis,
            }),
        )
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: [usize; 4]) -> Tensor<T> {
        let (out, map) = permute_map(self.shape(), perm);
        let x = self.data();
        let data = map.iter().map(|&i| x[i]).collect();
        Tensor::from_op(
            data,
            out,
            Box::new(Permute {
                input: self.clone(),
                perm,
            }),
        )
    }
}
