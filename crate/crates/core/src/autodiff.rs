//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of
//! a scalar output with respect to every node, leaves included.

use crate::scalar::Scalar;
use crate::tensor::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Gelu(Var),
    Softplus(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, inv_std: Vec<T> },
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Mask { x: Var, mask: Vec<T> },
    ConvSame { signal: Var, kernel: Var },
    Mae { pred: Var, target: Mat<T> },
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
}

/// Gradients of a scalar output, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for the leaf `v`, or `None` when `v` does not influence the
    /// output. Gradients of interior nodes are released during the sweep.
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<T>> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// `log(1 + e^x)` in the overflow-free form `log1p(e^{-|x|}) + max(x, 0)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    (-x.abs()).exp().ln_1p() + x.max(T::zero())
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Mat<T>) -> Mat<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Same-length 1-D convolution of every column of `signal` with `kernel`,
/// zero padded: `out[h] = sum_u kernel[u + K/2] * signal[h - u]` for
/// `u` in `-K/2..=K/2`.
pub fn conv_same<T: Scalar>(signal: &Mat<T>, kernel: &[T]) -> Mat<T> {
    let half = (kernel.len() / 2) as isize;
    let len = signal.rows() as isize;
    let mut out = Mat::zeros(signal.rows(), signal.cols());
    for h in 0..len {
        for (ku, &k) in kernel.iter().enumerate() {
            let src = h - (ku as isize - half);
            if src < 0 || src >= len {
                continue;
            }
            for c in 0..signal.cols() {
                *out.at_mut(h as usize, c) += k * signal.get(src as usize, c);
            }
        }
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((1, av.cols()), bv.shape(), "add_row bias shape");
        let v = Mat::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) + bv.get(0, j));
        self.push(v, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by the `1 x n` row `g`.
    pub fn mul_row(&mut self, a: Var, g: Var) -> Var {
        let (av, gv) = (self.value(a), self.value(g));
        assert_eq!((1, av.cols()), gv.shape(), "mul_row scale shape");
        let v = Mat::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) * gv.get(0, j));
        self.push(v, Op::MulRow(a, g))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize_lossy(xv.cols());
        let eps = T::lit(LAYER_NORM_EPS);
        let mut out = Mat::zeros(xv.rows(), xv.cols());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) / n;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / n;
            let is = T::one() / (var + eps).sqrt();
            for (o, &b) in out.row_mut(i).iter_mut().zip(row) {
                *o = (b - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { x, inv_std })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Mat::concat_cols(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_cols(start, len);
        self.push(v, Op::SliceCols { x, start })
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), mask.len(), "mask length");
        let data = xv.as_slice().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let v = Mat::from_vec(xv.rows(), xv.cols(), data).expect("mask shape");
        self.push(v, Op::Mask { x, mask })
    }

    /// See [`conv_same`]; `kernel` is a `1 x K` node.
    pub fn conv_same(&mut self, signal: Var, kernel: Var) -> Var {
        let v = conv_same(self.value(signal), self.value(kernel).as_slice());
        self.push(v, Op::ConvSame { signal, kernel })
    }

    /// Mean absolute error against a constant target, as a `1 x 1` node.
    pub fn mae(&mut self, pred: Var, target: &Mat<T>) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "mae shape");
        let n = T::from_usize_lossy(pv.len());
        let s = pv
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .fold(T::zero(), |a, (&p, &t)| a + (p - t).abs());
        let v = Mat::filled(1, 1, s / n);
        self.push(
            v,
            Op::Mae {
                pred,
                target: target.clone(),
            },
        )
    }

    /// Gradient of the scalar node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::filled(1, 1, T::one()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, *b, g.column_sums());
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y);
                    let db = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulRow(a, s) => {
                    let (av, sv) = (self.value(*a), self.value(*s));
                    let da = Mat::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * sv.get(0, j));
                    let ds = g.zip_map(av, |x, y| x * y).column_sums();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *s, ds);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Gelu(a) => {
                    let d = g.zip_map(self.value(*a), |gy, x| gy * gelu_grad(x));
                    accumulate(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let d = g.zip_map(self.value(*a), |gy, x| gy * sigmoid(x));
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, |gy, y| gy * y * (T::one() - y));
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let n = T::from_usize_lossy(y.cols());
                    let mut dx = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let mean_g = gr.iter().fold(T::zero(), |a, &b| a + b) / n;
                        let mean_gy =
                            gr.iter().zip(yr).fold(T::zero(), |a, (&p, &q)| a + p * q) / n;
                        for ((d, &gv), &yv) in dx.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *d = inv_std[i] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let dot = gr.iter().zip(yr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        for ((d, &gv), &yv) in dx.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    for i in 0..g.rows() {
                        dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Mask { x, mask } => {
                    let data = g.as_slice().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    let dx = Mat::from_vec(g.rows(), g.cols(), data).expect("mask shape");
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConvSame { signal, kernel } => {
                    let (sv, kv) = (self.value(*signal), self.value(*kernel));
                    let k = kv.as_slice();
                    let half = (k.len() / 2) as isize;
                    let len = sv.rows() as isize;
                    let mut ds = Mat::zeros(sv.rows(), sv.cols());
                    let mut dk = Mat::zeros(1, k.len());
                    for h in 0..len {
                        for (ku, &kw) in k.iter().enumerate() {
                            let src = h - (ku as isize - half);
                            if src < 0 || src >= len {
                                continue;
                            }
                            for c in 0..sv.cols() {
                                let gy = g.get(h as usize, c);
                                *ds.at_mut(src as usize, c) += kw * gy;
                                *dk.at_mut(0, ku) += gy * sv.get(src as usize, c);
                            }
                        }
                    }
                    accumulate(&mut grads, *signal, ds);
                    accumulate(&mut grads, *kernel, dk);
                }
                Op::Mae { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = g.get(0, 0) / T::from_usize_lossy(pv.len());
                    let d = pv.zip_map(target, |p, t| {
                        let diff = p - t;
                        if diff > T::zero() {
                            scale
                        } else if diff < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads, *pred, d);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
