//! Output heads: the adaptive fusion of a learned baseline with gated,
//! smoothed reservation counts, and a plain linear head.
//!
//! `yhat[h] = b[h] + r[h] * sum_u k[u] * a[h - u]` where `b = softplus(mlp_b(o))`,
//! `r = sigmoid(mlp_r(o))`, `a = x_dec_raw * w_res` and `k = softmax(kernel_logits)`.

use crate::autodiff::{self, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

pub const DEFAULT_KERNEL_SIZE: usize = 5;

/// One-hidden-layer perceptron `gelu(x w1 + b1) w2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub w1: Mat<T>,
    pub b1: Mat<T>,
    pub w2: Mat<T>,
    pub b2: Mat<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(d: usize, hidden: usize, out: usize) -> Self {
        Mlp {
            w1: Mat::zeros(d, hidden),
            b1: Mat::zeros(1, hidden),
            w2: Mat::zeros(hidden, out),
            b2: Mat::zeros(1, out),
        }
    }

    fn bind(&self, tape: &mut Tape<T>) -> MlpVars {
        MlpVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    pub mlp_b: Mlp<T>,
    pub mlp_r: Mlp<T>,
    /// `C_res x C_out` reservation aggregation.
    pub w_res: Mat<T>,
    /// `1 x K` logits of the smoothing kernel.
    pub kernel_logits: Mat<T>,
}

impl<T: Scalar> FusionParams<T> {
    pub fn zeros(d: usize, c_res: usize, c_out: usize, kernel_size: usize) -> Self {
        FusionParams {
            mlp_b: Mlp::zeros(d, d, c_out),
            mlp_r: Mlp::zeros(d, d, c_out),
            w_res: Mat::zeros(c_res, c_out),
            kernel_logits: Mat::zeros(1, kernel_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel_logits.len();
        if self.kernel_logits.rows() != 1 || k.is_multiple_of(2) {
            return Err(Error::Shape(format!("kernel must be 1 x K with K odd, got {:?}", self.kernel_logits.shape())));
        }
        let c_out = self.w_res.cols();
        for (name, m) in [("mlp_b", &self.mlp_b), ("mlp_r", &self.mlp_r)] {
            if m.w2.cols() != c_out || m.b2.cols() != c_out || m.w1.cols() != m.w2.rows() {
                return Err(Error::Shape(format!("{name} does not map to {c_out} output channels")));
            }
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape<T>) -> FusionVars {
        FusionVars {
            mlp_b: self.mlp_b.bind(tape),
            mlp_r: self.mlp_r.bind(tape),
            w_res: tape.leaf(self.w_res.clone()),
            kernel_logits: tape.leaf(self.kernel_logits.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles of the fusion parameters.
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    pub mlp_b: MlpVars,
    pub mlp_r: MlpVars,
    pub w_res: Var,
    pub kernel_logits: Var,
}

/// Tape handles of the three components and their combination.
#[derive(Clone, Copy, Debug)]
pub struct FusionNodes {
    pub yhat: Var,
    pub baseline: Var,
    pub gate: Var,
    pub smoothed: Var,
}

/// Per-step components of a fused prediction, all `L_dec x C_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition<T> {
    pub baseline: Mat<T>,
    pub gate: Mat<T>,
    pub smoothed: Mat<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput<T> {
    pub yhat: Mat<T>,
    pub parts: Decomposition<T>,
}

pub fn kernel_weights<T: Scalar>(kernel_logits: &[T]) -> Vec<T> {
    autodiff::softmax_rows(&Mat::row_vector(kernel_logits)).into_vec()
}

fn mlp_graph<T: Scalar>(tape: &mut Tape<T>, x: Var, m: &MlpVars) -> Var {
    let h = tape.matmul(x, m.w1);
    let h = tape.add_row(h, m.b1);
    let h = tape.gelu(h);
    let o = tape.matmul(h, m.w2);
    tape.add_row(o, m.b2)
}

/// Records the fusion head on `tape`.
pub fn fuse_graph<T: Scalar>(tape: &mut Tape<T>, o_dec: Var, x_dec_raw: Var, p: &FusionVars) -> FusionNodes {
    let pre_b = mlp_graph(tape, o_dec, &p.mlp_b);
    let baseline = tape.softplus(pre_b);
    let pre_r = mlp_graph(tape, o_dec, &p.mlp_r);
    let gate = tape.sigmoid(pre_r);
    let a1 = tape.matmul(x_dec_raw, p.w_res);
    let k = tape.softmax_rows(p.kernel_logits);
    let smoothed = tape.conv_same(a1, k);
    let gated = tape.mul(gate, smoothed);
    let yhat = tape.add(baseline, gated);
    FusionNodes {
        yhat,
        baseline,
        gate,
        smoothed,
    }
}

/// Evaluates the fusion head on `o_dec` (`L x d`) and raw reservation
/// features `x_dec_raw` (`L x C_res`).
pub fn fuse<T: Scalar>(o_dec: &Mat<T>, x_dec_raw: &Mat<T>, params: &FusionParams<T>) -> Result<FusionOutput<T>> {
    params.validate()?;
    let d = params.mlp_b.w1.rows();
    if o_dec.cols() != d || params.mlp_r.w1.rows() != d {
        return Err(Error::Shape(format!("o_dec has width {}, head expects {d}", o_dec.cols())));
    }
    if x_dec_raw.rows() != o_dec.rows() || x_dec_raw.cols() != params.w_res.rows() {
        return Err(Error::Shape(format!(
            "reservation block {:?} does not match {} steps x {} channels",
            x_dec_raw.shape(),
            o_dec.rows(),
            params.w_res.rows()
        )));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let o = tape.leaf(o_dec.clone());
    let x = tape.leaf(x_dec_raw.clone());
    let n = fuse_graph(&mut tape, o, x, &vars);
    let out = FusionOutput {
        yhat: tape.value(n.yhat).clone(),
        parts: Decomposition {
            baseline: tape.value(n.baseline).clone(),
            gate: tape.value(n.gate).clone(),
            smoothed: tape.value(n.smoothed).clone(),
        },
    };
    if !out.yhat.all_finite() {
        return Err(Error::Numeric("fusion head produced non-finite predictions".into()));
    }
    Ok(out)
}

/// Linear `d -> C_out` map per time step.
pub fn plain_head_graph<T: Scalar>(tape: &mut Tape<T>, o_dec: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(o_dec, w);
    tape.add_row(y, b)
}

pub fn plain_head<T: Scalar>(o_dec: &Mat<T>, w: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if o_dec.cols() != w.rows() || b.shape() != (1, w.cols()) {
        return Err(Error::Shape(format!(
            "plain head {:?} + {:?} cannot map {:?}",
            w.shape(),
            b.shape(),
            o_dec.shape()
        )));
    }
    let mut tape = Tape::new();
    let (o, w, b) = (tape.leaf(o_dec.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let y = plain_head_graph(&mut tape, o, w, b);
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat<f64> {
        Mat::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
    }

    fn random_params(rng: &mut ChaCha8Rng, d: usize, c_res: usize, c_out: usize, scale: f64) -> FusionParams<f64> {
        let mlp = |rng: &mut ChaCha8Rng| Mlp {
            w1: random(rng, d, d, scale),
            b1: random(rng, 1, d, scale),
            w2: random(rng, d, c_out, scale),
            b2: random(rng, 1, c_out, scale),
        };
        FusionParams {
            mlp_b: mlp(rng),
            mlp_r: mlp(rng),
            w_res: random(rng, c_res, c_out, scale),
            kernel_logits: random(rng, 1, 5, scale),
        }
    }

    #[test]
    fn uniform_kernel_from_zero_logits() {
        for k in kernel_weights(&[0.0f64; 5]) {
            assert!((k - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn peaked_kernel() {
        let k = kernel_weights(&[10.0f64, 0.0, 0.0, 0.0, 0.0]);
        let oracle = 10f64.exp() / (10f64.exp() + 4.0);
        assert!((k[0] - oracle).abs() < 1e-12);
        assert!((k[0] - 0.99982).abs() < 1e-5);
    }

    #[test]
    fn gate_off_gives_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_params(&mut rng, 4, 2, 1, 1.0);
        p.mlp_r.b2 = Mat::filled(1, 1, -800.0);
        let o = random(&mut rng, 10, 4, 1.0);
        let x = random(&mut rng, 10, 2, 100.0);
        let out = fuse(&o, &x, &p).unwrap();
        assert_eq!(out.yhat, out.parts.baseline);
    }

    #[test]
    fn delta_kernel_passes_reservations_through() {
        let mut p = FusionParams::<f64>::zeros(3, 2, 1, 5);
        p.mlp_b.b2 = Mat::filled(1, 1, -800.0); // softplus -> 0
        p.mlp_r.b2 = Mat::filled(1, 1, 800.0); // sigmoid -> 1
        p.w_res.set(0, 0, 1.0);
        p.kernel_logits = Mat::row_vector(&[-800.0, -800.0, 0.0, -800.0, -800.0]);
        let x = Mat::from_fn(6, 2, |i, j| (i * 10 + j) as f64);
        let out = fuse(&Mat::zeros(6, 3), &x, &p).unwrap();
        assert_eq!(out.yhat.column(0), x.column(0));
    }

    #[test]
    fn hand_convolution() {
        let signal = Mat::from_vec(4, 1, vec![0.0, 4.0, 0.0, 0.0]).unwrap();
        // Brute-force: out[h] = sum over u of k[u+1] * a[h-u], zero outside.
        let k = [0.25, 0.5, 0.25];
        let a = [0.0, 4.0, 0.0, 0.0];
        let brute: Vec<f64> = (0..4i32)
            .map(|h| {
                (-1..=1i32)
                    .filter(|u| (0..4).contains(&(h - u)))
                    .map(|u| k[(u + 1) as usize] * a[(h - u) as usize])
                    .sum()
            })
            .collect();
        assert_eq!(brute, vec![1.0, 2.0, 1.0, 0.0]);
        assert_eq!(autodiff::conv_same(&signal, &k).into_vec(), brute);
    }

    #[test]
    fn uniform_kernel_on_constant_signal() {
        let a = Mat::filled(9, 1, 3.0f64);
        let s = autodiff::conv_same(&a, &kernel_weights(&[0.0; 5]));
        for h in 0..9 {
            let v = s.get(h, 0);
            if (2..7).contains(&h) {
                assert!((v - 3.0).abs() < 1e-12);
            } else {
                assert!(v <= 3.0);
            }
        }
    }

    #[test]
    fn plain_head_shapes_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(&mut rng, 16, 2, 1.0);
        let zb = Mat::zeros(1, 2);
        assert_eq!(plain_head(&Mat::zeros(70, 16), &Mat::zeros(16, 2), &zb).unwrap(), Mat::zeros(70, 2));
        let o = random(&mut rng, 14, 16, 1.0);
        let y1 = plain_head(&o, &w, &zb).unwrap();
        let y3 = plain_head(&o.scale(3.0), &w, &zb).unwrap();
        assert!(y3.max_abs_diff(&y1.scale(3.0)) < 1e-12);
        for din in [1, 3, 5, 7, 14] {
            for c_out in [1, 2] {
                let y = plain_head::<f64>(&Mat::zeros(din * 14, 16), &Mat::zeros(16, c_out), &Mat::zeros(1, c_out)).unwrap();
                assert_eq!(y.shape(), (din * 14, c_out));
            }
        }
        assert!(plain_head(&o, &Mat::zeros(8, 2), &zb).is_err());
    }

    #[test]
    fn shape_errors() {
        let p = FusionParams::<f64>::zeros(4, 2, 1, 5);
        assert!(fuse(&Mat::zeros(5, 3), &Mat::zeros(5, 2), &p).is_err());
        assert!(fuse(&Mat::zeros(5, 4), &Mat::zeros(6, 2), &p).is_err());
        let even = FusionParams::<f64>::zeros(4, 2, 1, 4);
        assert!(fuse(&Mat::zeros(5, 4), &Mat::zeros(5, 2), &even).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn components_stay_in_range(seed in any::<u64>(), scale in 0.05f64..1.0, c_out in 1usize..=2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, 4, 2 * c_out, c_out, scale);
            let o = random(&mut rng, 12, 4, scale);
            let x = Mat::from_fn(12, 2 * c_out, |_, _| rng.random_range(0.0..1000.0));
            let out = fuse(&o, &x, &p).unwrap();
            prop_assert!(out.parts.baseline.as_slice().iter().all(|&b| b >= 0.0));
            prop_assert!(out.parts.gate.as_slice().iter().all(|&r| r > 0.0 && r < 1.0));
            let k = kernel_weights(p.kernel_logits.as_slice());
            prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(k.iter().all(|&v| v > 0.0));
            let zero = fuse(&o, &Mat::zeros(12, 2 * c_out), &p).unwrap();
            prop_assert_eq!(zero.yhat, zero.parts.baseline);
        }
    }
}
