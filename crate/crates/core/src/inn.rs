//! Interval neural networks: layers whose weights and biases are intervals.
//!
//! Weights are stored as a center plus an unconstrained radius parameter,
//! `W = center ± softplus(radius_raw)`, so the bounds stay ordered under any
//! parameter update.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus_inv, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::interval::{imul, Interval, IntervalVector};
use crate::layers::{glorot_limit, glorot_matrix, Activation, Parameterised};
use crate::tensor::Tensor;

/// Initial radius as a fraction of the Glorot limit.
pub const INITIAL_RADIUS_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalDenseLayer {
    pub w_center: Tensor,
    pub w_radius_raw: Tensor,
    pub b_center: Tensor,
    pub b_radius_raw: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug)]
pub struct IntervalDenseVars {
    pub wc: Var,
    pub wr: Var,
    pub bc: Var,
    pub br: Var,
}

impl IntervalDenseVars {
    pub fn vars(&self) -> [Var; 4] {
        [self.wc, self.wr, self.bc, self.br]
    }
}

/// Lower and upper bound handles of an interval-valued tensor on a tape.
#[derive(Clone, Copy, Debug)]
pub struct IntervalVars {
    pub lo: Var,
    pub hi: Var,
}

impl IntervalDenseLayer {
    pub fn new(
        w_center: Tensor,
        w_radius_raw: Tensor,
        b_center: Tensor,
        b_radius_raw: Tensor,
        activation: Activation,
    ) -> Result<Self> {
        if activation == Activation::Tanh {
            return Err(Error::Unsupported(
                "interval layers support relu and linear activations".into(),
            ));
        }
        let (out, inp) = (w_center.rows(), w_center.cols());
        if w_radius_raw.rows() != out
            || w_radius_raw.cols() != inp
            || b_center.len() != out
            || b_radius_raw.len() != out
        {
            return Err(Error::ShapeMismatch {
                op: "IntervalDenseLayer::new",
                lhs: w_center.shape().to_vec(),
                rhs: w_radius_raw.shape().to_vec(),
            });
        }
        Ok(Self {
            w_center,
            w_radius_raw,
            b_center,
            b_radius_raw,
            activation,
        })
    }

    /// Point-valued layer with the given radius on every weight and bias.
    pub fn from_point(weights: Tensor, bias: Tensor, radius: f64, act: Activation) -> Result<Self> {
        let raw = softplus_inv(radius);
        let wr = weights.map(|_| raw);
        let br = bias.map(|_| raw).reshaped(1, bias.len())?;
        let bias = bias.clone().reshaped(1, bias.len())?;
        Self::new(weights, wr, bias, br, act)
    }

    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let center = glorot_matrix(output, input, rng);
        let radius = INITIAL_RADIUS_FRACTION * glorot_limit(input, output);
        let bias = Tensor::zeros(1, output);
        Self::from_point(center, bias, radius, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.w_center.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_center.rows()
    }

    /// Effective `(W_L, W_U)`.
    pub fn weight_bounds(&self) -> (Tensor, Tensor) {
        bounds_of(&self.w_center, &self.w_radius_raw)
    }

    /// Effective `(b_L, b_U)`.
    pub fn bias_bounds(&self) -> (Tensor, Tensor) {
        bounds_of(&self.b_center, &self.b_radius_raw)
    }

    pub fn bind(&self, tape: &mut Tape) -> IntervalDenseVars {
        IntervalDenseVars {
            wc: tape.param(self.w_center.clone()),
            wr: tape.param(self.w_radius_raw.clone()),
            bc: tape.param(self.b_center.clone()),
            br: tape.param(self.b_radius_raw.clone()),
        }
    }

    fn tape_bounds(tape: &mut Tape, center: Var, raw: Var) -> Result<(Var, Var)> {
        let r = tape.softplus(raw);
        Ok((tape.sub(center, r)?, tape.add(center, r)?))
    }

    /// Interval forward pass valid for any input signs.
    pub fn forward(
        &self,
        vars: IntervalDenseVars,
        tape: &mut Tape,
        z: IntervalVars,
    ) -> Result<IntervalVars> {
        self.check_input(tape, z.lo)?;
        let (wl, wu) = Self::tape_bounds(tape, vars.wc, vars.wr)?;
        let (lo, hi) = interval_matvec_general(tape, wl, wu, z.lo, z.hi)?;
        self.finish(vars, tape, lo, hi)
    }

    /// Forward pass for non-negative inputs, decomposed into four products.
    pub fn forward_relu_fast(
        &self,
        vars: IntervalDenseVars,
        tape: &mut Tape,
        z: IntervalVars,
    ) -> Result<IntervalVars> {
        self.check_input(tape, z.lo)?;
        if cfg!(debug_assertions) && tape.value(z.lo).data().iter().any(|&v| v < 0.0) {
            return Err(invalid("relu fast path needs non-negative inputs"));
        }
        let (wl, wu) = Self::tape_bounds(tape, vars.wc, vars.wr)?;
        let wl_n = tape.min_with(wl, 0.0);
        let wl_p = tape.max_with(wl, 0.0);
        let wu_n = tape.min_with(wu, 0.0);
        let wu_p = tape.max_with(wu, 0.0);
        let a = tape.matmul_t(z.hi, wl_n)?;
        let b = tape.matmul_t(z.lo, wl_p)?;
        let lo = tape.add(a, b)?;
        let c = tape.matmul_t(z.hi, wu_p)?;
        let d = tape.matmul_t(z.lo, wu_n)?;
        let hi = tape.add(c, d)?;
        self.finish(vars, tape, lo, hi)
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        if tape.shape(x).1 != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "inn_layer_forward",
                lhs: self.w_center.shape().to_vec(),
                rhs: tape.value(x).shape().to_vec(),
            });
        }
        Ok(())
    }

    fn finish(
        &self,
        vars: IntervalDenseVars,
        tape: &mut Tape,
        lo: Var,
        hi: Var,
    ) -> Result<IntervalVars> {
        let (bl, bu) = Self::tape_bounds(tape, vars.bc, vars.br)?;
        let lo = tape.add_row(lo, bl)?;
        let hi = tape.add_row(hi, bu)?;
        let lo = self.activation.apply(tape, lo);
        let hi = self.activation.apply(tape, hi);
        debug_assert!(ordered(tape.value(lo), tape.value(hi)));
        Ok(IntervalVars { lo, hi })
    }
}

impl Parameterised for IntervalDenseLayer {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_center,
            &mut self.w_radius_raw,
            &mut self.b_center,
            &mut self.b_radius_raw,
        ]
    }
}

fn bounds_of(center: &Tensor, raw: &Tensor) -> (Tensor, Tensor) {
    let r = raw.map(crate::autodiff::softplus);
    let lo = center.zip_map(&r, |c, r| c - r).expect("matching shapes");
    let hi = center.zip_map(&r, |c, r| c + r).expect("matching shapes");
    (lo, hi)
}

fn ordered(lo: &Tensor, hi: &Tensor) -> bool {
    lo.data()
        .iter()
        .zip(hi.data())
        .all(|(l, h)| !(*l > *h + 1e-9 * (1.0 + l.abs().max(h.abs()))))
}

/// Element-wise interval product in the smooth min/max form. All four
/// arguments share one shape; returns `(lo, hi)`.
pub fn smooth_product(
    tape: &mut Tape,
    wl: Var,
    wu: Var,
    zl: Var,
    zu: Var,
) -> Result<(Var, Var)> {
    let wl_n = tape.min_with(wl, 0.0);
    let wl_p = tape.max_with(wl, 0.0);
    let wu_n = tape.min_with(wu, 0.0);
    let wu_p = tape.max_with(wu, 0.0);
    let zl_n = tape.min_with(zl, 0.0);
    let zl_p = tape.max_with(zl, 0.0);
    let zu_n = tape.min_with(zu, 0.0);
    let zu_p = tape.max_with(zu, 0.0);

    let t1 = tape.mul(wu_n, zu_n)?;
    let t2 = tape.mul(wl_p, zl_p)?;
    let t3a = tape.mul(wu_p, zl_n)?;
    let t3b = tape.mul(wl_n, zu_p)?;
    let t3 = tape.sub(t3a, t3b)?;
    let t3 = tape.min_with(t3, 0.0);
    let s = tape.add(t1, t2)?;
    let s = tape.add(s, t3)?;
    let lo = tape.add(s, t3b)?;

    let u1 = tape.mul(wu_n, zl_p)?;
    let u2 = tape.mul(wl_p, zu_n)?;
    let u3a = tape.mul(wl_n, zl_n)?;
    let u3b = tape.mul(wu_p, zu_p)?;
    let u3 = tape.sub(u3a, u3b)?;
    let u3 = tape.max_with(u3, 0.0);
    let s = tape.add(u1, u2)?;
    let s = tape.add(s, u3)?;
    let hi = tape.add(s, u3b)?;
    Ok((lo, hi))
}

/// `[z] · [W]ᵀ` for interval `z` (`B × in`) and interval `W` (`out × in`),
/// summing smooth element-wise products. Returns `B × out` bounds.
pub fn interval_matvec_general(
    tape: &mut Tape,
    wl: Var,
    wu: Var,
    zl: Var,
    zu: Var,
) -> Result<(Var, Var)> {
    let (batch, inp) = tape.shape(zl);
    let (out, w_in) = tape.shape(wl);
    if inp != w_in {
        return Err(Error::ShapeMismatch {
            op: "interval_matvec",
            lhs: tape.value(wl).shape().to_vec(),
            rhs: tape.value(zl).shape().to_vec(),
        });
    }
    let z_idx: Arc<[usize]> = (0..batch).flat_map(|b| std::iter::repeat_n(b, out)).collect();
    let w_idx: Arc<[usize]> = (0..batch).flat_map(|_| 0..out).collect();
    let zl_r = tape.gather_rows(zl, z_idx.clone())?;
    let zu_r = tape.gather_rows(zu, z_idx)?;
    let wl_r = tape.gather_rows(wl, w_idx.clone())?;
    let wu_r = tape.gather_rows(wu, w_idx)?;
    let (cl, cu) = smooth_product(tape, wl_r, wu_r, zl_r, zu_r)?;
    let lo = tape.sum_rows(cl);
    let hi = tape.sum_rows(cu);
    Ok((tape.reshape(lo, batch, out)?, tape.reshape(hi, batch, out)?))
}

/// Stack of interval dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnModel {
    pub layers: Vec<IntervalDenseLayer>,
}

#[derive(Clone, Debug)]
pub struct InnVars {
    pub layers: Vec<IntervalDenseVars>,
}

impl InnVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}

impl InnModel {
    pub fn new(layers: Vec<IntervalDenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("an INN needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    op: "InnModel::new",
                    lhs: pair[0].w_center.shape().to_vec(),
                    rhs: pair[1].w_center.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Relu hidden layers and a linear output layer.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                IntervalDenseLayer::glorot(sizes[i], sizes[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> InnVars {
        InnVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    /// Uses the relu fast path wherever the previous layer was relu.
    pub fn forward(&self, vars: &InnVars, tape: &mut Tape, z: IntervalVars) -> Result<IntervalVars> {
        let mut h = z;
        let mut nonneg = false;
        for (layer, v) in self.layers.iter().zip(&vars.layers) {
            h = if nonneg {
                layer.forward_relu_fast(*v, tape, h)?
            } else {
                layer.forward(*v, tape, h)?
            };
            nonneg = layer.activation == Activation::Relu;
        }
        Ok(h)
    }

    pub fn predict(&self, lo: &Tensor, hi: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape);
        let z = IntervalVars {
            lo: tape.constant(lo.clone()),
            hi: tape.constant(hi.clone()),
        };
        let out = self.forward(&vars, &mut tape, z)?;
        Ok((tape.value(out.lo).clone(), tape.value(out.hi).clone()))
    }
}

impl Parameterised for InnModel {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

fn run_layer(
    layer: &IntervalDenseLayer,
    zl: &Tensor,
    zu: &Tensor,
    fast: bool,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::inference();
    let vars = layer.bind(&mut tape);
    let z = IntervalVars {
        lo: tape.constant(zl.clone()),
        hi: tape.constant(zu.clone()),
    };
    let out = if fast {
        layer.forward_relu_fast(vars, &mut tape, z)?
    } else {
        layer.forward(vars, &mut tape, z)?
    };
    Ok((tape.value(out.lo).clone(), tape.value(out.hi).clone()))
}

/// General interval forward pass of one layer over a batch.
pub fn inn_layer_forward(
    layer: &IntervalDenseLayer,
    zl: &Tensor,
    zu: &Tensor,
) -> Result<(Tensor, Tensor)> {
    run_layer(layer, zl, zu, false)
}

/// Fast path for non-negative inputs.
pub fn inn_layer_forward_relu_fast(
    layer: &IntervalDenseLayer,
    zl: &Tensor,
    zu: &Tensor,
) -> Result<(Tensor, Tensor)> {
    run_layer(layer, zl, zu, true)
}

/// Element-wise `[β_L, β_U] · τ` for tape tensors of one shape.
pub fn interval_multiplication_layer(
    tape: &mut Tape,
    beta: IntervalVars,
    tau: Var,
) -> Result<IntervalVars> {
    let tp = tape.max_with(tau, 0.0);
    let tn = tape.min_with(tau, 0.0);
    let a = tape.mul(beta.lo, tp)?;
    let b = tape.mul(beta.hi, tn)?;
    let lo = tape.add(a, b)?;
    let c = tape.mul(beta.hi, tp)?;
    let d = tape.mul(beta.lo, tn)?;
    let hi = tape.add(c, d)?;
    Ok(IntervalVars { lo, hi })
}

/// Eager element-wise product of interval latents with exact coefficients.
pub fn interval_multiply(beta: &IntervalVector, tau: &[f64]) -> Result<IntervalVector> {
    if beta.len() != tau.len() {
        return Err(Error::ShapeMismatch {
            op: "interval_multiplication_layer",
            lhs: vec![beta.len()],
            rhs: vec![tau.len()],
        });
    }
    Ok(beta
        .iter()
        .zip(tau)
        .map(|(b, &t)| imul(*b, Interval::point(t)))
        .collect())
}

/// Linear interval layer mapping interval features to a single interval per row.
pub fn interval_dense_head(
    layer: &IntervalDenseLayer,
    vars: IntervalDenseVars,
    tape: &mut Tape,
    z: IntervalVars,
) -> Result<IntervalVars> {
    if layer.activation != Activation::Linear {
        return Err(invalid("interval head must use a linear activation"));
    }
    layer.forward(vars, tape, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point_layer(w: &[f64], out: usize, b: &[f64], act: Activation) -> IntervalDenseLayer {
        let inp = w.len() / out;
        IntervalDenseLayer::new(
            Tensor::matrix(out, inp, w.to_vec()).unwrap(),
            Tensor::filled(out, inp, -800.0),
            Tensor::matrix(1, out, b.to_vec()).unwrap(),
            Tensor::filled(1, out, -800.0),
            act,
        )
        .unwrap()
    }

    #[test]
    fn single_weight_interval_times_input_interval() {
        // W = [1, 2] as center 1.5 ± 0.5
        let layer = IntervalDenseLayer::new(
            Tensor::matrix(1, 1, vec![1.5]).unwrap(),
            Tensor::matrix(1, 1, vec![softplus_inv(0.5)]).unwrap(),
            Tensor::zeros(1, 1),
            Tensor::filled(1, 1, -800.0),
            Activation::Linear,
        )
        .unwrap();
        let (lo, hi) = inn_layer_forward(
            &layer,
            &Tensor::matrix(1, 1, vec![-1.0]).unwrap(),
            &Tensor::matrix(1, 1, vec![3.0]).unwrap(),
        )
        .unwrap();
        assert!((lo.data()[0] + 2.0).abs() < 1e-12);
        assert!((hi.data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn fast_path_single_coordinate() {
        // W = [-1, 2], b = [0, 0], z = [0, 1]
        let layer = IntervalDenseLayer::new(
            Tensor::matrix(1, 1, vec![0.5]).unwrap(),
            Tensor::matrix(1, 1, vec![softplus_inv(1.5)]).unwrap(),
            Tensor::zeros(1, 1),
            Tensor::filled(1, 1, -800.0),
            Activation::Relu,
        )
        .unwrap();
        let zl = Tensor::zeros(1, 1);
        let zu = Tensor::filled(1, 1, 1.0);
        let (lo, hi) = inn_layer_forward_relu_fast(&layer, &zl, &zu).unwrap();
        assert!(lo.data()[0].abs() < 1e-12);
        assert!((hi.data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fast_path_on_zero_input_is_relu_of_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = IntervalDenseLayer::glorot(3, 4, Activation::Relu, &mut rng).unwrap();
        layer.b_center = Tensor::matrix(1, 4, vec![-1.0, 0.5, 2.0, -0.1]).unwrap();
        let z = Tensor::zeros(1, 3);
        let (lo, hi) = inn_layer_forward_relu_fast(&layer, &z, &z).unwrap();
        let (bl, bu) = layer.bias_bounds();
        for o in 0..4 {
            assert!((lo.data()[o] - bl.data()[o].max(0.0)).abs() < 1e-15);
            assert!((hi.data()[o] - bu.data()[o].max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn fast_path_equals_general_path_on_nonnegative_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut layer = IntervalDenseLayer::glorot(5, 6, Activation::Relu, &mut rng).unwrap();
            let raw: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..1.0)).collect();
            layer.w_radius_raw = Tensor::matrix(6, 5, raw).unwrap();
            let zl = Tensor::from_fn(4, 5, |_, _| rng.random_range(0.0..1.0));
            let zu = zl.map(|v| v + 0.3);
            let (gl, gu) = inn_layer_forward(&layer, &zl, &zu).unwrap();
            let (fl, fu) = inn_layer_forward_relu_fast(&layer, &zl, &zu).unwrap();
            for (a, b) in gl.data().iter().zip(fl.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in gu.data().iter().zip(fu.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[cfg(debug_assertions)]
    fn fast_path_rejects_negative_inputs_in_checked_builds() {
        let layer = point_layer(&[1.0], 1, &[0.0], Activation::Relu);
        let z = Tensor::filled(1, 1, -1.0);
        assert!(inn_layer_forward_relu_fast(&layer, &z, &z).is_err());
    }

    #[test]
    fn degenerate_layer_collapses_to_point_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = glorot_matrix(3, 2, &mut rng);
        let b = Tensor::matrix(1, 3, vec![0.1, -0.2, 0.3]).unwrap();
        let layer = point_layer(w.data(), 3, b.data(), Activation::Relu);
        let x = Tensor::matrix(2, 2, vec![0.4, -0.5, 1.0, 2.0]).unwrap();
        let (lo, hi) = inn_layer_forward(&layer, &x, &x).unwrap();
        let expect = x.matmul_t(&w).unwrap().add_row(&b).unwrap().map(|v| v.max(0.0));
        for ((l, h), e) in lo.data().iter().zip(hi.data()).zip(expect.data()) {
            assert!((l - e).abs() < 1e-12 && (h - e).abs() < 1e-12);
        }
    }

    #[test]
    fn multiplication_layer_examples() {
        let beta = IntervalVector::from_bounds(&[2.0, -1.0], &[3.0, 4.0]).unwrap();
        assert_eq!(interval_multiply(&beta, &[1.0, 1.0]).unwrap(), beta);
        let flipped = interval_multiply(&beta, &[-1.0, 1.0]).unwrap();
        assert_eq!((flipped[0].lo(), flipped[0].hi()), (-3.0, -2.0));
    }

    #[test]
    fn multiplication_layer_matches_imul_on_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lo: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|v| v + rng.random_range(0.0..1.0)).collect();
        let tau: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut tape = Tape::inference();
        let beta = IntervalVars {
            lo: tape.constant(Tensor::vector(lo.clone()).unwrap()),
            hi: tape.constant(Tensor::vector(hi.clone()).unwrap()),
        };
        let t = tape.constant(Tensor::vector(tau.clone()).unwrap());
        let out = interval_multiplication_layer(&mut tape, beta, t).unwrap();
        let expect = interval_multiply(&IntervalVector::from_bounds(&lo, &hi).unwrap(), &tau)
            .unwrap();
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(tape.value(out.lo).data()[i], e.lo());
            assert_eq!(tape.value(out.hi).data()[i], e.hi());
        }
    }

    #[test]
    fn model_output_is_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = InnModel::glorot(&[3, 8, 8, 2], &mut rng).unwrap();
        let lo = Tensor::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let hi = lo.map(|v| v + 0.2);
        let (ol, oh) = model.predict(&lo, &hi).unwrap();
        assert!(ol.data().iter().zip(oh.data()).all(|(l, h)| l <= h));
    }
}
