//! Dense layers, MLPs and the doubled-input RANN architecture.
//!
//! Models own plain [`Tensor`] parameters. To run a model on a [`Tape`], call
//! `bind` to register the parameters as leaves; the returned handle set lists
//! them in the same order as `params_mut`, which is how the trainer matches
//! gradients to storage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::interval::IntervalVector;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Linear => x,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }
}

/// Anything with trainable tensors in a fixed order.
pub trait Parameterised {
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|t| t.len()).sum()
    }
}

/// Uniform Glorot limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = glorot_limit(cols, rows);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

/// Affine map `x·Wᵀ + b` followed by an activation. Weights are `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 || bias.len() != weights.rows() {
            return Err(Error::ShapeMismatch {
                op: "DenseLayer::new",
                lhs: weights.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            weights: glorot_matrix(output, input, rng),
            bias: Tensor::vector(vec![0.0; output]).expect("positive width"),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            w: tape.param(self.weights.clone()),
            b: tape.param(self.bias.clone()),
        }
    }

    /// Pre-activation `x·Wᵀ + b`.
    pub fn affine(vars: DenseVars, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.matmul_t(x, vars.w)?;
        tape.add_row(z, vars.b)
    }

    pub fn forward(&self, vars: DenseVars, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = Self::affine(vars, tape, x)?;
        Ok(self.activation.apply(tape, z))
    }
}

impl Parameterised for DenseLayer {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// A chain of dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<DenseVars>,
}

impl MlpVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    op: "MlpModel::new",
                    lhs: pair[0].weights.shape().to_vec(),
                    rhs: pair[1].weights.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialised MLP with layer widths `sizes` (input first).
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    pub fn forward(&self, vars: &MlpVars, tape: &mut Tape, x: Var) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                lhs: vec![self.input_dim()],
                rhs: tape.value(x).shape().to_vec(),
            });
        }
        let mut h = x;
        for (layer, v) in self.layers.iter().zip(&vars.layers) {
            h = layer.forward(*v, tape, h)?;
        }
        Ok(h)
    }

    /// Forward pass over a batch `x` (rows are samples) without recording gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward(&vars, &mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Scalar-output convenience for a single input vector.
    pub fn eval_point(&self, x: &[f64]) -> Result<f64> {
        let mut h = x.to_vec();
        if h.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has {} entries, model expects {}",
                h.len(),
                self.input_dim()
            )));
        }
        for layer in &self.layers {
            let w = &layer.weights;
            h = (0..w.rows())
                .map(|o| {
                    let z: f64 = w.row(o).iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
                        + layer.bias.data()[o];
                    layer.activation.eval(z)
                })
                .collect();
        }
        Ok(h[0])
    }
}

impl Parameterised for MlpModel {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// MLP over interleaved `[x1_lo, x1_hi, x2_lo, …]` inputs with separate
/// linear output rows for the lower and upper bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RannModel {
    pub hidden: MlpModel,
    pub output_lo: DenseLayer,
    pub output_hi: DenseLayer,
}

#[derive(Clone, Debug)]
pub struct RannVars {
    pub hidden: MlpVars,
    pub lo: DenseVars,
    pub hi: DenseVars,
}

impl RannVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.hidden.vars();
        v.extend([self.lo.w, self.lo.b, self.hi.w, self.hi.b]);
        v
    }
}

impl RannModel {
    pub fn new(hidden: MlpModel, output_lo: DenseLayer, output_hi: DenseLayer) -> Result<Self> {
        let h = hidden.output_dim();
        if output_lo.input_dim() != h
            || output_hi.input_dim() != h
            || output_lo.output_dim() != output_hi.output_dim()
        {
            return Err(Error::ShapeMismatch {
                op: "RannModel::new",
                lhs: output_lo.weights.shape().to_vec(),
                rhs: output_hi.weights.shape().to_vec(),
            });
        }
        if hidden.input_dim() % 2 != 0 {
            return Err(invalid("RANN input width must be even (lo/hi pairs)"));
        }
        Ok(Self {
            hidden,
            output_lo,
            output_hi,
        })
    }

    /// `d` interval inputs, hidden widths, `m` interval outputs.
    pub fn glorot<R: Rng + ?Sized>(
        d: usize,
        hidden: &[usize],
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(invalid("RANN needs at least one hidden layer"));
        }
        let mut sizes = vec![2 * d];
        sizes.extend_from_slice(hidden);
        let body = MlpModel::glorot(&sizes, Activation::Relu, Activation::Relu, rng)?;
        let h = *hidden.last().unwrap();
        let lo = DenseLayer::glorot(h, m, Activation::Linear, rng);
        let hi = DenseLayer::glorot(h, m, Activation::Linear, rng);
        Self::new(body, lo, hi)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim() / 2
    }

    pub fn bind(&self, tape: &mut Tape) -> RannVars {
        RannVars {
            hidden: self.hidden.bind(tape),
            lo: self.output_lo.bind(tape),
            hi: self.output_hi.bind(tape),
        }
    }

    /// `x` is `B × 2d` interleaved; returns `(ŷ_L, ŷ_U)`, each `B × m`.
    pub fn forward(&self, vars: &RannVars, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let h = self.hidden.forward(&vars.hidden, tape, x)?;
        let lo = self.output_lo.forward(vars.lo, tape, h)?;
        let hi = self.output_hi.forward(vars.hi, tape, h)?;
        Ok((lo, hi))
    }

    /// Batched prediction; the pairs may cross.
    pub fn predict(&self, x: &[IntervalVector]) -> Result<(Tensor, Tensor)> {
        let input = interleave(x, self.input_dim())?;
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(input);
        let (lo, hi) = self.forward(&vars, &mut tape, xv)?;
        Ok((tape.value(lo).clone(), tape.value(hi).clone()))
    }
}

impl Parameterised for RannModel {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.hidden.params_mut();
        p.extend(self.output_lo.params_mut());
        p.extend(self.output_hi.params_mut());
        p
    }
}

/// Single-input RANN evaluation returning the first output's `(ŷ_L, ŷ_U)` pair.
pub fn rann_forward(model: &RannModel, x: &IntervalVector) -> Result<(f64, f64)> {
    let (lo, hi) = model.predict(std::slice::from_ref(x))?;
    Ok((lo.data()[0], hi.data()[0]))
}

/// Stacks interval vectors of width `d` into a `B × 2d` interleaved matrix.
pub fn interleave(x: &[IntervalVector], d: usize) -> Result<Tensor> {
    if x.is_empty() {
        return Err(invalid("empty interval batch"));
    }
    let mut data = Vec::with_capacity(x.len() * 2 * d);
    for v in x {
        if v.len() != d {
            return Err(Error::ShapeMismatch {
                op: "interleave",
                lhs: vec![d],
                rhs: vec![v.len()],
            });
        }
        for iv in v.iter() {
            data.push(iv.lo());
            data.push(iv.hi());
        }
    }
    Tensor::matrix(x.len(), 2 * d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Interval;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_layer() {
        let layer = DenseLayer::new(
            Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap(),
            Tensor::vector(vec![1.0]).unwrap(),
            Activation::Linear,
        )
        .unwrap();
        let mlp = MlpModel::new(vec![layer]).unwrap();
        let y = mlp.predict(&Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = MlpModel::glorot(&[3, 5, 1], Activation::Relu, Activation::Linear, &mut rng)
            .unwrap();
        for p in mlp.params_mut() {
            p.data_mut().fill(0.0);
        }
        let x = Tensor::from_fn(4, 3, |i, j| (i + j) as f64 - 2.0);
        assert!(mlp.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_matches_manual_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = MlpModel::glorot(&[2, 3, 1], Activation::Relu, Activation::Linear, &mut rng)
            .unwrap();
        let x = [0.3, -0.7];
        let (w1, b1) = (&mlp.layers[0].weights, &mlp.layers[0].bias);
        let (w2, b2) = (&mlp.layers[1].weights, &mlp.layers[1].bias);
        let mut expect = b2.data()[0];
        for o in 0..3 {
            let h = (w1.get(o, 0) * x[0] + w1.get(o, 1) * x[1] + b1.data()[o]).max(0.0);
            expect += w2.get(0, o) * h;
        }
        let y = mlp.predict(&Tensor::matrix(1, 2, x.to_vec()).unwrap()).unwrap();
        assert!((y.data()[0] - expect).abs() < 1e-14);
        assert!((mlp.eval_point(&x).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn chained_dimensions_are_checked() {
        let a = DenseLayer::glorot(2, 3, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        let b = DenseLayer::glorot(4, 1, Activation::Linear, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(MlpModel::new(vec![a, b]).is_err());
    }

    #[test]
    fn rann_zero_weights_give_output_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = RannModel::glorot(1, &[4], 1, &mut rng).unwrap();
        for p in model.params_mut() {
            p.data_mut().fill(0.0);
        }
        model.output_hi.bias.data_mut()[0] = 1.0;
        let x = IntervalVector::new(vec![Interval::new(0.2, 0.5).unwrap()]);
        assert_eq!(rann_forward(&model, &x).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn rann_tied_rows_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = RannModel::glorot(2, &[6, 6], 1, &mut rng).unwrap();
        model.output_hi = model.output_lo.clone();
        let x = IntervalVector::points(&[0.4, -1.2]);
        let (lo, hi) = rann_forward(&model, &x).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn rann_matches_hand_rolled_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = RannModel::glorot(1, &[3], 1, &mut rng).unwrap();
        let input = [0.0, 0.1];
        let w = &model.hidden.layers[0].weights;
        let h: Vec<f64> = (0..3)
            .map(|o| (w.get(o, 0) * input[0] + w.get(o, 1) * input[1]).max(0.0))
            .collect();
        let dot = |l: &DenseLayer| {
            l.bias.data()[0] + (0..3).map(|j| l.weights.get(0, j) * h[j]).sum::<f64>()
        };
        let x = IntervalVector::new(vec![Interval::new(0.0, 0.1).unwrap()]);
        let (lo, hi) = rann_forward(&model, &x).unwrap();
        assert!((lo - dot(&model.output_lo)).abs() < 1e-14);
        assert!((hi - dot(&model.output_hi)).abs() < 1e-14);
    }

    #[test]
    fn relu_mlp_without_bias_is_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = MlpModel::glorot(&[3, 8, 8, 2], Activation::Relu, Activation::Linear, &mut rng)
            .unwrap();
        let x = Tensor::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin());
        let a = 2.5;
        let fx = mlp.predict(&x).unwrap();
        let fax = mlp.predict(&x.map(|v| a * v)).unwrap();
        for (u, v) in fx.data().iter().zip(fax.data()) {
            assert!((a * u - v).abs() < 1e-12);
        }
    }
}
