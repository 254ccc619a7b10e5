//! DeepONet and its interval variants.
//!
//! All variants are evaluated on a grid: `S` input functions against the same
//! `p` query coordinates, giving `S × p` outputs. The trunk always sees exact
//! coordinates.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::FunctionSample;
use crate::error::{invalid, Error, Result};
use crate::inn::{
    interval_dense_head, interval_multiplication_layer, InnModel, InnVars, IntervalDenseLayer,
    IntervalDenseVars, IntervalVars,
};
use crate::layers::{Activation, DenseLayer, DenseVars, MlpModel, MlpVars, Parameterised};
use crate::tensor::Tensor;

/// Functions per chunk when evaluating large grids.
const EVAL_CHUNK: usize = 64;

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Row indices `[s, s, …]` (each of `0..n_fun` repeated `p` times) and
/// `[0..p, 0..p, …]`.
fn grid_indices(n_fun: usize, p: usize) -> (Arc<[usize]>, Arc<[usize]>) {
    let fun = (0..n_fun)
        .flat_map(|s| std::iter::repeat_n(s, p))
        .collect();
    let coord = (0..n_fun).flat_map(|_| 0..p).collect();
    (fun, coord)
}

fn check_latents(branch: usize, trunk: usize) -> Result<()> {
    if branch != trunk {
        return Err(Error::ShapeMismatch {
            op: "DeepONet latent width",
            lhs: vec![branch],
            rhs: vec![trunk],
        });
    }
    Ok(())
}

/// Runs `f` on consecutive row chunks of the inputs and stacks the results.
pub(crate) fn chunked<F>(n: usize, mut f: F) -> Result<(Tensor, Tensor)>
where
    F: FnMut(std::ops::Range<usize>) -> Result<(Tensor, Tensor)>,
{
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut cols = 0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let (l, h) = f(start..end)?;
        cols = l.cols();
        lo.extend_from_slice(l.data());
        hi.extend_from_slice(h.data());
        start = end;
    }
    Ok((Tensor::matrix(n, cols, lo)?, Tensor::matrix(n, cols, hi)?))
}

pub(crate) fn row_range(t: &Tensor, r: std::ops::Range<usize>) -> Tensor {
    let c = t.cols();
    Tensor::raw(r.len(), c, t.data()[r.start * c..r.end * c].to_vec())
}

/// Branch net over sensor values, trunk net over coordinates, combined by a
/// latent dot product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepONet {
    pub branch: MlpModel,
    pub trunk: MlpModel,
}

#[derive(Clone, Debug)]
pub struct DeepONetVars {
    pub branch: MlpVars,
    pub trunk: MlpVars,
}

impl DeepONetVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.branch.vars();
        v.extend(self.trunk.vars());
        v
    }
}

impl DeepONet {
    pub fn new(branch: MlpModel, trunk: MlpModel) -> Result<Self> {
        check_latents(branch.output_dim(), trunk.output_dim())?;
        Ok(Self { branch, trunk })
    }

    /// `m` sensors, coordinate dimension `dim`, latent width `q`.
    pub fn glorot<R: Rng + ?Sized>(
        m: usize,
        branch_hidden: &[usize],
        dim: usize,
        trunk_hidden: &[usize],
        q: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let branch = MlpModel::glorot(
            &sizes(m, branch_hidden, q),
            Activation::Relu,
            Activation::Linear,
            rng,
        )?;
        let trunk = MlpModel::glorot(
            &sizes(dim, trunk_hidden, q),
            Activation::Relu,
            Activation::Linear,
            rng,
        )?;
        Self::new(branch, trunk)
    }

    pub fn bind(&self, tape: &mut Tape) -> DeepONetVars {
        DeepONetVars {
            branch: self.branch.bind(tape),
            trunk: self.trunk.bind(tape),
        }
    }

    /// `u` is `S × m`, `x` is `p × dim`; returns `S × p`.
    pub fn forward_grid(&self, vars: &DeepONetVars, tape: &mut Tape, u: Var, x: Var) -> Result<Var> {
        let beta = self.branch.forward(&vars.branch, tape, u)?;
        let tau = self.trunk.forward(&vars.trunk, tape, x)?;
        tape.matmul_t(beta, tau)
    }

    pub fn predict_grid(&self, u: &Tensor, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape);
        let uv = tape.constant(u.clone());
        let xv = tape.constant(x.clone());
        let g = self.forward_grid(&vars, &mut tape, uv, xv)?;
        Ok(tape.value(g).clone())
    }
}

impl Parameterised for DeepONet {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.branch.params_mut();
        p.extend(self.trunk.params_mut());
        p
    }
}

/// `G(u)(x) = Σ β_i(u) τ_i(x)` for one function and one coordinate.
pub fn deeponet_forward(net: &DeepONet, u: &[f64], x: &[f64]) -> Result<f64> {
    let u = Tensor::matrix(1, u.len(), u.to_vec())?;
    let x = Tensor::matrix(1, x.len(), x.to_vec())?;
    Ok(net.predict_grid(&u, &x)?.data()[0])
}

/// Branch over interleaved interval sensors producing interleaved
/// `[β_{1,L}, β_{1,U}, …]`; the products `β_{i,L}τ_i`, `β_{i,U}τ_i` are passed
/// to a linear head with two outputs `(G_L, G_U)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveIntervalDeepONet {
    pub branch: MlpModel,
    pub trunk: MlpModel,
    pub head: DenseLayer,
}

#[derive(Clone, Debug)]
pub struct NaiveVars {
    pub branch: MlpVars,
    pub trunk: MlpVars,
    pub head: DenseVars,
}

impl NaiveVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.branch.vars();
        v.extend(self.trunk.vars());
        v.extend([self.head.w, self.head.b]);
        v
    }
}

impl NaiveIntervalDeepONet {
    pub fn new(branch: MlpModel, trunk: MlpModel, head: DenseLayer) -> Result<Self> {
        check_latents(branch.output_dim(), 2 * trunk.output_dim())?;
        if head.input_dim() != branch.output_dim() || head.output_dim() != 2 {
            return Err(Error::ShapeMismatch {
                op: "NaiveIntervalDeepONet head",
                lhs: vec![branch.output_dim(), 2],
                rhs: head.weights.shape().to_vec(),
            });
        }
        if head.activation != Activation::Linear {
            return Err(invalid("naive DeepONet head must be linear"));
        }
        if branch.input_dim() % 2 != 0 {
            return Err(invalid("naive DeepONet branch input must be lo/hi pairs"));
        }
        Ok(Self {
            branch,
            trunk,
            head,
        })
    }

    pub fn glorot<R: Rng + ?Sized>(
        m: usize,
        branch_hidden: &[usize],
        dim: usize,
        trunk_hidden: &[usize],
        q: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let branch = MlpModel::glorot(
            &sizes(2 * m, branch_hidden, 2 * q),
            Activation::Relu,
            Activation::Linear,
            rng,
        )?;
        let trunk = MlpModel::glorot(
            &sizes(dim, trunk_hidden, q),
            Activation::Relu,
            Activation::Linear,
            rng,
        )?;
        let head = DenseLayer::glorot(2 * q, 2, Activation::Linear, rng);
        Self::new(branch, trunk, head)
    }

    pub fn sensors(&self) -> usize {
        self.branch.input_dim() / 2
    }

    pub fn bind(&self, tape: &mut Tape) -> NaiveVars {
        NaiveVars {
            branch: self.branch.bind(tape),
            trunk: self.trunk.bind(tape),
            head: self.head.bind(tape),
        }
    }

    /// `u` is `S × 2m` interleaved, `x` is `p × dim`; returns `S × p` pairs.
    pub fn forward_grid(
        &self,
        vars: &NaiveVars,
        tape: &mut Tape,
        u: Var,
        x: Var,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(u).0;
        let p = tape.shape(x).0;
        let q = self.trunk.output_dim();
        let beta = self.branch.forward(&vars.branch, tape, u)?;
        let tau = self.trunk.forward(&vars.trunk, tape, x)?;
        let dup = tape.constant(Tensor::from_fn(q, 2 * q, |i, j| {
            if j / 2 == i {
                1.0
            } else {
                0.0
            }
        }));
        let tau2 = tape.matmul(tau, dup)?;
        let (fun, coord) = grid_indices(s, p);
        let b = tape.gather_rows(beta, fun)?;
        let t = tape.gather_rows(tau2, coord)?;
        let z = tape.mul(b, t)?;
        let out = self.head.forward(vars.head, tape, z)?;
        let lo = tape.slice_cols(out, 0, 1)?;
        let hi = tape.slice_cols(out, 1, 2)?;
        Ok((tape.reshape(lo, s, p)?, tape.reshape(hi, s, p)?))
    }

    /// `u_lo`, `u_hi` are `S × m`; returns `S × p` lower and upper predictions.
    pub fn predict_grid(&self, u_lo: &Tensor, u_hi: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let u = interleave_columns(u_lo, u_hi)?;
        chunked(u.rows(), |r| {
            let mut tape = Tape::inference();
            let vars = self.bind(&mut tape);
            let uv = tape.constant(row_range(&u, r));
            let xv = tape.constant(x.clone());
            let (lo, hi) = self.forward_grid(&vars, &mut tape, uv, xv)?;
            Ok((tape.value(lo).clone(), tape.value(hi).clone()))
        })
    }
}

impl Parameterised for NaiveIntervalDeepONet {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.branch.params_mut();
        p.extend(self.trunk.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}

/// Interleaves the columns of two equally shaped matrices: `[a_1, b_1, a_2, b_2, …]`.
pub fn interleave_columns(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "interleave_columns",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(Tensor::from_fn(a.rows(), 2 * a.cols(), |i, j| {
        if j % 2 == 0 {
            a.get(i, j / 2)
        } else {
            b.get(i, j / 2)
        }
    }))
}

/// Single-function, single-coordinate naive interval prediction `(G_L, G_U)`.
pub fn naive_interval_forward(
    net: &NaiveIntervalDeepONet,
    u: &crate::interval::IntervalVector,
    x: &[f64],
) -> Result<(f64, f64)> {
    let lo = Tensor::matrix(1, u.len(), u.lows())?;
    let hi = Tensor::matrix(1, u.len(), u.highs())?;
    let x = Tensor::matrix(1, x.len(), x.to_vec())?;
    let (l, h) = net.predict_grid(&lo, &hi, &x)?;
    Ok((l.data()[0], h.data()[0]))
}

/// Interval-weight branch, element-wise interval product with the exact
/// trunk latents, then a linear interval head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnDeepONet {
    pub branch: InnModel,
    pub trunk: MlpModel,
    pub head: IntervalDenseLayer,
}

#[derive(Clone, Debug)]
pub struct InnDeepONetVars {
    pub branch: InnVars,
    pub trunk: MlpVars,
    pub head: IntervalDenseVars,
}

impl InnDeepONetVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.branch.vars();
        v.extend(self.trunk.vars());
        v.extend(self.head.vars());
        v
    }
}

impl InnDeepONet {
    pub fn new(branch: InnModel, trunk: MlpModel, head: IntervalDenseLayer) -> Result<Self> {
        check_latents(branch.output_dim(), trunk.output_dim())?;
        if head.input_dim() != trunk.output_dim() || head.output_dim() != 1 {
            return Err(Error::ShapeMismatch {
                op: "InnDeepONet head",
                lhs: vec![1, trunk.output_dim()],
                rhs: head.w_center.shape().to_vec(),
            });
        }
        if head.activation != Activation::Linear {
            return Err(invalid("INN DeepONet head must be linear"));
        }
        Ok(Self {
            branch,
            trunk,
            head,
        })
    }

    pub fn glorot<R: Rng + ?Sized>(
        m: usize,
        branch_hidden: &[usize],
        dim: usize,
        trunk_hidden: &[usize],
        q: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let branch = InnModel::glorot(&sizes(m, branch_hidden, q), rng)?;
        let trunk = MlpModel::glorot(
            &sizes(dim, trunk_hidden, q),
            Activation::Relu,
            Activation::Linear,
            rng,
        )?;
        let mut head = IntervalDenseLayer::glorot(q, 1, Activation::Linear, rng)?;
        // start the head near a plain sum so the initial output tracks Σ β_i τ_i
        head.w_center = head.w_center.map(|w| 1.0 + 0.1 * w);
        Self::new(branch, trunk, head)
    }

    pub fn bind(&self, tape: &mut Tape) -> InnDeepONetVars {
        InnDeepONetVars {
            branch: self.branch.bind(tape),
            trunk: self.trunk.bind(tape),
            head: self.head.bind(tape),
        }
    }

    /// Interval sensors `u` (`S × m` each) at coordinates `x` (`p × dim`).
    pub fn forward_grid(
        &self,
        vars: &InnDeepONetVars,
        tape: &mut Tape,
        u: IntervalVars,
        x: Var,
    ) -> Result<IntervalVars> {
        let s = tape.shape(u.lo).0;
        let p = tape.shape(x).0;
        let beta = self.branch.forward(&vars.branch, tape, u)?;
        let tau = self.trunk.forward(&vars.trunk, tape, x)?;
        let (fun, coord) = grid_indices(s, p);
        let rep = IntervalVars {
            lo: tape.gather_rows(beta.lo, fun.clone())?,
            hi: tape.gather_rows(beta.hi, fun)?,
        };
        let t = tape.gather_rows(tau, coord)?;
        let prod = interval_multiplication_layer(tape, rep, t)?;
        let out = interval_dense_head(&self.head, vars.head, tape, prod)?;
        Ok(IntervalVars {
            lo: tape.reshape(out.lo, s, p)?,
            hi: tape.reshape(out.hi, s, p)?,
        })
    }

    pub fn predict_grid(&self, u_lo: &Tensor, u_hi: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        chunked(u_lo.rows(), |r| {
            let mut tape = Tape::inference();
            let vars = self.bind(&mut tape);
            let u = IntervalVars {
                lo: tape.constant(row_range(u_lo, r.clone())),
                hi: tape.constant(row_range(u_hi, r)),
            };
            let xv = tape.constant(x.clone());
            let out = self.forward_grid(&vars, &mut tape, u, xv)?;
            Ok((tape.value(out.lo).clone(), tape.value(out.hi).clone()))
        })
    }
}

impl Parameterised for InnDeepONet {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.branch.params_mut();
        p.extend(self.trunk.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}

/// Single-function, single-coordinate INN DeepONet prediction.
pub fn inn_deeponet_forward(
    net: &InnDeepONet,
    u: &crate::interval::IntervalVector,
    x: &[f64],
) -> Result<crate::interval::Interval> {
    let lo = Tensor::matrix(1, u.len(), u.lows())?;
    let hi = Tensor::matrix(1, u.len(), u.highs())?;
    let x = Tensor::matrix(1, x.len(), x.to_vec())?;
    let (l, h) = net.predict_grid(&lo, &hi, &x)?;
    crate::interval::Interval::new(l.data()[0], h.data()[0])
}

/// One `(u, x_j, g(x_j))` training tuple, borrowing from its function sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingTuple<'a> {
    pub sensors: &'a [f64],
    pub coord: &'a [f64],
    pub value: f64,
}

/// Flattens function samples into `N × p` tuples.
pub fn make_training_tuples(samples: &[FunctionSample]) -> Result<Vec<TrainingTuple<'_>>> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let (m, p, dim) = (first.sensors.len(), first.values.len(), first.coords.cols());
    let mut out = Vec::with_capacity(samples.len() * p);
    for s in samples {
        if s.sensors.len() != m || s.values.len() != p || s.coords.cols() != dim {
            return Err(invalid("function samples use different sensor or coordinate grids"));
        }
        if s.coords.rows() != p {
            return Err(invalid("coordinate count differs from value count"));
        }
        for j in 0..p {
            out.push(TrainingTuple {
                sensors: &s.sensors,
                coord: s.coords.row(j),
                value: s.values[j],
            });
        }
    }
    Ok(out)
}
