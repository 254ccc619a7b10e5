//! Interval bound propagation (IBP) and CROWN linear-relaxation bounds for
//! relu MLPs and for DeepONet branch inputs.
//!
//! Both methods are written against the [`Tape`] so the same code produces
//! inference bounds and differentiable training bounds. CROWN takes its
//! intermediate pre-activation bounds from IBP; the upper relaxation of an
//! unstable neuron stays differentiable in those bounds, while the neuron's
//! state and the adaptive lower slope are piecewise constant.
//!
//! The concretised CROWN interval is intersected with the IBP interval. With
//! the adaptive lower slope, back-substitution on its own can be looser than
//! IBP (for example `f(x) = -relu(x)` on `x ∈ [-1, 2]`), and the intersection
//! is still a sound enclosure. [`LinearBounds`] keeps the raw affine envelope.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::deeponet::{DeepONet, DeepONetVars};
use crate::error::{invalid, Error, Result};
use crate::inn::IntervalVars;
use crate::interval::IntervalVector;
use crate::layers::{Activation, MlpModel, MlpVars};
use crate::tensor::Tensor;

/// A batch of input boxes in center/radius form, one box per row.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSpec {
    center: Tensor,
    radius: Tensor,
}

impl BoxSpec {
    pub fn new(center: Tensor, radius: Tensor) -> Result<Self> {
        if center.rows() != radius.rows() || center.cols() != radius.cols() {
            return Err(Error::ShapeMismatch {
                op: "BoxSpec::new",
                lhs: center.shape().to_vec(),
                rhs: radius.shape().to_vec(),
            });
        }
        if radius.data().iter().any(|&r| !(r >= 0.0)) {
            return Err(invalid("box radius must be non-negative"));
        }
        let (rows, cols) = (radius.rows(), radius.cols());
        Ok(Self {
            center: center.reshaped(rows, cols)?,
            radius: radius.reshaped(rows, cols)?,
        })
    }

    pub fn from_bounds(lo: &Tensor, hi: &Tensor) -> Result<Self> {
        let center = lo.zip_map(hi, |l, h| 0.5 * (l + h))?;
        let radius = lo.zip_map(hi, |l, h| 0.5 * (h - l))?;
        Self::new(center, radius)
    }

    pub fn from_intervals(rows: &[IntervalVector]) -> Result<Self> {
        let lo: Vec<Vec<f64>> = rows.iter().map(|r| r.lows()).collect();
        let hi: Vec<Vec<f64>> = rows.iter().map(|r| r.highs()).collect();
        Self::from_bounds(&Tensor::from_rows(&lo)?, &Tensor::from_rows(&hi)?)
    }

    pub fn center(&self) -> &Tensor {
        &self.center
    }

    pub fn radius(&self) -> &Tensor {
        &self.radius
    }

    pub fn lo(&self) -> Tensor {
        self.center.zip_map(&self.radius, |c, r| c - r).unwrap()
    }

    pub fn hi(&self) -> Tensor {
        self.center.zip_map(&self.radius, |c, r| c + r).unwrap()
    }

    pub fn batch(&self) -> usize {
        self.center.rows()
    }

    pub fn dim(&self) -> usize {
        self.center.cols()
    }
}

/// Bounds on one layer's pre-activations plus the lower relaxation slope.
#[derive(Clone, Debug, PartialEq)]
pub struct PreActBounds {
    pub lo: Tensor,
    pub hi: Tensor,
    pub alpha: Tensor,
}

impl PreActBounds {
    /// Bounds with the adaptive slope `α = 1` if `hi ≥ |lo|`, else `0`.
    pub fn adaptive(lo: Tensor, hi: Tensor) -> Result<Self> {
        let alpha = lo.zip_map(&hi, |l, h| if h >= -l { 1.0 } else { 0.0 })?;
        if lo.data().iter().zip(hi.data()).any(|(l, h)| l > h) {
            return Err(invalid("pre-activation bounds must satisfy lo <= hi"));
        }
        Ok(Self { lo, hi, alpha })
    }
}

/// Per-neuron linear relaxation of relu: `sl·z ≤ relu(z) ≤ su·z + tu`.
#[derive(Clone, Debug, PartialEq)]
pub struct Relaxation {
    pub upper_slope: Tensor,
    pub upper_intercept: Tensor,
    pub lower_slope: Tensor,
}

pub fn crown_relax_relu(bounds: &PreActBounds) -> Relaxation {
    let n = bounds.lo.len();
    let mut su = Vec::with_capacity(n);
    let mut tu = Vec::with_capacity(n);
    let mut sl = Vec::with_capacity(n);
    for ((&l, &h), &a) in bounds
        .lo
        .data()
        .iter()
        .zip(bounds.hi.data())
        .zip(bounds.alpha.data())
    {
        if l >= 0.0 {
            su.push(1.0);
            tu.push(0.0);
            sl.push(1.0);
        } else if h <= 0.0 {
            su.push(0.0);
            tu.push(0.0);
            sl.push(0.0);
        } else {
            let s = h / (h - l);
            su.push(s);
            tu.push(-l * s);
            sl.push(a);
        }
    }
    let like = &bounds.lo;
    Relaxation {
        upper_slope: Tensor::raw_like(like, su),
        upper_intercept: Tensor::raw_like(like, tu),
        lower_slope: Tensor::raw_like(like, sl),
    }
}

/// Affine envelopes `A_lo·x + c_lo ≤ f(x) ≤ A_hi·x + c_hi`. Row `r` belongs to
/// the box in row `rows[r]` of the [`BoxSpec`] it was built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBounds {
    pub a_lo: Tensor,
    pub c_lo: Vec<f64>,
    pub a_hi: Tensor,
    pub c_hi: Vec<f64>,
    pub rows: Vec<usize>,
}

impl LinearBounds {
    /// Envelope values of row `r` at the input point `x`.
    pub fn evaluate(&self, r: usize, x: &[f64]) -> (f64, f64) {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        (
            dot(self.a_lo.row(r)) + self.c_lo[r],
            dot(self.a_hi.row(r)) + self.c_hi[r],
        )
    }

    /// Concretises every row over its box without intersecting with IBP.
    pub fn concretize(&self, boxes: &BoxSpec) -> Vec<(f64, f64)> {
        (0..self.rows.len())
            .map(|r| {
                let b = self.rows[r];
                let (c, rad) = (boxes.center.row(b), boxes.radius.row(b));
                let mut lo = self.c_lo[r];
                let mut hi = self.c_hi[r];
                for j in 0..c.len() {
                    let (al, ah) = (self.a_lo.get(r, j), self.a_hi.get(r, j));
                    lo += al * c[j] - al.abs() * rad[j];
                    hi += ah * c[j] + ah.abs() * rad[j];
                }
                (lo, hi)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Ibp,
    Crown,
}

/// IBP result: output bounds and every hidden layer's pre-activation bounds.
#[derive(Clone, Debug)]
pub struct IbpTrace {
    pub out: IntervalVars,
    pub preacts: Vec<IntervalVars>,
}

/// Propagates `center ± radius` (`B × d` each) through `model`.
pub fn ibp_tape(
    model: &MlpModel,
    vars: &MlpVars,
    tape: &mut Tape,
    center: Var,
    radius: Var,
) -> Result<IbpTrace> {
    if tape.shape(center).1 != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "ibp_forward",
            lhs: vec![model.input_dim()],
            rhs: tape.value(center).shape().to_vec(),
        });
    }
    let mut mu = center;
    let mut r = radius;
    let mut preacts = Vec::new();
    let n = model.layers.len();
    let mut out = None;
    for (k, (layer, v)) in model.layers.iter().zip(&vars.layers).enumerate() {
        let m = tape.matmul_t(mu, v.w)?;
        let m = tape.add_row(m, v.b)?;
        let abs_w = tape.abs(v.w)?;
        let rr = tape.matmul_t(r, abs_w)?;
        let lo = tape.sub(m, rr)?;
        let hi = tape.add(m, rr)?;
        if k + 1 < n {
            preacts.push(IntervalVars { lo, hi });
        }
        let lo = layer.activation.apply(tape, lo);
        let hi = layer.activation.apply(tape, hi);
        if k + 1 == n {
            out = Some(IntervalVars { lo, hi });
        } else {
            let s = tape.add(lo, hi)?;
            mu = tape.scale(s, 0.5);
            let d = tape.sub(hi, lo)?;
            r = tape.scale(d, 0.5);
        }
    }
    Ok(IbpTrace {
        out: out.expect("model has layers"),
        preacts,
    })
}

/// Linear objective applied to the network output before back-substitution:
/// row `r` bounds `a[r]·f(x_{rows[r]}) + c[r]`.
#[derive(Clone, Debug)]
pub struct CrownTop {
    pub a: Var,
    pub c: Var,
    pub rows: Arc<[usize]>,
}

impl CrownTop {
    /// One row per (sample, output) pair, selecting that output.
    pub fn identity(tape: &mut Tape, batch: usize, outputs: usize) -> Result<Self> {
        let eye = tape.constant(Tensor::identity(outputs));
        let sel: Arc<[usize]> = (0..batch).flat_map(|_| 0..outputs).collect();
        let a = tape.gather_rows(eye, sel)?;
        let c = tape.constant(Tensor::zeros(batch * outputs, 1));
        let rows = (0..batch)
            .flat_map(|b| std::iter::repeat_n(b, outputs))
            .collect();
        Ok(Self { a, c, rows })
    }
}

/// Back-substituted envelope handles and their concretisation over the box.
#[derive(Clone, Copy, Debug)]
pub struct CrownOut {
    pub a_lo: Var,
    pub c_lo: Var,
    pub a_hi: Var,
    pub c_hi: Var,
    pub lo: Var,
    pub hi: Var,
}

/// The relaxation of [`crown_relax_relu`] on the tape. For unstable neurons
/// `su = h / (h - l)` and `tu = -l·su` carry gradients to `l` and `h`.
fn relax_tape(tape: &mut Tape, pre: IntervalVars) -> Result<(Var, Var, Var)> {
    let (l, h) = (tape.value(pre.lo).clone(), tape.value(pre.hi).clone());
    let relax = crown_relax_relu(&PreActBounds::adaptive(l.clone(), h.clone())?);
    let unstable = l.zip_map(&h, |l, h| if l < 0.0 && h > 0.0 { 1.0 } else { 0.0 })?;
    let active = l.map(|l| if l >= 0.0 { 1.0 } else { 0.0 });
    let u = tape.constant(unstable.clone());
    let d = tape.sub(pre.hi, pre.lo)?;
    let d = tape.mul(d, u)?;
    // stable neurons divide by one instead of by their width
    let one = tape.constant(unstable.map(|v| 1.0 - v));
    let d = tape.add(d, one)?;
    let inv = tape.recip(d);
    let s = tape.mul(pre.hi, inv)?;
    let s = tape.mul(s, u)?;
    let a = tape.constant(active);
    let su = tape.add(s, a)?;
    let t = tape.mul(pre.lo, s)?;
    let tu = tape.neg(t);
    let sl = tape.constant(relax.lower_slope);
    Ok((su, tu, sl))
}

/// CROWN back-substitution through `model` for the objective `top`.
/// `preacts` are the hidden-layer pre-activation bounds (one `B × n` pair per
/// hidden layer), normally from [`ibp_tape`].
pub fn crown_tape(
    model: &MlpModel,
    vars: &MlpVars,
    tape: &mut Tape,
    center: Var,
    radius: Var,
    preacts: &[IntervalVars],
    top: &CrownTop,
) -> Result<CrownOut> {
    let n = model.layers.len();
    if preacts.len() + 1 != n {
        return Err(invalid(format!(
            "CROWN needs {} intermediate bounds, got {}",
            n - 1,
            preacts.len()
        )));
    }
    if model.layers[n - 1].activation != Activation::Linear {
        return Err(Error::Unsupported(
            "CROWN needs a linear output layer".into(),
        ));
    }
    if model.layers[..n - 1]
        .iter()
        .any(|l| l.activation == Activation::Tanh)
    {
        return Err(Error::Unsupported(
            "CROWN relaxation is implemented for relu and linear layers".into(),
        ));
    }

    let mut a_lo = top.a;
    let mut a_hi = top.a;
    let mut c_lo = top.c;
    let mut c_hi = top.c;
    for k in (0..n).rev() {
        let v = &vars.layers[k];
        let bl = tape.matmul_t(a_lo, v.b)?;
        c_lo = tape.add(c_lo, bl)?;
        let bh = tape.matmul_t(a_hi, v.b)?;
        c_hi = tape.add(c_hi, bh)?;
        a_lo = tape.matmul(a_lo, v.w)?;
        a_hi = tape.matmul(a_hi, v.w)?;
        if k == 0 || model.layers[k - 1].activation == Activation::Linear {
            continue;
        }
        let (su, tu, sl) = relax_tape(tape, preacts[k - 1])?;
        let su = tape.gather_rows(su, top.rows.clone())?;
        let tu = tape.gather_rows(tu, top.rows.clone())?;
        let sl = tape.gather_rows(sl, top.rows.clone())?;

        let hp = tape.max_with(a_hi, 0.0);
        let hn = tape.min_with(a_hi, 0.0);
        let t = tape.mul(hp, tu)?;
        let t = tape.sum_rows(t);
        c_hi = tape.add(c_hi, t)?;
        let x = tape.mul(hp, su)?;
        let y = tape.mul(hn, sl)?;
        a_hi = tape.add(x, y)?;

        let lp = tape.max_with(a_lo, 0.0);
        let ln = tape.min_with(a_lo, 0.0);
        let t = tape.mul(ln, tu)?;
        let t = tape.sum_rows(t);
        c_lo = tape.add(c_lo, t)?;
        let x = tape.mul(lp, sl)?;
        let y = tape.mul(ln, su)?;
        a_lo = tape.add(x, y)?;
    }

    let cr = tape.gather_rows(center, top.rows.clone())?;
    let rr = tape.gather_rows(radius, top.rows.clone())?;
    let lo = concretize(tape, a_lo, c_lo, cr, rr, -1.0)?;
    let hi = concretize(tape, a_hi, c_hi, cr, rr, 1.0)?;
    Ok(CrownOut {
        a_lo,
        c_lo,
        a_hi,
        c_hi,
        lo,
        hi,
    })
}

fn concretize(tape: &mut Tape, a: Var, c: Var, center: Var, radius: Var, sign: f64) -> Result<Var> {
    let ac = tape.mul(a, center)?;
    let ac = tape.sum_rows(ac);
    let abs = tape.abs(a)?;
    let ar = tape.mul(abs, radius)?;
    let ar = tape.sum_rows(ar);
    let ar = tape.scale(ar, sign);
    let s = tape.add(ac, ar)?;
    tape.add(s, c)
}

/// Element-wise intersection `[max(a_lo, b_lo), min(a_hi, b_hi)]`.
pub fn intersect(tape: &mut Tape, a: IntervalVars, b: IntervalVars) -> Result<IntervalVars> {
    Ok(IntervalVars {
        lo: tape.maximum(a.lo, b.lo)?,
        hi: tape.minimum(a.hi, b.hi)?,
    })
}

/// Bounds on an MLP's outputs over a batch of boxes, `B × out` each.
pub fn mlp_bounds_tape(
    model: &MlpModel,
    vars: &MlpVars,
    tape: &mut Tape,
    center: Var,
    radius: Var,
    method: BoundMethod,
) -> Result<IntervalVars> {
    let ibp = ibp_tape(model, vars, tape, center, radius)?;
    if method == BoundMethod::Ibp {
        return Ok(ibp.out);
    }
    let (batch, out) = tape.shape(ibp.out.lo);
    let top = CrownTop::identity(tape, batch, out)?;
    let crown = crown_tape(model, vars, tape, center, radius, &ibp.preacts, &top)?;
    let lo = tape.reshape(crown.lo, batch, out)?;
    let hi = tape.reshape(crown.hi, batch, out)?;
    intersect(tape, IntervalVars { lo, hi }, ibp.out)
}

fn box_vars(tape: &mut Tape, b: &BoxSpec) -> (Var, Var) {
    (
        tape.constant(b.center.clone()),
        tape.constant(b.radius.clone()),
    )
}

/// IBP output bounds for every box in the batch.
pub fn ibp_forward(model: &MlpModel, boxes: &BoxSpec) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::inference();
    let vars = model.bind(&mut tape);
    let (c, r) = box_vars(&mut tape, boxes);
    let t = ibp_tape(model, &vars, &mut tape, c, r)?;
    Ok((tape.value(t.out.lo).clone(), tape.value(t.out.hi).clone()))
}

/// CROWN envelopes and the concretised output bounds (intersected with IBP).
pub fn crown_backward_bounds(
    model: &MlpModel,
    boxes: &BoxSpec,
) -> Result<(LinearBounds, (Tensor, Tensor))> {
    let mut tape = Tape::inference();
    let vars = model.bind(&mut tape);
    let (c, r) = box_vars(&mut tape, boxes);
    let ibp = ibp_tape(model, &vars, &mut tape, c, r)?;
    let (batch, out) = tape.shape(ibp.out.lo);
    let top = CrownTop::identity(&mut tape, batch, out)?;
    let crown = crown_tape(model, &vars, &mut tape, c, r, &ibp.preacts, &top)?;
    let lb = LinearBounds {
        a_lo: tape.value(crown.a_lo).clone(),
        c_lo: tape.value(crown.c_lo).data().to_vec(),
        a_hi: tape.value(crown.a_hi).clone(),
        c_hi: tape.value(crown.c_hi).data().to_vec(),
        rows: top.rows.to_vec(),
    };
    let lo = tape.reshape(crown.lo, batch, out)?;
    let hi = tape.reshape(crown.hi, batch, out)?;
    let both = intersect(&mut tape, IntervalVars { lo, hi }, ibp.out)?;
    Ok((
        lb,
        (tape.value(both.lo).clone(), tape.value(both.hi).clone()),
    ))
}

/// Sign-split combination of interval latents `β` (`S × q`) with exact trunk
/// latents `τ` (`p × q`), giving `S × p` bounds on `Σ β_i τ_i`.
pub fn combine_interval_latents(tape: &mut Tape, beta: IntervalVars, tau: Var) -> Result<IntervalVars> {
    let tp = tape.max_with(tau, 0.0);
    let tn = tape.min_with(tau, 0.0);
    let a = tape.matmul_t(beta.lo, tp)?;
    let b = tape.matmul_t(beta.hi, tn)?;
    let lo = tape.add(a, b)?;
    let c = tape.matmul_t(beta.hi, tp)?;
    let d = tape.matmul_t(beta.lo, tn)?;
    let hi = tape.add(c, d)?;
    Ok(IntervalVars { lo, hi })
}

/// Bounds on `G(u)(x_j)` for every branch box `s` and coordinate `j`
/// (`S × p`). The trunk is evaluated exactly at `coords`.
pub fn deeponet_bounds_tape(
    net: &DeepONet,
    vars: &DeepONetVars,
    tape: &mut Tape,
    center: Var,
    radius: Var,
    coords: Var,
    method: BoundMethod,
) -> Result<IntervalVars> {
    let tau = net.trunk.forward(&vars.trunk, tape, coords)?;
    let ibp = ibp_tape(&net.branch, &vars.branch, tape, center, radius)?;
    let coarse = combine_interval_latents(tape, ibp.out, tau)?;
    if method == BoundMethod::Ibp {
        return Ok(coarse);
    }
    let s = tape.shape(center).0;
    let p = tape.shape(coords).0;
    let sel: Arc<[usize]> = (0..s).flat_map(|_| 0..p).collect();
    let a = tape.gather_rows(tau, sel)?;
    let c = tape.constant(Tensor::zeros(s * p, 1));
    let rows: Arc<[usize]> = (0..s).flat_map(|i| std::iter::repeat_n(i, p)).collect();
    let top = CrownTop { a, c, rows };
    let crown = crown_tape(
        &net.branch,
        &vars.branch,
        tape,
        center,
        radius,
        &ibp.preacts,
        &top,
    )?;
    let lo = tape.reshape(crown.lo, s, p)?;
    let hi = tape.reshape(crown.hi, s, p)?;
    intersect(tape, IntervalVars { lo, hi }, coarse)
}

/// Eager DeepONet bounds for branch boxes (`S × m`) at coordinates (`p × dim`).
pub fn bounded_deeponet_forward(
    net: &DeepONet,
    branch_box: &BoxSpec,
    coords: &Tensor,
    method: BoundMethod,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::inference();
    let vars = net.bind(&mut tape);
    let (c, r) = box_vars(&mut tape, branch_box);
    let x = tape.constant(coords.clone());
    let out = deeponet_bounds_tape(net, &vars, &mut tape, c, r, x, method)?;
    Ok((tape.value(out.lo).clone(), tape.value(out.hi).clone()))
}
