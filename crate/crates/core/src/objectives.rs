//! Training losses on the tape and evaluation metrics on plain slices.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::inn::IntervalVars;

/// Orientation of the crossing penalty in the midpoint loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyOrientation {
    /// `max(0, ŷ_L - ŷ_U)²`, penalising crossed bounds.
    #[default]
    Crossing,
    /// `max(0, ŷ_U - ŷ_L)²`, the reversed form.
    Reversed,
}

/// Which loss drives training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Rann,
    Bound,
    Midpoint,
    LinexBound,
    LinexMidpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub linex_a: f64,
    pub quantile_tau: f64,
    pub cwc_delta: f64,
    pub cwc_gamma: f64,
    pub midpoint_penalty: PenaltyOrientation,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            linex_a: 3.0,
            quantile_tau: 0.5,
            cwc_delta: 0.0,
            cwc_gamma: 5.0,
            midpoint_penalty: PenaltyOrientation::Crossing,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(invalid("lambda must be non-negative"));
        }
        if self.linex_a == 0.0 || !self.linex_a.is_finite() {
            return Err(invalid("linex asymmetry must be finite and non-zero"));
        }
        if !(self.quantile_tau > 0.0 && self.quantile_tau < 1.0) {
            return Err(invalid("quantile level must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.cwc_delta) || !(self.cwc_gamma > 0.0) {
            return Err(invalid("cwc needs delta in [0, 1) and gamma > 0"));
        }
        Ok(())
    }
}

fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let s = tape.square(d);
    Ok(tape.mean(s))
}

/// `mean(max(0, first - second)²)`.
fn hinge_sq(tape: &mut Tape, first: Var, second: Var) -> Result<Var> {
    let d = tape.sub(first, second)?;
    let r = tape.relu(d);
    let s = tape.square(r);
    Ok(tape.mean(s))
}

fn with_penalty(tape: &mut Tape, base: Var, penalty: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(base);
    }
    let p = tape.scale(penalty, lambda);
    tape.add(base, p)
}

fn midpoint(tape: &mut Tape, v: IntervalVars) -> Result<Var> {
    let s = tape.add(v.lo, v.hi)?;
    Ok(tape.scale(s, 0.5))
}

/// Two-bound MSE plus `λ · mean(max(0, ŷ_L - ŷ_U)²)`.
pub fn bound_loss(tape: &mut Tape, pred: IntervalVars, target: IntervalVars, lambda: f64) -> Result<Var> {
    let l = mse(tape, pred.lo, target.lo)?;
    let u = mse(tape, pred.hi, target.hi)?;
    let base = tape.add(l, u)?;
    let pen = hinge_sq(tape, pred.lo, pred.hi)?;
    with_penalty(tape, base, pen, lambda)
}

/// The doubled-output regression loss; identical in form to [`bound_loss`].
pub fn rann_loss(tape: &mut Tape, pred: IntervalVars, target: IntervalVars, lambda: f64) -> Result<Var> {
    bound_loss(tape, pred, target, lambda)
}

/// Midpoint MSE plus the crossing penalty in the chosen orientation.
pub fn midpoint_loss(
    tape: &mut Tape,
    pred: IntervalVars,
    target: IntervalVars,
    lambda: f64,
    orientation: PenaltyOrientation,
) -> Result<Var> {
    let pm = midpoint(tape, pred)?;
    let tm = midpoint(tape, target)?;
    let base = mse(tape, pm, tm)?;
    let pen = match orientation {
        PenaltyOrientation::Crossing => hinge_sq(tape, pred.lo, pred.hi)?,
        PenaltyOrientation::Reversed => hinge_sq(tape, pred.hi, pred.lo)?,
    };
    with_penalty(tape, base, pen, lambda)
}

/// Batch mean of `exp(a(y - ŷ)) - a(y - ŷ) - 1`.
pub fn linex_tape(tape: &mut Tape, y: Var, yhat: Var, a: f64) -> Result<Var> {
    if a == 0.0 {
        return Err(invalid("linex asymmetry must be non-zero"));
    }
    let d = tape.sub(y, yhat)?;
    let ad = tape.scale(d, a);
    let e = tape.exp(ad);
    let t = tape.sub(e, ad)?;
    let t = tape.offset(t, -1.0);
    Ok(tape.mean(t))
}

/// Linex on both bounds plus the crossing penalty.
pub fn linex_bound_loss(
    tape: &mut Tape,
    pred: IntervalVars,
    target: IntervalVars,
    a: f64,
    lambda: f64,
) -> Result<Var> {
    let l = linex_tape(tape, target.lo, pred.lo, a)?;
    let u = linex_tape(tape, target.hi, pred.hi, a)?;
    let base = tape.add(l, u)?;
    let pen = hinge_sq(tape, pred.lo, pred.hi)?;
    with_penalty(tape, base, pen, lambda)
}

/// Linex on the midpoints plus the crossing penalty.
pub fn linex_midpoint_loss(
    tape: &mut Tape,
    pred: IntervalVars,
    target: IntervalVars,
    a: f64,
    lambda: f64,
    orientation: PenaltyOrientation,
) -> Result<Var> {
    let pm = midpoint(tape, pred)?;
    let tm = midpoint(tape, target)?;
    let base = linex_tape(tape, tm, pm, a)?;
    let pen = match orientation {
        PenaltyOrientation::Crossing => hinge_sq(tape, pred.lo, pred.hi)?,
        PenaltyOrientation::Reversed => hinge_sq(tape, pred.hi, pred.lo)?,
    };
    with_penalty(tape, base, pen, lambda)
}

/// Pinball loss `Σ τ·max(0, y - ŷ) + (1 - τ)·max(0, ŷ - y)`.
pub fn quantile_tape(tape: &mut Tape, y: Var, yhat: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid("quantile level must lie in (0, 1)"));
    }
    let d = tape.sub(y, yhat)?;
    let pos = tape.relu(d);
    let nd = tape.neg(d);
    let neg = tape.relu(nd);
    let a = tape.scale(pos, tau);
    let b = tape.scale(neg, 1.0 - tau);
    let s = tape.add(a, b)?;
    Ok(tape.sum(s))
}

/// Dispatches on `kind`.
pub fn interval_loss(
    tape: &mut Tape,
    kind: LossKind,
    pred: IntervalVars,
    target: IntervalVars,
    cfg: &LossConfig,
) -> Result<Var> {
    match kind {
        LossKind::Rann => rann_loss(tape, pred, target, cfg.lambda),
        LossKind::Bound => bound_loss(tape, pred, target, cfg.lambda),
        LossKind::Midpoint => midpoint_loss(tape, pred, target, cfg.lambda, cfg.midpoint_penalty),
        LossKind::LinexBound => linex_bound_loss(tape, pred, target, cfg.linex_a, cfg.lambda),
        LossKind::LinexMidpoint => linex_midpoint_loss(
            tape,
            pred,
            target,
            cfg.linex_a,
            cfg.lambda,
            cfg.midpoint_penalty,
        ),
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(invalid("empty batch"));
    }
    if a.len() != b.len() {
        return Err(invalid(format!("batch lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Eager batch-mean linex.
pub fn linex(y: &[f64], yhat: &[f64], a: f64) -> Result<f64> {
    check_pair(y, yhat)?;
    if a == 0.0 {
        return Err(invalid("linex asymmetry must be non-zero"));
    }
    let s: f64 = y
        .iter()
        .zip(yhat)
        .map(|(y, h)| {
            let d = a * (y - h);
            d.exp() - d - 1.0
        })
        .sum();
    Ok(s / y.len() as f64)
}

/// Eager pinball loss (summed).
pub fn quantile_loss(y: &[f64], yhat: &[f64], tau: f64) -> Result<f64> {
    check_pair(y, yhat)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid("quantile level must lie in (0, 1)"));
    }
    Ok(y.iter()
        .zip(yhat)
        .map(|(y, h)| tau * (y - h).max(0.0) + (1.0 - tau) * (h - y).max(0.0))
        .sum())
}

/// A ratio metric averaged over targets with positive width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthNormalised {
    pub value: f64,
    /// Items skipped because the target interval had zero width.
    pub excluded: usize,
}

fn check_four(pl: &[f64], ph: &[f64], tl: &[f64], th: &[f64]) -> Result<()> {
    check_pair(pl, ph)?;
    check_pair(pl, tl)?;
    check_pair(pl, th)
}

fn width_normalised(
    pl: &[f64],
    ph: &[f64],
    tl: &[f64],
    th: &[f64],
    f: impl Fn(f64, f64, f64, f64) -> f64,
) -> Result<WidthNormalised> {
    check_four(pl, ph, tl, th)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for i in 0..pl.len() {
        let w = th[i] - tl[i];
        if w > 0.0 {
            sum += f(pl[i], ph[i], tl[i], th[i]) / w;
            used += 1;
        }
    }
    let value = if used == 0 { f64::NAN } else { sum / used as f64 };
    Ok(WidthNormalised {
        value,
        excluded: pl.len() - used,
    })
}

/// Mean ratio of predicted to target width.
pub fn pinaw(pl: &[f64], ph: &[f64], tl: &[f64], th: &[f64]) -> Result<WidthNormalised> {
    width_normalised(pl, ph, tl, th, |pl, ph, _, _| ph - pl)
}

/// Fraction of points `y` inside the predicted intervals.
pub fn picp_indicator(pl: &[f64], ph: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pl, ph)?;
    check_pair(pl, y)?;
    let hits = (0..y.len()).filter(|&i| pl[i] <= y[i] && y[i] <= ph[i]).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Mean overlap of predicted and target intervals relative to target width.
pub fn picp_overlap(pl: &[f64], ph: &[f64], tl: &[f64], th: &[f64]) -> Result<WidthNormalised> {
    width_normalised(pl, ph, tl, th, |pl, ph, tl, th| (ph.min(th) - pl.max(tl)).max(0.0))
}

/// `PINAW · (1 + exp(γ · max(0, (1 - δ) - PICP)))`.
pub fn cwc(pinaw: f64, picp: f64, delta: f64, gamma: f64) -> f64 {
    pinaw * (1.0 + (gamma * ((1.0 - delta) - picp).max(0.0)).exp())
}

/// RMSE of the lower bounds and of the upper bounds.
pub fn rmse_bounds(pl: &[f64], ph: &[f64], tl: &[f64], th: &[f64]) -> Result<(f64, f64)> {
    check_four(pl, ph, tl, th)?;
    let r = |p: &[f64], t: &[f64]| {
        (p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64).sqrt()
    };
    Ok((r(pl, tl), r(ph, th)))
}

/// Every reported metric for one set of predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub rmse_l: f64,
    pub rmse_u: f64,
    pub linex_l: f64,
    pub linex_u: f64,
    pub pinaw: f64,
    pub picp: f64,
    pub cwc: f64,
    pub excluded: usize,
}

/// Metrics with `y := true bound`, `ŷ := predicted bound` for linex.
pub fn interval_metrics(
    pl: &[f64],
    ph: &[f64],
    tl: &[f64],
    th: &[f64],
    cfg: &LossConfig,
) -> Result<IntervalMetrics> {
    let (rmse_l, rmse_u) = rmse_bounds(pl, ph, tl, th)?;
    let w = pinaw(pl, ph, tl, th)?;
    let c = picp_overlap(pl, ph, tl, th)?;
    Ok(IntervalMetrics {
        rmse_l,
        rmse_u,
        linex_l: linex(tl, pl, cfg.linex_a)?,
        linex_u: linex(th, ph, cfg.linex_a)?,
        pinaw: w.value,
        picp: c.value,
        cwc: cwc(w.value, c.value, cfg.cwc_delta, cfg.cwc_gamma),
        excluded: w.excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pair(tape: &mut Tape, lo: &[f64], hi: &[f64]) -> IntervalVars {
        IntervalVars {
            lo: tape.constant(Tensor::vector(lo.to_vec()).unwrap()),
            hi: tape.constant(Tensor::vector(hi.to_vec()).unwrap()),
        }
    }

    fn value(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn rann_loss_examples() {
        let mut t = Tape::inference();
        let p = pair(&mut t, &[2.0], &[1.0]);
        let y = pair(&mut t, &[1.0], &[2.0]);
        let l = rann_loss(&mut t, p, y, 1.0).unwrap();
        assert_eq!(value(&t, l), 3.0);
        let l0 = rann_loss(&mut t, p, y, 0.0).unwrap();
        assert_eq!(value(&t, l0), 2.0);
        let perfect = bound_loss(&mut t, y, y, 10.0).unwrap();
        assert_eq!(value(&t, perfect), 0.0);
    }

    #[test]
    fn midpoint_loss_examples() {
        let mut t = Tape::inference();
        let p = pair(&mut t, &[0.0], &[2.0]);
        let y = pair(&mut t, &[0.5], &[1.5]);
        let l = midpoint_loss(&mut t, p, y, 10.0, PenaltyOrientation::Crossing).unwrap();
        assert_eq!(value(&t, l), 0.0);
        let p = pair(&mut t, &[1.0], &[1.0]);
        let y = pair(&mut t, &[0.0], &[4.0]);
        let l = midpoint_loss(&mut t, p, y, 10.0, PenaltyOrientation::Crossing).unwrap();
        assert_eq!(value(&t, l), 1.0);
    }

    #[test]
    fn reversed_penalty_hits_ordered_bounds() {
        let mut t = Tape::inference();
        let p = pair(&mut t, &[0.0], &[2.0]);
        let y = pair(&mut t, &[0.0], &[2.0]);
        let l = midpoint_loss(&mut t, p, y, 1.0, PenaltyOrientation::Reversed).unwrap();
        assert_eq!(value(&t, l), 4.0);
    }

    #[test]
    fn linex_examples() {
        assert_eq!(linex(&[1.0], &[1.0], 3.0).unwrap(), 0.0);
        assert!((linex(&[1.0], &[0.0], 1.0).unwrap() - (std::f64::consts::E - 2.0)).abs() < 1e-12);
        assert!((linex(&[0.5], &[0.0], 3.0).unwrap() - 1.981_689_070_7).abs() < 1e-9);
        assert!(linex(&[1.0], &[0.0], 0.0).is_err());
        // underestimation costs more than overestimation for a > 0
        assert!(linex(&[0.3], &[0.0], 3.0).unwrap() > linex(&[0.0], &[0.3], 3.0).unwrap());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile_loss(&[1.0], &[1.0], 0.3).unwrap(), 0.0);
        assert_eq!(quantile_loss(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap(), 1.0);
        assert!((quantile_loss(&[1.0], &[0.0], 0.9).unwrap() - 0.9).abs() < 1e-15);
        assert!(quantile_loss(&[1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn coverage_examples() {
        let w = pinaw(&[0.0, 1.0], &[2.0, 4.0], &[5.0, 0.0], &[7.0, 3.0]).unwrap();
        assert_eq!(w.value, 1.0);
        let c = picp_overlap(&[0.0], &[2.0], &[1.0], &[3.0]).unwrap();
        assert_eq!(c.value, 0.5);
        assert_eq!(cwc(1.0, 1.0, 0.0, 5.0), 2.0);
        let z = pinaw(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((z.value, z.excluded), (1.0, 1));
        assert_eq!(picp_indicator(&[0.0, 0.0], &[1.0, 1.0], &[0.5, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn perfect_predictions() {
        let lo = [0.0, 1.0, -2.0];
        let hi = [0.5, 1.5, 3.0];
        let m = interval_metrics(&lo, &hi, &lo, &hi, &LossConfig::default()).unwrap();
        assert_eq!((m.rmse_l, m.rmse_u, m.pinaw, m.picp), (0.0, 0.0, 1.0, 1.0));
        assert_eq!((m.linex_l, m.linex_u), (0.0, 0.0));
    }

    #[test]
    fn empty_batches_are_errors() {
        assert!(linex(&[], &[], 1.0).is_err());
        assert!(rmse_bounds(&[], &[], &[], &[]).is_err());
    }
}
