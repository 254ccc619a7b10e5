//! Adam and the training loops shared by every model family.

use std::cell::Cell;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{mix_seed, rng_from_seed, IntervalDataset, IntervalFunctionDataset, PointDataset};
use crate::error::{invalid, Error, Result};
use crate::inn::IntervalVars;
use crate::layers::{MlpModel, Parameterised};
use crate::models::{MethodKind, OperatorModel, RegressionModel};
use crate::objectives::{interval_loss, LossConfig, LossKind, PenaltyOrientation};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

/// One Adam update. Moments are created on the first call.
pub fn adam_step(params: Vec<&mut Tensor>, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(invalid(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged(format!("non-finite gradient for parameter {i}")));
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Tensor::raw_like(g, vec![0.0; g.len()])).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let pd = p.data_mut();
        for (((w, g), m), v) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: MethodKind,
    /// Overrides the method's default loss.
    pub loss: Option<LossKind>,
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch, as a fraction of the initial
    /// one; the rate decays geometrically in between.
    pub final_lr_fraction: f64,
    pub epochs: usize,
    /// Tuples per step; `None` trains full batch.
    pub batch_size: Option<usize>,
    /// Functions per operator minibatch; the rest of `batch_size` is split
    /// over query coordinates.
    pub functions_per_batch: usize,
    pub lambda: f64,
    pub linex_a: f64,
    pub midpoint_penalty: PenaltyOrientation,
    /// Fraction of the epochs over which input and target radii ramp
    /// linearly from zero to full size. Zero disables the ramp.
    pub radius_warmup: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: MethodKind::Naive,
            loss: None,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            epochs: 2000,
            batch_size: None,
            functions_per_batch: 16,
            lambda: 10.0,
            linex_a: 3.0,
            midpoint_penalty: PenaltyOrientation::Crossing,
            radius_warmup: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch_size == Some(0) || self.functions_per_batch == 0 {
            return Err(invalid("batch sizes must be positive"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(invalid("final learning-rate fraction must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.radius_warmup) {
            return Err(invalid("radius warm-up must lie in [0, 1]"));
        }
        self.loss_config().validate()
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.unwrap_or(self.method.default_loss())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            linex_a: self.linex_a,
            midpoint_penalty: self.midpoint_penalty,
            ..LossConfig::default()
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs < 2 {
            return self.learning_rate;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.learning_rate * self.final_lr_fraction.powf(t)
    }

    /// Radius scale applied during `epoch`.
    pub fn radius_scale(&self, epoch: usize) -> f64 {
        let ramp = self.radius_warmup * self.epochs as f64;
        if ramp < 1.0 {
            1.0
        } else {
            ((epoch + 1) as f64 / ramp).min(1.0)
        }
    }

    fn init_rng(&self) -> ChaCha8Rng {
        rng_from_seed(mix_seed(self.seed, 0))
    }

    fn batch_rng(&self) -> ChaCha8Rng {
        rng_from_seed(mix_seed(self.seed, 1))
    }
}

/// Outcome of a training run. A diverged run keeps its partial trace and
/// sets `failed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per completed epoch.
    pub trace: Vec<f64>,
    pub steps: usize,
    pub failed: Option<String>,
    pub train_s: f64,
}

impl TrainReport {
    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().copied()
    }
}

/// Generic loop: `batches` lists the steps of one epoch, `loss` builds the
/// objective for one of them, returning it with the parameter leaves, and
/// `lr` gives the step size per epoch.
pub fn fit<M, B, FB, FL>(
    model: &mut M,
    epochs: usize,
    lr: impl Fn(usize) -> f64,
    rng: &mut ChaCha8Rng,
    mut batches: FB,
    mut loss: FL,
) -> Result<TrainReport>
where
    M: Parameterised,
    FB: FnMut(&mut ChaCha8Rng) -> Vec<B>,
    FL: FnMut(&M, &mut Tape, &B) -> Result<(Var, Vec<Var>)>,
{
    let start = Instant::now();
    let mut state = AdamState::default();
    let mut trace = Vec::with_capacity(epochs);
    let mut steps = 0;
    let mut failed = None;
    'epochs: for epoch in 0..epochs {
        let plan = batches(rng);
        let mut total = 0.0;
        for b in &plan {
            let mut tape = Tape::new();
            let (l, params) = loss(model, &mut tape, b)?;
            let value = tape.value(l).item()?;
            if !value.is_finite() {
                failed = Some(format!("loss became {value} at epoch {epoch}"));
                break 'epochs;
            }
            let g = tape.gradient(l)?;
            let grads: Vec<Tensor> = params
                .iter()
                .map(|p| g.get_or_zeros(*p, tape.value(*p)))
                .collect();
            drop(tape);
            match adam_step(model.params_mut(), &grads, &mut state, lr(epoch)) {
                Ok(()) => {}
                Err(Error::Diverged(msg)) => {
                    failed = Some(format!("{msg} at epoch {epoch}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if model.params_mut().iter().any(|p| !p.is_finite()) {
                failed = Some(format!("non-finite parameters at epoch {epoch}"));
                break 'epochs;
            }
            total += value;
            steps += 1;
        }
        trace.push(total / plan.len().max(1) as f64);
    }
    Ok(TrainReport {
        trace,
        steps,
        failed,
        train_s: start.elapsed().as_secs_f64(),
    })
}

/// Shuffled row minibatches, or a single full batch.
fn row_batches(n: usize, batch: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match batch {
        Some(b) if b < n => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.chunks(b).map(|c| c.to_vec()).collect()
        }
        _ => vec![(0..n).collect()],
    }
}

/// Shrinks `[lo, hi]` about its midpoint by `k`.
fn scale_radius(lo: Tensor, hi: Tensor, k: f64) -> (Tensor, Tensor) {
    if k == 1.0 {
        return (lo, hi);
    }
    let l = lo.zip_map(&hi, |l, h| 0.5 * (l + h) - 0.5 * k * (h - l)).expect("same shape");
    let h = lo.zip_map(&hi, |l, h| 0.5 * (l + h) + 0.5 * k * (h - l)).expect("same shape");
    (l, h)
}

fn targets(tape: &mut Tape, lo: Tensor, hi: Tensor) -> IntervalVars {
    IntervalVars {
        lo: tape.constant(lo),
        hi: tape.constant(hi),
    }
}

/// Fresh model for `cfg.method`, trained on interval regression data.
pub fn train_regression(
    data: &IntervalDataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(RegressionModel, TrainReport)> {
    cfg.validate()?;
    let mut model = RegressionModel::init(
        cfg.method,
        data.input_dim(),
        hidden,
        data.output_dim(),
        &mut cfg.init_rng(),
    )?;
    let report = continue_regression(&mut model, data, cfg)?;
    Ok((model, report))
}

/// Trains an existing regression model in place.
pub fn continue_regression(
    model: &mut RegressionModel,
    data: &IntervalDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("empty training set"));
    }
    let (kind, lc) = (cfg.loss_kind(), cfg.loss_config());
    let n = data.len();
    let full = (
        data.inputs_lo.clone(),
        data.inputs_hi.clone(),
        data.outputs_lo.clone(),
        data.outputs_hi.clone(),
    );
    let epoch = Cell::new(0);
    fit(
        model,
        cfg.epochs,
        |e| cfg.learning_rate_at(e),
        &mut cfg.batch_rng(),
        |rng| {
            epoch.set(epoch.get() + 1);
            row_batches(n, cfg.batch_size, rng)
        },
        |m, tape, idx| {
            let k = cfg.radius_scale(epoch.get() - 1);
            let (xl, xh, yl, yh) = if idx.len() == n {
                full.clone()
            } else {
                (
                    data.inputs_lo.select_rows(idx),
                    data.inputs_hi.select_rows(idx),
                    data.outputs_lo.select_rows(idx),
                    data.outputs_hi.select_rows(idx),
                )
            };
            let (xl, xh) = scale_radius(xl, xh, k);
            let (yl, yh) = scale_radius(yl, yh, k);
            let (pred, params) = m.forward(tape, &xl, &xh)?;
            let target = targets(tape, yl, yh);
            Ok((interval_loss(tape, kind, pred, target, &lc)?, params))
        },
    )
}

/// One operator minibatch: function rows and coordinate columns.
#[derive(Clone, Debug)]
pub struct GridBatch {
    pub functions: Vec<usize>,
    pub coords: Vec<usize>,
}

/// `functions_per_batch` shuffled functions per step, each against the same
/// random subset of `batch_size / functions_per_batch` coordinates.
pub fn grid_batches(n: usize, p: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<GridBatch> {
    let tuples = cfg.batch_size.unwrap_or(n * p);
    let s = cfg.functions_per_batch.min(n);
    let per = (tuples / s).clamp(1, p);
    let mut funs: Vec<usize> = (0..n).collect();
    funs.shuffle(rng);
    funs.chunks(s)
        .map(|c| {
            let mut coords = if per == p {
                (0..p).collect()
            } else {
                index::sample(rng, p, per).into_vec()
            };
            coords.sort_unstable();
            GridBatch {
                functions: c.to_vec(),
                coords,
            }
        })
        .collect()
}

pub fn train_operator(
    data: &IntervalFunctionDataset,
    arch: &crate::models::OperatorArch,
    cfg: &TrainConfig,
) -> Result<(OperatorModel, TrainReport)> {
    cfg.validate()?;
    let mut model = OperatorModel::init(cfg.method, arch, &mut cfg.init_rng())?;
    let report = continue_operator(&mut model, data, cfg)?;
    Ok((model, report))
}

pub fn continue_operator(
    model: &mut OperatorModel,
    data: &IntervalFunctionDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("empty training set"));
    }
    let (kind, lc) = (cfg.loss_kind(), cfg.loss_config());
    let (n, p) = (data.len(), data.points());
    let epoch = Cell::new(0);
    fit(
        model,
        cfg.epochs,
        |e| cfg.learning_rate_at(e),
        &mut cfg.batch_rng(),
        |rng| {
            epoch.set(epoch.get() + 1);
            grid_batches(n, p, cfg, rng)
        },
        |m, tape, b| {
            let k = cfg.radius_scale(epoch.get() - 1);
            let (ul, uh) = scale_radius(
                data.sensors_lo.select_rows(&b.functions),
                data.sensors_hi.select_rows(&b.functions),
                k,
            );
            let x = data.coords.select_rows(&b.coords);
            let (yl, yh) = scale_radius(
                data.values_lo.select_rows(&b.functions).select_cols(&b.coords),
                data.values_hi.select_rows(&b.functions).select_cols(&b.coords),
                k,
            );
            let (pred, params) = m.forward(tape, &ul, &uh, &x)?;
            let target = targets(tape, yl, yh);
            Ok((interval_loss(tape, kind, pred, target, &lc)?, params))
        },
    )
}

/// Plain MSE training of a pointwise MLP.
pub fn train_pointwise(model: &mut MlpModel, data: &PointDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("empty training set"));
    }
    if data.inputs.cols() != model.input_dim() || data.outputs.cols() != model.output_dim() {
        return Err(Error::ShapeMismatch {
            op: "train_pointwise",
            lhs: vec![model.input_dim(), model.output_dim()],
            rhs: vec![data.inputs.cols(), data.outputs.cols()],
        });
    }
    let n = data.len();
    fit(
        model,
        cfg.epochs,
        |e| cfg.learning_rate_at(e),
        &mut cfg.batch_rng(),
        |rng| row_batches(n, cfg.batch_size, rng),
        |m, tape, idx| {
            let vars = m.bind(tape);
            let (x, y) = if idx.len() == n {
                (data.inputs.clone(), data.outputs.clone())
            } else {
                (data.inputs.select_rows(idx), data.outputs.select_rows(idx))
            };
            let xv = tape.constant(x);
            let yv = tape.constant(y);
            let pred = m.forward(&vars, tape, xv)?;
            let d = tape.sub(pred, yv)?;
            let sq = tape.square(d);
            Ok((tape.mean(sq), vars.vars()))
        },
    )
}

/// Fresh pointwise MLP with relu hidden layers, trained by MSE.
pub fn train_pointwise_fresh(
    data: &PointDataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    let mut sizes = vec![data.inputs.cols()];
    sizes.extend_from_slice(hidden);
    sizes.push(data.outputs.cols());
    let mut model = MlpModel::glorot(
        &sizes,
        crate::layers::Activation::Relu,
        crate::layers::Activation::Linear,
        &mut cfg.init_rng(),
    )?;
    let report = train_pointwise(&mut model, data, cfg)?;
    Ok((model, report))
}
