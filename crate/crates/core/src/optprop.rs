//! Optimisation-based interval propagation through a pointwise surrogate:
//! minimise and maximise over each input box with projected Nelder–Mead
//! from quasi-random starts.

use serde::{Deserialize, Serialize};

use crate::data::{IntervalDataset, PointDataset};
use crate::error::{invalid, Result};
use crate::interval::{Interval, IntervalVector};
use crate::layers::MlpModel;
use crate::tensor::Tensor;
use crate::train::{train_pointwise_fresh, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptPropConfig {
    pub multistarts: usize,
    /// Function evaluations per start; every start spends exactly this many.
    pub max_evals: usize,
    /// Initial simplex edge as a fraction of each box side.
    pub initial_step: f64,
    /// Simplex diameter below which the simplex is rebuilt around its best vertex.
    pub xtol: f64,
    pub seed: u64,
}

impl Default for OptPropConfig {
    fn default() -> Self {
        Self {
            multistarts: 5,
            max_evals: 200,
            initial_step: 0.25,
            xtol: 1e-10,
            seed: 0,
        }
    }
}

impl OptPropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multistarts == 0 || self.max_evals == 0 {
            return Err(invalid("opt-prop needs at least one start and one evaluation"));
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 1.0) {
            return Err(invalid("initial simplex step must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Bounds for one box and the number of objective calls spent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptPropResult {
    pub bounds: Interval,
    pub evals: usize,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Halton point `index` in `[0,1)^d`; dimensions past the prime table reuse
/// it with a shifted index.
pub fn halton(index: u64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let base = PRIMES[j % PRIMES.len()];
            radical_inverse(index + 1 + (j / PRIMES.len()) as u64 * 7919, base)
        })
        .collect()
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Budgeted objective: returns `None` once `max_evals` calls have been made.
struct Budget<'f, F> {
    f: &'f mut F,
    left: usize,
    used: usize,
}

impl<F: FnMut(&[f64]) -> f64> Budget<'_, F> {
    fn call(&mut self, x: &[f64]) -> Option<f64> {
        if self.left == 0 {
            return None;
        }
        self.left -= 1;
        self.used += 1;
        Some((self.f)(x))
    }
}

/// Projected Nelder–Mead minimisation of `f` from `start`, spending exactly
/// the budget. Returns the best value found.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    budget: &mut Budget<'_, F>,
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
    cfg: &OptPropConfig,
) -> f64 {
    let d = start.len();
    let mut best = f64::INFINITY;
    let mut centre = start.to_vec();
    let mut scale = cfg.initial_step;
    'restart: loop {
        // simplex around `centre`, stepping towards the interior on each axis
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
        let mut pts = vec![centre.clone()];
        for j in 0..d {
            let mut p = centre.clone();
            let step = scale * (hi[j] - lo[j]);
            p[j] += if p[j] + step <= hi[j] { step } else { -step };
            project(&mut p, lo, hi);
            pts.push(p);
        }
        for p in pts {
            match budget.call(&p) {
                Some(v) => {
                    best = best.min(v);
                    simplex.push((p, v));
                }
                None => return best,
            }
        }
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let diameter = simplex[1..]
                .iter()
                .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diameter < cfg.xtol {
                centre = simplex[0].0.clone();
                scale *= 0.5;
                if scale < 1e-6 {
                    scale = cfg.initial_step;
                }
                continue 'restart;
            }
            let worst = simplex[d].clone();
            let mut cen = vec![0.0; d];
            for (p, _) in &simplex[..d] {
                for (c, v) in cen.iter_mut().zip(p) {
                    *c += v / d as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> = cen.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
                project(&mut p, lo, hi);
                p
            };
            let xr = along(1.0);
            let Some(fr) = budget.call(&xr) else { return best };
            best = best.min(fr);
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let Some(fe) = budget.call(&xe) else { return best };
                best = best.min(fe);
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[d - 1].1 {
                simplex[d] = (xr, fr);
                continue;
            }
            let (xc, t) = if fr < worst.1 { (along(0.5), fr) } else { (along(-0.5), worst.1) };
            let Some(fc) = budget.call(&xc) else { return best };
            best = best.min(fc);
            if fc < t {
                simplex[d] = (xc, fc);
                continue;
            }
            // shrink towards the best vertex
            let b = simplex[0].0.clone();
            for k in 1..=d {
                let p: Vec<f64> = simplex[k].0.iter().zip(&b).map(|(v, bb)| bb + 0.5 * (v - bb)).collect();
                let Some(fv) = budget.call(&p) else { return best };
                best = best.min(fv);
                simplex[k] = (p, fv);
            }
        }
    }
}

/// Bounds of `f` over the box. A degenerate box costs one evaluation;
/// otherwise the cost is exactly `2 · multistarts · max_evals`.
pub fn opt_prop_fn<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    bx: &IntervalVector,
    cfg: &OptPropConfig,
) -> Result<OptPropResult> {
    cfg.validate()?;
    let lo = bx.lows();
    let hi = bx.highs();
    if bx.iter().all(|iv| iv.is_degenerate()) {
        let v = f(&lo);
        return Ok(OptPropResult {
            bounds: Interval::point(v),
            evals: 1,
        });
    }
    let d = lo.len();
    let mut evals = 0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for s in 0..cfg.multistarts {
        let u = halton(cfg.seed.wrapping_mul(1_000_003) + s as u64, d);
        let start: Vec<f64> = (0..d).map(|j| lo[j] + u[j] * (hi[j] - lo[j])).collect();
        let mut b = Budget {
            f: &mut f,
            left: cfg.max_evals,
            used: 0,
        };
        min = min.min(nelder_mead(&mut b, &start, &lo, &hi, cfg));
        evals += b.used;
        let mut neg = |x: &[f64]| -f(x);
        let mut b = Budget {
            f: &mut neg,
            left: cfg.max_evals,
            used: 0,
        };
        max = max.max(-nelder_mead(&mut b, &start, &lo, &hi, cfg));
        evals += b.used;
    }
    Ok(OptPropResult {
        bounds: Interval::new(min, max)?,
        evals,
    })
}

/// Bounds of the surrogate's first output over the box.
pub fn opt_prop(surrogate: &MlpModel, bx: &IntervalVector, cfg: &OptPropConfig) -> Result<OptPropResult> {
    if bx.len() != surrogate.input_dim() {
        return Err(invalid(format!(
            "box has {} dimensions, surrogate expects {}",
            bx.len(),
            surrogate.input_dim()
        )));
    }
    let eval = FastMlp::new(surrogate);
    opt_prop_fn(|x| eval.eval(x), bx, cfg)
}

/// Opt-Prop over every input row; returns `N × 1` bounds and the total cost.
pub fn opt_prop_batch(
    surrogate: &MlpModel,
    inputs_lo: &Tensor,
    inputs_hi: &Tensor,
    cfg: &OptPropConfig,
) -> Result<(Tensor, Tensor, usize)> {
    let n = inputs_lo.rows();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    let mut cost = 0;
    for i in 0..n {
        let bx = IntervalVector::from_bounds(inputs_lo.row(i), inputs_hi.row(i))?;
        let r = opt_prop(surrogate, &bx, cfg)?;
        lo.push(r.bounds.lo());
        hi.push(r.bounds.hi());
        cost += r.evals;
    }
    Ok((Tensor::matrix(n, 1, lo)?, Tensor::matrix(n, 1, hi)?, cost))
}

/// Allocation-light scalar evaluation of an MLP's first output.
struct FastMlp<'a> {
    model: &'a MlpModel,
    width: usize,
}

impl<'a> FastMlp<'a> {
    fn new(model: &'a MlpModel) -> Self {
        let width = model
            .layers
            .iter()
            .map(|l| l.output_dim().max(l.input_dim()))
            .max()
            .unwrap_or(1);
        Self { model, width }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut a = vec![0.0; self.width];
        let mut b = vec![0.0; self.width];
        a[..x.len()].copy_from_slice(x);
        let mut n_in = x.len();
        for layer in &self.model.layers {
            let w = &layer.weights;
            let bias = layer.bias.data();
            for o in 0..w.rows() {
                let z: f64 = w.row(o).iter().zip(&a[..n_in]).map(|(p, q)| p * q).sum::<f64>() + bias[o];
                b[o] = layer.activation.eval(z);
            }
            n_in = w.rows();
            std::mem::swap(&mut a, &mut b);
        }
        a[0]
    }
}

/// MSE-trained surrogate on interval centers (ideal data) or on raw points.
pub fn train_pointwise_surrogate(
    data: &PointDataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    train_pointwise_fresh(data, hidden, cfg)
}

/// Convenience for the ideal setting: a surrogate fitted to the centers.
pub fn train_center_surrogate(
    data: &IntervalDataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    train_pointwise_fresh(&data.centers(), hidden, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::linspace;

    fn bx(lo: f64, hi: f64) -> IntervalVector {
        IntervalVector::from_bounds(&[lo], &[hi]).unwrap()
    }

    #[test]
    fn halton_is_in_unit_cube() {
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
        for i in 0..50 {
            assert!(halton(i, 20).iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn square_over_box_matches_grid_oracle() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = opt_prop_fn(f, &bx(-1.0, 2.0), &OptPropConfig::default()).unwrap();
        let grid: Vec<f64> = linspace(-1.0, 2.0, 2001).iter().map(|x| x * x).collect();
        let gmin = grid.iter().copied().fold(f64::INFINITY, f64::min);
        let gmax = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((r.bounds.lo() - gmin).abs() < 1e-6, "{:?}", r.bounds);
        assert!((r.bounds.hi() - gmax).abs() < 1e-6, "{:?}", r.bounds);
        let cfg = OptPropConfig::default();
        assert_eq!(r.evals, 2 * cfg.multistarts * cfg.max_evals);
    }

    #[test]
    fn monotone_hits_endpoints() {
        let f = |x: &[f64]| x[0].powi(3) + x[0];
        let r = opt_prop_fn(f, &bx(-0.3, 1.1), &OptPropConfig::default()).unwrap();
        assert!((r.bounds.lo() - f(&[-0.3])).abs() < 1e-6);
        assert!((r.bounds.hi() - f(&[1.1])).abs() < 1e-6);
    }

    #[test]
    fn degenerate_box_is_point() {
        let r = opt_prop_fn(|x| 3.0 * x[0] + 1.0, &bx(0.5, 0.5), &OptPropConfig::default()).unwrap();
        assert_eq!(r.bounds, Interval::point(2.5));
    }

    #[test]
    fn more_starts_never_worse() {
        let f = |x: &[f64]| (5.0 * x[0]).sin() + 0.3 * (17.0 * x[1]).cos();
        let b = IntervalVector::from_bounds(&[-1.0, 0.0], &[2.0, 1.5]).unwrap();
        let mut prev: Option<Interval> = None;
        for k in 1..=6 {
            let cfg = OptPropConfig {
                multistarts: k,
                ..OptPropConfig::default()
            };
            let r = opt_prop_fn(f, &b, &cfg).unwrap();
            assert_eq!(r.evals, 2 * k * cfg.max_evals);
            if let Some(p) = prev {
                assert!(r.bounds.lo() <= p.lo() && r.bounds.hi() >= p.hi());
            }
            prev = Some(r.bounds);
        }
    }

    #[test]
    fn fast_eval_matches_model() {
        let mut rng = crate::data::rng_from_seed(2);
        let m = MlpModel::glorot(
            &[3, 7, 5, 1],
            crate::layers::Activation::Relu,
            crate::layers::Activation::Linear,
            &mut rng,
        )
        .unwrap();
        let fast = FastMlp::new(&m);
        for x in [[0.1, -0.2, 0.3], [1.0, 2.0, -3.0]] {
            assert!((fast.eval(&x) - m.eval_point(&x).unwrap()).abs() < 1e-12);
        }
    }
}
