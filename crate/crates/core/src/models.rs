//! Method-tagged interval models for regression and operator learning, plus
//! versioned JSON persistence.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::bounds::{deeponet_bounds_tape, mlp_bounds_tape, BoundMethod};
use crate::deeponet::{chunked, interleave_columns, row_range, DeepONet, InnDeepONet, NaiveIntervalDeepONet};
use crate::error::{invalid, Error, Result};
use crate::inn::{InnModel, IntervalVars};
use crate::layers::{Activation, MlpModel, Parameterised, RannModel};
use crate::objectives::LossKind;
use crate::tensor::Tensor;

/// The interval propagation methods compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Naive,
    Inn,
    Ibp,
    Crown,
    MidIbp,
    MidCrown,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Naive,
        MethodKind::Inn,
        MethodKind::Ibp,
        MethodKind::Crown,
        MethodKind::MidIbp,
        MethodKind::MidCrown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Naive => "naive",
            MethodKind::Inn => "inn",
            MethodKind::Ibp => "ibp",
            MethodKind::Crown => "crown",
            MethodKind::MidIbp => "mid-ibp",
            MethodKind::MidCrown => "mid-crown",
        }
    }

    /// Bound propagation used by the bound-trained methods.
    pub fn bound_method(self) -> Option<BoundMethod> {
        match self {
            MethodKind::Ibp | MethodKind::MidIbp => Some(BoundMethod::Ibp),
            MethodKind::Crown | MethodKind::MidCrown => Some(BoundMethod::Crown),
            MethodKind::Naive | MethodKind::Inn => None,
        }
    }

    pub fn default_loss(self) -> LossKind {
        match self {
            MethodKind::Naive => LossKind::Rann,
            MethodKind::MidIbp | MethodKind::MidCrown => LossKind::Midpoint,
            _ => LossKind::Bound,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Interval regression model `ℝ^d` boxes to `ℝ^m` boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionModel {
    Naive(RannModel),
    Inn(InnModel),
    /// A pointwise MLP whose output bounds come from IBP or CROWN.
    Bounded { net: MlpModel, method: MethodKind },
}

impl RegressionModel {
    pub fn init<R: Rng + ?Sized>(
        method: MethodKind,
        d: usize,
        hidden: &[usize],
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match method {
            MethodKind::Naive => RegressionModel::Naive(RannModel::glorot(d, hidden, m, rng)?),
            MethodKind::Inn => RegressionModel::Inn(InnModel::glorot(&sizes(d, hidden, m), rng)?),
            _ => RegressionModel::Bounded {
                net: MlpModel::glorot(&sizes(d, hidden, m), Activation::Relu, Activation::Linear, rng)?,
                method,
            },
        })
    }

    pub fn method(&self) -> MethodKind {
        match self {
            RegressionModel::Naive(_) => MethodKind::Naive,
            RegressionModel::Inn(_) => MethodKind::Inn,
            RegressionModel::Bounded { method, .. } => *method,
        }
    }

    /// Binds the parameters and returns predicted bounds (`B × m`) plus the
    /// parameter leaves in `params_mut` order.
    pub fn forward(&self, tape: &mut Tape, lo: &Tensor, hi: &Tensor) -> Result<(IntervalVars, Vec<Var>)> {
        match self {
            RegressionModel::Naive(net) => {
                let vars = net.bind(tape);
                let x = tape.constant(interleave_columns(lo, hi)?);
                let (l, h) = net.forward(&vars, tape, x)?;
                Ok((IntervalVars { lo: l, hi: h }, vars.vars()))
            }
            RegressionModel::Inn(net) => {
                let vars = net.bind(tape);
                let z = IntervalVars {
                    lo: tape.constant(lo.clone()),
                    hi: tape.constant(hi.clone()),
                };
                Ok((net.forward(&vars, tape, z)?, vars.vars()))
            }
            RegressionModel::Bounded { net, method } => {
                let vars = net.bind(tape);
                let (c, r) = center_radius(lo, hi)?;
                let (c, r) = (tape.constant(c), tape.constant(r));
                let bm = method.bound_method().ok_or_else(|| invalid("bounded model needs a bound method"))?;
                Ok((mlp_bounds_tape(net, &vars, tape, c, r, bm)?, vars.vars()))
            }
        }
    }

    pub fn predict(&self, lo: &Tensor, hi: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::inference();
        let (out, _) = self.forward(&mut tape, lo, hi)?;
        Ok((tape.value(out.lo).clone(), tape.value(out.hi).clone()))
    }
}

impl Parameterised for RegressionModel {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            RegressionModel::Naive(n) => n.params_mut(),
            RegressionModel::Inn(n) => n.params_mut(),
            RegressionModel::Bounded { net, .. } => net.params_mut(),
        }
    }
}

fn center_radius(lo: &Tensor, hi: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((lo.zip_map(hi, |l, h| 0.5 * (l + h))?, lo.zip_map(hi, |l, h| 0.5 * (h - l))?))
}

/// DeepONet shapes shared by every operator variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorArch {
    pub sensors: usize,
    pub coord_dim: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub latent: usize,
}

/// Interval operator model mapping sensor boxes to bounds on a coordinate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorModel {
    Naive(NaiveIntervalDeepONet),
    Inn(InnDeepONet),
    Bounded { net: DeepONet, method: MethodKind },
}

impl OperatorModel {
    pub fn init<R: Rng + ?Sized>(method: MethodKind, arch: &OperatorArch, rng: &mut R) -> Result<Self> {
        let a = arch;
        Ok(match method {
            MethodKind::Naive => OperatorModel::Naive(NaiveIntervalDeepONet::glorot(
                a.sensors,
                &a.branch_hidden,
                a.coord_dim,
                &a.trunk_hidden,
                a.latent,
                rng,
            )?),
            MethodKind::Inn => OperatorModel::Inn(InnDeepONet::glorot(
                a.sensors,
                &a.branch_hidden,
                a.coord_dim,
                &a.trunk_hidden,
                a.latent,
                rng,
            )?),
            _ => OperatorModel::Bounded {
                net: DeepONet::glorot(
                    a.sensors,
                    &a.branch_hidden,
                    a.coord_dim,
                    &a.trunk_hidden,
                    a.latent,
                    rng,
                )?,
                method,
            },
        })
    }

    pub fn method(&self) -> MethodKind {
        match self {
            OperatorModel::Naive(_) => MethodKind::Naive,
            OperatorModel::Inn(_) => MethodKind::Inn,
            OperatorModel::Bounded { method, .. } => *method,
        }
    }

    /// Sensor bounds `S × m` at coordinates `p × dim`; returns `S × p` bounds
    /// and the parameter leaves.
    pub fn forward(
        &self,
        tape: &mut Tape,
        u_lo: &Tensor,
        u_hi: &Tensor,
        x: &Tensor,
    ) -> Result<(IntervalVars, Vec<Var>)> {
        match self {
            OperatorModel::Naive(net) => {
                let vars = net.bind(tape);
                let u = tape.constant(interleave_columns(u_lo, u_hi)?);
                let xv = tape.constant(x.clone());
                let (lo, hi) = net.forward_grid(&vars, tape, u, xv)?;
                Ok((IntervalVars { lo, hi }, vars.vars()))
            }
            OperatorModel::Inn(net) => {
                let vars = net.bind(tape);
                let u = IntervalVars {
                    lo: tape.constant(u_lo.clone()),
                    hi: tape.constant(u_hi.clone()),
                };
                let xv = tape.constant(x.clone());
                Ok((net.forward_grid(&vars, tape, u, xv)?, vars.vars()))
            }
            OperatorModel::Bounded { net, method } => {
                let vars = net.bind(tape);
                let (c, r) = center_radius(u_lo, u_hi)?;
                let (c, r) = (tape.constant(c), tape.constant(r));
                let xv = tape.constant(x.clone());
                let bm = method.bound_method().ok_or_else(|| invalid("bounded model needs a bound method"))?;
                Ok((deeponet_bounds_tape(net, &vars, tape, c, r, xv, bm)?, vars.vars()))
            }
        }
    }

    /// Evaluates in function chunks to bound memory.
    pub fn predict(&self, u_lo: &Tensor, u_hi: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        chunked(u_lo.rows(), |r| {
            let mut tape = Tape::inference();
            let (out, _) = self.forward(&mut tape, &row_range(u_lo, r.clone()), &row_range(u_hi, r), x)?;
            Ok((tape.value(out.lo).clone(), tape.value(out.hi).clone()))
        })
    }
}

impl Parameterised for OperatorModel {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            OperatorModel::Naive(n) => n.params_mut(),
            OperatorModel::Inn(n) => n.params_mut(),
            OperatorModel::Bounded { net, .. } => net.params_mut(),
        }
    }
}

/// Any persisted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SavedModel {
    Regression(RegressionModel),
    Operator(OperatorModel),
    Surrogate(MlpModel),
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model: SavedModel,
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    let env = Envelope {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &env)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let env: Envelope = serde_json::from_reader(file)?;
    if env.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Unsupported(format!(
            "model format version {} (expected {MODEL_FORMAT_VERSION})",
            env.format_version
        )));
    }
    Ok(env.model)
}
