//! Experiment recipes: data preparation, one (method, n_train, seed) cell at a
//! time, and aggregation into mean/std tables with failure counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::augment::{cluster_intervals, grid_intervals, ClusterAugConfig, GridAugConfig, PDE_CLUSTER_SIZES};
use crate::data::{
    build_ideal_function_intervals, build_ideal_intervals_1d, gen_1d_regression, gen_darcy_dataset,
    gen_poisson_dataset, mix_seed, rng_from_seed, solve_darcy_2d, solve_poisson_1d, std_all, FunctionDataset,
    IntervalDataset, IntervalFunctionDataset, PointDataset, WidthRange,
};
use crate::error::{invalid, Error, Result};
use crate::models::{MethodKind, OperatorArch, SavedModel};
use crate::objectives::{interval_metrics, IntervalMetrics, LossConfig};
use crate::optprop::{opt_prop_batch, train_pointwise_surrogate, OptPropConfig};
use crate::tensor::Tensor;
use crate::train::{train_operator, train_regression, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Reg1d,
    Pde1d,
    Pde2d,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Reg1d => "reg1d",
            Problem::Pde1d => "pde1d",
            Problem::Pde2d => "pde2d",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Ideal,
    Augmented,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Ideal => "ideal",
            Setting::Augmented => "augmented",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A direct method or the optimisation baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RunMethod {
    Direct(MethodKind),
    OptProp,
}

impl RunMethod {
    pub fn name(self) -> &'static str {
        match self {
            RunMethod::Direct(m) => m.name(),
            RunMethod::OptProp => "opt-prop",
        }
    }
}

impl fmt::Display for RunMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "opt-prop" {
            Ok(RunMethod::OptProp)
        } else {
            s.parse().map(RunMethod::Direct)
        }
    }
}

impl TryFrom<String> for RunMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RunMethod> for String {
    fn from(m: RunMethod) -> String {
        m.name().to_string()
    }
}

/// Network widths per problem family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Hidden widths of the regression networks and the Opt-Prop surrogate.
    pub hidden: Vec<usize>,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub latent: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::for_problem(Problem::Reg1d)
    }
}

impl ArchConfig {
    pub fn for_problem(problem: Problem) -> Self {
        match problem {
            Problem::Reg1d => Self {
                hidden: vec![16; 3],
                branch_hidden: vec![],
                trunk_hidden: vec![],
                latent: 0,
            },
            Problem::Pde1d => Self {
                hidden: vec![64; 4],
                branch_hidden: vec![64; 4],
                trunk_hidden: vec![64; 4],
                latent: 64,
            },
            Problem::Pde2d => Self {
                hidden: vec![128; 2],
                branch_hidden: vec![128],
                trunk_hidden: vec![128; 2],
                latent: 128,
            },
        }
    }
}

/// Sizes of the generated pools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    /// Ideal intervals available for training (ideal setting).
    pub train_pool: usize,
    /// Pointwise samples fed to augmentation (augmented setting).
    pub point_pool: usize,
    /// Held-out functions between train and test (PDE only; unused by training).
    pub val: usize,
    pub test: usize,
    /// Interval widths in input units (1D, over the domain `[0, π]`) or as
    /// fractions of the forcing's standard deviation (PDE).
    pub width_min: f64,
    pub width_max: f64,
    /// Grid resolutions for 1D augmentation.
    pub grid_resolutions: Vec<f64>,
    /// Grid cells holding fewer points are dropped.
    #[serde(default = "one")]
    pub grid_min_group: usize,
    /// Target cluster sizes for PDE augmentation.
    pub cluster_sizes: Vec<usize>,
}

fn one() -> usize {
    1
}

impl DataConfig {
    pub fn for_problem(problem: Problem) -> Self {
        match problem {
            Problem::Reg1d => Self {
                seed: 2024,
                train_pool: 100,
                point_pool: 100,
                val: 0,
                test: 200,
                width_min: 0.05,
                width_max: 0.3,
                grid_resolutions: crate::data::linspace(0.05, 0.35, 9),
                grid_min_group: 2,
                cluster_sizes: vec![],
            },
            Problem::Pde1d => Self {
                seed: 2024,
                train_pool: 1000,
                point_pool: 1000,
                val: 100,
                test: 900,
                width_min: 0.05,
                width_max: 0.25,
                grid_resolutions: vec![],
                grid_min_group: 1,
                cluster_sizes: PDE_CLUSTER_SIZES.to_vec(),
            },
            Problem::Pde2d => Self {
                seed: 2024,
                train_pool: 1000,
                point_pool: 1000,
                val: 100,
                test: 200,
                width_min: 0.05,
                width_max: 0.25,
                grid_resolutions: vec![],
                grid_min_group: 1,
                cluster_sizes: PDE_CLUSTER_SIZES.to_vec(),
            },
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self::for_problem(Problem::Reg1d)
    }
}

/// The full experiment matrix for one problem and setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub setting: Setting,
    pub methods: Vec<RunMethod>,
    pub n_train: Vec<usize>,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub arch: ArchConfig,
    /// Base training settings; `method` and `seed` are set per cell.
    pub train: TrainConfig,
    /// Per-method overrides of the base training settings.
    #[serde(default)]
    pub method_overrides: BTreeMap<RunMethod, MethodOverride>,
    pub optprop: OptPropConfig,
    /// Training settings of the Opt-Prop surrogate.
    pub surrogate: TrainConfig,
    pub metrics: LossConfig,
    /// When false, timing columns are written as zero so reruns are byte-identical.
    pub record_timing: bool,
}

/// Optional per-method changes to the base [`TrainConfig`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodOverride {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub loss: Option<crate::objectives::LossKind>,
}

impl ExperimentConfig {
    /// Default recipe for a problem and setting.
    pub fn recipe(problem: Problem, setting: Setting) -> Self {
        let (epochs, batch, n_train) = match problem {
            Problem::Reg1d => (2000, None, vec![10, 25, 50, 100]),
            Problem::Pde1d => (1000, Some(256), vec![100, 250, 500, 1000]),
            Problem::Pde2d => (150, Some(256), vec![100, 250, 500, 1000]),
        };
        let n_train = match (problem, setting) {
            (Problem::Pde1d | Problem::Pde2d, Setting::Augmented) => vec![100, 250, 500, 750],
            _ => n_train,
        };
        let train = if problem == Problem::Reg1d {
            TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: 5e-3,
                ..TrainConfig::default()
            }
        } else {
            TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: 1e-3,
                final_lr_fraction: 0.05,
                radius_warmup: 0.3,
                ..TrainConfig::default()
            }
        };
        let mut methods: Vec<RunMethod> = MethodKind::ALL.into_iter().map(RunMethod::Direct).collect();
        if problem == Problem::Reg1d {
            methods.push(RunMethod::OptProp);
        }
        Self {
            problem,
            setting,
            methods,
            n_train,
            seeds: (0..10).collect(),
            data: DataConfig::for_problem(problem),
            arch: ArchConfig::for_problem(problem),
            surrogate: TrainConfig {
                epochs: 5000,
                learning_rate: 5e-3,
                ..TrainConfig::default()
            },
            train,
            method_overrides: BTreeMap::new(),
            optprop: OptPropConfig::default(),
            metrics: LossConfig::default(),
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.n_train.is_empty() || self.seeds.is_empty() {
            return Err(invalid("methods, n_train and seeds must be non-empty"));
        }
        if self.n_train.contains(&0) {
            return Err(invalid("n_train entries must be positive"));
        }
        if self.problem != Problem::Reg1d && self.methods.contains(&RunMethod::OptProp) {
            return Err(Error::Unsupported("opt-prop is only run on the 1D regression problem".into()));
        }
        WidthRange::new(self.data.width_min, self.data.width_max)?;
        self.train.validate()?;
        self.surrogate.validate()?;
        self.optprop.validate()?;
        self.metrics.validate()
    }

    /// Training settings for one cell.
    pub fn train_config(&self, method: MethodKind, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig {
            method,
            seed,
            ..self.train.clone()
        };
        if let Some(o) = self.method_overrides.get(&RunMethod::Direct(method)) {
            if let Some(v) = o.learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = o.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = o.lambda {
                cfg.lambda = v;
            }
            if o.loss.is_some() {
                cfg.loss = o.loss;
            }
        }
        cfg
    }

    fn operator_arch(&self, data: &IntervalFunctionDataset) -> OperatorArch {
        OperatorArch {
            sensors: data.sensors(),
            coord_dim: data.coords.cols(),
            branch_hidden: self.arch.branch_hidden.clone(),
            trunk_hidden: self.arch.trunk_hidden.clone(),
            latent: self.arch.latent,
        }
    }
}

/// Prepared training pools and test sets.
#[derive(Clone, Debug)]
pub enum ProblemData {
    Regression {
        /// Interval samples training subsets are drawn from.
        train_pool: IntervalDataset,
        /// Pointwise observations behind the pool: one per interval center
        /// (ideal, row-aligned with the pool) or the raw points (augmented).
        points: PointDataset,
        test: IntervalDataset,
    },
    Operator {
        train_pool: IntervalFunctionDataset,
        test: IntervalFunctionDataset,
        /// Points where the endpoint solutions did not bracket the center solution.
        non_monotone: usize,
    },
}

impl ProblemData {
    pub fn pool_len(&self) -> usize {
        match self {
            ProblemData::Regression { train_pool, .. } => train_pool.len(),
            ProblemData::Operator { train_pool, .. } => train_pool.len(),
        }
    }
}

fn split_functions(d: &FunctionDataset, start: usize, end: usize) -> Result<FunctionDataset> {
    let idx: Vec<usize> = (start..end).collect();
    d.select(&idx)
}

fn function_points(d: &FunctionDataset) -> PointDataset {
    PointDataset {
        inputs: d.sensors.clone(),
        outputs: d.values.clone(),
    }
}

fn to_function_intervals(d: IntervalDataset, coords: Tensor) -> Result<IntervalFunctionDataset> {
    IntervalFunctionDataset::new(d.inputs_lo, d.inputs_hi, d.outputs_lo, d.outputs_hi, coords)
}

/// Generates every dataset a recipe needs, deterministically from `data.seed`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<ProblemData> {
    let dc = &cfg.data;
    let seed = dc.seed;
    match cfg.problem {
        Problem::Reg1d => {
            let widths = WidthRange::new(dc.width_min, dc.width_max)?;
            let test_base = gen_1d_regression(dc.test, mix_seed(seed, 10))?;
            let test = build_ideal_intervals_1d(&test_base, widths, mix_seed(seed, 11))?;
            match cfg.setting {
                Setting::Ideal => {
                    let base = gen_1d_regression(dc.train_pool, mix_seed(seed, 1))?;
                    let pool = build_ideal_intervals_1d(&base, widths, mix_seed(seed, 2))?;
                    Ok(ProblemData::Regression {
                        train_pool: pool,
                        points: base,
                        test,
                    })
                }
                Setting::Augmented => {
                    let points = gen_1d_regression(dc.point_pool, mix_seed(seed, 3))?;
                    let mut grid = GridAugConfig::new(dc.grid_resolutions.clone())?;
                    grid.min_group_size = dc.grid_min_group;
                    let pool = grid_intervals(&points, &grid)?;
                    Ok(ProblemData::Regression {
                        train_pool: pool,
                        points,
                        test,
                    })
                }
            }
        }
        Problem::Pde1d | Problem::Pde2d => {
            let total = dc.train_pool.max(dc.point_pool) + dc.val + dc.test;
            let (base, solver): (FunctionDataset, fn(&[f64]) -> Result<Vec<f64>>) = if cfg.problem == Problem::Pde1d {
                (gen_poisson_dataset(total, mix_seed(seed, 1))?, solve_poisson_1d)
            } else {
                (gen_darcy_dataset(total, mix_seed(seed, 1))?, solve_darcy_2d)
            };
            let sd = std_all(&base.sensors);
            let widths = WidthRange::new(dc.width_min * sd, dc.width_max * sd)?;
            let n_train = total - dc.val - dc.test;
            let test_base = split_functions(&base, total - dc.test, total)?;
            let test = build_ideal_function_intervals(&test_base, widths, mix_seed(seed, 11), solver)?;
            let train_base = split_functions(&base, 0, n_train)?;
            match cfg.setting {
                Setting::Ideal => {
                    let pool = build_ideal_function_intervals(&train_base, widths, mix_seed(seed, 2), solver)?;
                    Ok(ProblemData::Operator {
                        train_pool: pool.data,
                        test: test.data,
                        non_monotone: pool.non_monotone + test.non_monotone,
                    })
                }
                Setting::Augmented => {
                    let points = function_points(&train_base.select(&(0..dc.point_pool).collect::<Vec<_>>())?);
                    let cc = ClusterAugConfig::from_sizes(points.len(), &dc.cluster_sizes, mix_seed(seed, 3))?;
                    let pool = cluster_intervals(&points, &cc)?;
                    Ok(ProblemData::Operator {
                        train_pool: to_function_intervals(pool, base.coords.clone())?,
                        test: test.data,
                        non_monotone: test.non_monotone,
                    })
                }
            }
        }
    }
}

/// Metrics of failed runs are written as empty cells rather than NaN.
mod finite_or_empty {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One row of the results CSV. Metrics of a failed run are NaN in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub problem: String,
    pub setting: String,
    pub n_train: usize,
    pub seed: u64,
    #[serde(with = "finite_or_empty")]
    pub rmse_l: f64,
    #[serde(with = "finite_or_empty")]
    pub rmse_u: f64,
    #[serde(with = "finite_or_empty")]
    pub linex_l: f64,
    #[serde(with = "finite_or_empty")]
    pub linex_u: f64,
    #[serde(with = "finite_or_empty")]
    pub pinaw: f64,
    #[serde(with = "finite_or_empty")]
    pub picp: f64,
    #[serde(with = "finite_or_empty")]
    pub cwc: f64,
    #[serde(with = "finite_or_empty")]
    pub train_s: f64,
    #[serde(with = "finite_or_empty")]
    pub infer_s: f64,
    pub failed: bool,
}

pub const METRIC_NAMES: [&str; 9] = [
    "rmse_l", "rmse_u", "linex_l", "linex_u", "pinaw", "picp", "cwc", "train_s", "infer_s",
];

impl ResultRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "rmse_l" => self.rmse_l,
            "rmse_u" => self.rmse_u,
            "linex_l" => self.linex_l,
            "linex_u" => self.linex_u,
            "pinaw" => self.pinaw,
            "picp" => self.picp,
            "cwc" => self.cwc,
            "train_s" => self.train_s,
            "infer_s" => self.infer_s,
            _ => return None,
        })
    }

    fn new(cfg: &ExperimentConfig, method: RunMethod, n_train: usize, seed: u64) -> Self {
        Self {
            method: method.name().into(),
            problem: cfg.problem.name().into(),
            setting: cfg.setting.name().into(),
            n_train,
            seed,
            rmse_l: f64::NAN,
            rmse_u: f64::NAN,
            linex_l: f64::NAN,
            linex_u: f64::NAN,
            pinaw: f64::NAN,
            picp: f64::NAN,
            cwc: f64::NAN,
            train_s: 0.0,
            infer_s: 0.0,
            failed: true,
        }
    }

    fn fill(&mut self, m: &IntervalMetrics) {
        self.rmse_l = m.rmse_l;
        self.rmse_u = m.rmse_u;
        self.linex_l = m.linex_l;
        self.linex_u = m.linex_u;
        self.pinaw = m.pinaw;
        self.picp = m.picp;
        self.cwc = m.cwc;
        self.failed = [m.rmse_l, m.rmse_u, m.linex_l, m.linex_u, m.pinaw, m.picp, m.cwc]
            .iter()
            .any(|v| !v.is_finite());
    }
}

/// Output of one cell: the row, the trained model and its training report.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub row: ResultRow,
    pub model: SavedModel,
    pub report: TrainReport,
    /// Test-set predictions (`N × outputs`), for plotting.
    pub prediction: (Tensor, Tensor),
    /// Surrogate calls made by Opt-Prop (zero for direct methods).
    pub optprop_cost: usize,
}

/// `n` training rows chosen by `seed` (all rows, in order, when `n` covers the pool).
pub fn training_subset(pool_len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > pool_len {
        return Err(invalid(format!("n_train {n} exceeds pool of {pool_len}")));
    }
    if n == pool_len {
        return Ok((0..n).collect());
    }
    let mut rng = rng_from_seed(mix_seed(seed, 77));
    let mut idx = index::sample(&mut rng, pool_len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

fn flat(t: &Tensor) -> &[f64] {
    t.data()
}

fn metrics_of(pred: &(Tensor, Tensor), tl: &Tensor, th: &Tensor, cfg: &LossConfig) -> Result<IntervalMetrics> {
    interval_metrics(flat(&pred.0), flat(&pred.1), flat(tl), flat(th), cfg)
}

/// Trains and evaluates one (method, n_train, seed) cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &ProblemData,
    method: RunMethod,
    n_train: usize,
    seed: u64,
) -> Result<CellOutput> {
    let mut row = ResultRow::new(cfg, method, n_train, seed);
    let idx = training_subset(data.pool_len(), n_train, seed)?;
    let out = match (data, method) {
        (ProblemData::Regression { train_pool, test, .. }, RunMethod::Direct(m)) => {
            let train = train_pool.select(&idx)?;
            let tc = cfg.train_config(m, seed);
            let (model, report) = train_regression(&train, &cfg.arch.hidden, &tc)?;
            let t0 = Instant::now();
            let pred = model.predict(&test.inputs_lo, &test.inputs_hi)?;
            let infer = t0.elapsed().as_secs_f64();
            if !report.is_failed() {
                row.fill(&metrics_of(&pred, &test.outputs_lo, &test.outputs_hi, &cfg.metrics)?);
            }
            row.train_s = report.train_s;
            row.infer_s = infer;
            CellOutput {
                row,
                model: SavedModel::Regression(model),
                report,
                prediction: pred,
                optprop_cost: 0,
            }
        }
        (ProblemData::Regression { points, test, .. }, RunMethod::OptProp) => {
            let train = match cfg.setting {
                Setting::Ideal => PointDataset::new(points.inputs.select_rows(&idx), points.outputs.select_rows(&idx))?,
                Setting::Augmented => points.clone(),
            };
            let sc = TrainConfig {
                seed,
                ..cfg.surrogate.clone()
            };
            let (surrogate, report) = train_pointwise_surrogate(&train, &cfg.arch.hidden, &sc)?;
            let t0 = Instant::now();
            let oc = OptPropConfig {
                seed: cfg.optprop.seed,
                ..cfg.optprop
            };
            let (lo, hi, cost) = if report.is_failed() {
                (test.outputs_lo.clone(), test.outputs_hi.clone(), 0)
            } else {
                opt_prop_batch(&surrogate, &test.inputs_lo, &test.inputs_hi, &oc)?
            };
            let infer = t0.elapsed().as_secs_f64();
            let pred = (lo, hi);
            if !report.is_failed() {
                row.fill(&metrics_of(&pred, &test.outputs_lo, &test.outputs_hi, &cfg.metrics)?);
            }
            row.train_s = report.train_s;
            row.infer_s = infer;
            CellOutput {
                row,
                model: SavedModel::Surrogate(surrogate),
                report,
                prediction: pred,
                optprop_cost: cost,
            }
        }
        (ProblemData::Operator { train_pool, test, .. }, RunMethod::Direct(m)) => {
            let train = train_pool.select(&idx)?;
            let tc = cfg.train_config(m, seed);
            let (model, report) = train_operator(&train, &cfg.operator_arch(&train), &tc)?;
            let t0 = Instant::now();
            let pred = model.predict(&test.sensors_lo, &test.sensors_hi, &test.coords)?;
            let infer = t0.elapsed().as_secs_f64();
            if !report.is_failed() {
                row.fill(&metrics_of(&pred, &test.values_lo, &test.values_hi, &cfg.metrics)?);
            }
            row.train_s = report.train_s;
            row.infer_s = infer;
            CellOutput {
                row,
                model: SavedModel::Operator(model),
                report,
                prediction: pred,
                optprop_cost: 0,
            }
        }
        (ProblemData::Operator { .. }, RunMethod::OptProp) => {
            return Err(Error::Unsupported("opt-prop over full PDE fields".into()));
        }
    };
    let mut out = out;
    if !cfg.record_timing {
        out.row.train_s = 0.0;
        out.row.infer_s = 0.0;
    }
    Ok(out)
}

/// Evaluates a stored model on the prepared test set.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    data: &ProblemData,
    model: &SavedModel,
    n_train: usize,
    seed: u64,
) -> Result<(ResultRow, (Tensor, Tensor))> {
    let (method, pred, tl, th, infer) = match (data, model) {
        (ProblemData::Regression { test, .. }, SavedModel::Regression(m)) => {
            let t0 = Instant::now();
            let pred = m.predict(&test.inputs_lo, &test.inputs_hi)?;
            let dt = t0.elapsed().as_secs_f64();
            (RunMethod::Direct(m.method()), pred, &test.outputs_lo, &test.outputs_hi, dt)
        }
        (ProblemData::Regression { test, .. }, SavedModel::Surrogate(s)) => {
            let t0 = Instant::now();
            let (lo, hi, _) = opt_prop_batch(s, &test.inputs_lo, &test.inputs_hi, &cfg.optprop)?;
            let dt = t0.elapsed().as_secs_f64();
            (RunMethod::OptProp, (lo, hi), &test.outputs_lo, &test.outputs_hi, dt)
        }
        (ProblemData::Operator { test, .. }, SavedModel::Operator(m)) => {
            let t0 = Instant::now();
            let pred = m.predict(&test.sensors_lo, &test.sensors_hi, &test.coords)?;
            let dt = t0.elapsed().as_secs_f64();
            (RunMethod::Direct(m.method()), pred, &test.values_lo, &test.values_hi, dt)
        }
        _ => return Err(invalid("model kind does not match the problem")),
    };
    let mut row = ResultRow::new(cfg, method, n_train, seed);
    row.fill(&metrics_of(&pred, tl, th, &cfg.metrics)?);
    row.infer_s = if cfg.record_timing { infer } else { 0.0 };
    Ok((row, pred))
}

/// Every cell of the matrix in (method, n_train, seed) order.
pub fn run_experiment(cfg: &ExperimentConfig, data: &ProblemData) -> Result<Vec<CellOutput>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.n_train {
            for &seed in &cfg.seeds {
                out.push(run_cell(cfg, data, method, n, seed)?);
            }
        }
    }
    Ok(out)
}

/// One line of the aggregated report. `mean`/`std` are `None` when every
/// run of the group failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub n_train: usize,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub failures: usize,
}

/// Mean and population std over successful runs per (method, n_train,
/// metric), with the number of failed runs.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.n_train)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((method, n_train), runs) in groups {
        let failures = runs.iter().filter(|r| r.failed).count();
        for name in METRIC_NAMES {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| !r.failed)
                .filter_map(|r| r.metric(name))
                .filter(|v| v.is_finite())
                .collect();
            let (mean, std) = if vals.is_empty() {
                (None, None)
            } else {
                let n = vals.len() as f64;
                let m = vals.iter().sum::<f64>() / n;
                let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                (Some(m), Some(s))
            };
            out.push(AggregateRow {
                method: method.clone(),
                n_train,
                metric: name.to_string(),
                mean,
                std,
                failures,
            });
        }
    }
    out
}

/// Plot-ready rows: for regression one row per test sample; for operators
/// one row per coordinate of the first `functions` test functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub sample: usize,
    pub x: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub true_lo: f64,
    pub true_hi: f64,
    pub pred_lo: f64,
    pub pred_hi: f64,
}

pub fn plot_rows(data: &ProblemData, pred: &(Tensor, Tensor), functions: usize) -> Vec<PlotRow> {
    match data {
        ProblemData::Regression { test, .. } => (0..test.len())
            .map(|i| {
                let (xl, xh) = (test.inputs_lo.get(i, 0), test.inputs_hi.get(i, 0));
                PlotRow {
                    sample: i,
                    x: 0.5 * (xl + xh),
                    x_lo: xl,
                    x_hi: xh,
                    true_lo: test.outputs_lo.get(i, 0),
                    true_hi: test.outputs_hi.get(i, 0),
                    pred_lo: pred.0.get(i, 0),
                    pred_hi: pred.1.get(i, 0),
                }
            })
            .collect(),
        ProblemData::Operator { test, .. } => {
            let mut rows = Vec::new();
            for s in 0..functions.min(test.len()) {
                for j in 0..test.points() {
                    let x = test.coords.get(j, 0);
                    rows.push(PlotRow {
                        sample: s,
                        x,
                        x_lo: x,
                        x_hi: x,
                        true_lo: test.values_lo.get(s, j),
                        true_hi: test.values_hi.get(s, j),
                        pred_lo: pred.0.get(s, j),
                        pred_hi: pred.1.get(s, j),
                    });
                }
            }
            rows
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, n: usize, seed: u64, rmse: f64, failed: bool) -> ResultRow {
        ResultRow {
            method: method.into(),
            problem: "reg1d".into(),
            setting: "ideal".into(),
            n_train: n,
            seed,
            rmse_l: rmse,
            rmse_u: rmse,
            linex_l: 0.0,
            linex_u: 0.0,
            pinaw: 1.0,
            picp: 1.0,
            cwc: 2.0,
            train_s: 0.0,
            infer_s: 0.0,
            failed,
        }
    }

    #[test]
    fn aggregate_skips_failures() {
        let rows = vec![
            row("inn", 10, 0, 1.0, false),
            row("inn", 10, 1, 3.0, false),
            row("inn", 10, 2, f64::NAN, true),
            row("naive", 10, 0, 0.5, false),
        ];
        let agg = aggregate(&rows);
        let r = agg.iter().find(|a| a.method == "inn" && a.metric == "rmse_l").unwrap();
        assert_eq!((r.mean, r.std, r.failures), (Some(2.0), Some(1.0), 1));
        let n = agg.iter().find(|a| a.method == "naive" && a.metric == "rmse_l").unwrap();
        assert_eq!((n.mean, n.std, n.failures), (Some(0.5), Some(0.0), 0));
    }

    #[test]
    fn all_failed_has_no_numbers() {
        let agg = aggregate(&[row("inn", 10, 0, f64::NAN, true)]);
        assert!(agg.iter().all(|a| a.mean.is_none() && a.std.is_none() && a.failures == 1));
    }

    #[test]
    fn run_method_parsing() {
        assert_eq!("opt-prop".parse::<RunMethod>().unwrap(), RunMethod::OptProp);
        assert_eq!(
            "mid-crown".parse::<RunMethod>().unwrap(),
            RunMethod::Direct(MethodKind::MidCrown)
        );
        let json = serde_json::to_string(&RunMethod::OptProp).unwrap();
        assert_eq!(json, "\"opt-prop\"");
        assert!(serde_json::from_str::<RunMethod>("\"x\"").is_err());
    }

    #[test]
    fn subsets_are_deterministic() {
        let a = training_subset(100, 10, 3).unwrap();
        assert_eq!(a, training_subset(100, 10, 3).unwrap());
        assert_ne!(a, training_subset(100, 10, 4).unwrap());
        assert_eq!(training_subset(5, 5, 0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(training_subset(5, 6, 0).is_err());
    }

    #[test]
    fn augmented_reg1d_pool_size() {
        let cfg = ExperimentConfig::recipe(Problem::Reg1d, Setting::Augmented);
        let data = prepare(&cfg).unwrap();
        let n = data.pool_len();
        assert!((120..=190).contains(&n), "{n}");
    }

    #[test]
    fn small_regression_cell_runs() {
        let mut cfg = ExperimentConfig::recipe(Problem::Reg1d, Setting::Ideal);
        cfg.train.epochs = 50;
        cfg.surrogate.epochs = 50;
        cfg.record_timing = false;
        let data = prepare(&cfg).unwrap();
        for m in [RunMethod::Direct(MethodKind::Crown), RunMethod::OptProp] {
            let a = run_cell(&cfg, &data, m, 10, 1).unwrap();
            let b = run_cell(&cfg, &data, m, 10, 1).unwrap();
            assert_eq!(a.row, b.row);
            assert!(!a.row.failed);
        }
    }
}
