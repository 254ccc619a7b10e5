//! Test problems and their interval datasets.
//!
//! Three problems are provided: a noisy 1D regression curve, a 1D Poisson
//! equation forced by a Gaussian-process sample, and a Darcy problem on the
//! unit square driven by GP boundary data.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interval::IntervalVector;
use crate::tensor::Tensor;

/// Standard deviation of the additive noise in the 1D regression problem.
pub const NOISE_STD: f64 = 0.025;

/// Points per interval in the 1D grid-search oracle.
pub const GRID_SEARCH_POINTS: usize = 2001;

/// Seeded generator used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed (splitmix64 finaliser).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` equally spaced points covering `[a, b]`, both ends included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Pointwise inputs (`N × d`) and outputs (`N × m`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointDataset {
    pub inputs: Tensor,
    pub outputs: Tensor,
}

impl PointDataset {
    pub fn new(inputs: Tensor, outputs: Tensor) -> Result<Self> {
        if inputs.rows() != outputs.rows() {
            return Err(Error::ShapeMismatch {
                op: "PointDataset::new",
                lhs: inputs.shape().to_vec(),
                rhs: outputs.shape().to_vec(),
            });
        }
        Ok(Self { inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        if idx.is_empty() {
            return Err(invalid("cannot take zero rows"));
        }
        Self::new(self.inputs.select_rows(&idx), self.outputs.select_rows(&idx))
    }
}

/// Interval inputs and outputs stored as bound matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalDataset {
    pub inputs_lo: Tensor,
    pub inputs_hi: Tensor,
    pub outputs_lo: Tensor,
    pub outputs_hi: Tensor,
}

fn check_bounds(lo: &Tensor, hi: &Tensor, op: &'static str) -> Result<()> {
    if lo.rows() != hi.rows() || lo.cols() != hi.cols() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: lo.shape().to_vec(),
            rhs: hi.shape().to_vec(),
        });
    }
    if let Some((l, h)) = lo.data().iter().zip(hi.data()).find(|(l, h)| l > h) {
        return Err(Error::InvalidInterval { lo: *l, hi: *h });
    }
    Ok(())
}

impl IntervalDataset {
    pub fn new(
        inputs_lo: Tensor,
        inputs_hi: Tensor,
        outputs_lo: Tensor,
        outputs_hi: Tensor,
    ) -> Result<Self> {
        check_bounds(&inputs_lo, &inputs_hi, "IntervalDataset inputs")?;
        check_bounds(&outputs_lo, &outputs_hi, "IntervalDataset outputs")?;
        if inputs_lo.rows() != outputs_lo.rows() {
            return Err(Error::ShapeMismatch {
                op: "IntervalDataset rows",
                lhs: inputs_lo.shape().to_vec(),
                rhs: outputs_lo.shape().to_vec(),
            });
        }
        Ok(Self {
            inputs_lo,
            inputs_hi,
            outputs_lo,
            outputs_hi,
        })
    }

    /// Builds a dataset from per-row interval vectors.
    pub fn from_rows(inputs: &[IntervalVector], outputs: &[IntervalVector]) -> Result<Self> {
        let f = |rows: &[IntervalVector], hi: bool| -> Result<Tensor> {
            let v: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| if hi { r.highs() } else { r.lows() })
                .collect();
            Tensor::from_rows(&v)
        };
        Self::new(
            f(inputs, false)?,
            f(inputs, true)?,
            f(outputs, false)?,
            f(outputs, true)?,
        )
    }

    pub fn len(&self) -> usize {
        self.inputs_lo.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs_lo.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs_lo.cols()
    }

    pub fn input_row(&self, i: usize) -> IntervalVector {
        IntervalVector::from_bounds(self.inputs_lo.row(i), self.inputs_hi.row(i))
            .expect("validated at construction")
    }

    pub fn output_row(&self, i: usize) -> IntervalVector {
        IntervalVector::from_bounds(self.outputs_lo.row(i), self.outputs_hi.row(i))
            .expect("validated at construction")
    }

    pub fn inputs(&self) -> Vec<IntervalVector> {
        (0..self.len()).map(|i| self.input_row(i)).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(invalid("empty selection"));
        }
        Self::new(
            self.inputs_lo.select_rows(idx),
            self.inputs_hi.select_rows(idx),
            self.outputs_lo.select_rows(idx),
            self.outputs_hi.select_rows(idx),
        )
    }

    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[IntervalDataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
        let stack = |get: fn(&IntervalDataset) -> &Tensor| -> Result<Tensor> {
            let cols = get(first).cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = get(p);
                if t.cols() != cols {
                    return Err(Error::ShapeMismatch {
                        op: "IntervalDataset::concat",
                        lhs: get(first).shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                data.extend_from_slice(t.data());
                rows += t.rows();
            }
            Tensor::matrix(rows, cols, data)
        };
        Self::new(
            stack(|d| &d.inputs_lo)?,
            stack(|d| &d.inputs_hi)?,
            stack(|d| &d.outputs_lo)?,
            stack(|d| &d.outputs_hi)?,
        )
    }

    /// Input centers (`N × d`) and output centers (`N × m`).
    pub fn centers(&self) -> PointDataset {
        let mid = |a: &Tensor, b: &Tensor| a.zip_map(b, |l, h| 0.5 * (l + h)).unwrap();
        PointDataset {
            inputs: mid(&self.inputs_lo, &self.inputs_hi),
            outputs: mid(&self.outputs_lo, &self.outputs_hi),
        }
    }
}

/// One input function at the sensors, the query coordinates, and the output there.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSample {
    pub sensors: Vec<f64>,
    pub coords: Tensor,
    pub values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(sensors: Vec<f64>, coords: Tensor, values: Vec<f64>) -> Result<Self> {
        if coords.rows() != values.len() || sensors.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "FunctionSample::new",
                lhs: coords.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(Self {
            sensors,
            coords,
            values,
        })
    }
}

/// Pointwise operator-learning data: `N` functions on a shared grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionDataset {
    pub sensors: Tensor,
    pub values: Tensor,
    pub coords: Tensor,
}

impl FunctionDataset {
    pub fn new(sensors: Tensor, values: Tensor, coords: Tensor) -> Result<Self> {
        if sensors.rows() != values.rows() || values.cols() != coords.rows() {
            return Err(Error::ShapeMismatch {
                op: "FunctionDataset::new",
                lhs: sensors.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        Ok(Self {
            sensors,
            values,
            coords,
        })
    }

    pub fn len(&self) -> usize {
        self.sensors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> Vec<FunctionSample> {
        (0..self.len())
            .map(|i| FunctionSample {
                sensors: self.sensors.row(i).to_vec(),
                coords: self.coords.clone(),
                values: self.values.row(i).to_vec(),
            })
            .collect()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            self.sensors.select_rows(idx),
            self.values.select_rows(idx),
            self.coords.clone(),
        )
    }
}

/// Interval operator-learning data on a shared coordinate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalFunctionDataset {
    pub sensors_lo: Tensor,
    pub sensors_hi: Tensor,
    pub values_lo: Tensor,
    pub values_hi: Tensor,
    pub coords: Tensor,
}

impl IntervalFunctionDataset {
    pub fn new(
        sensors_lo: Tensor,
        sensors_hi: Tensor,
        values_lo: Tensor,
        values_hi: Tensor,
        coords: Tensor,
    ) -> Result<Self> {
        check_bounds(&sensors_lo, &sensors_hi, "IntervalFunctionDataset sensors")?;
        check_bounds(&values_lo, &values_hi, "IntervalFunctionDataset values")?;
        if sensors_lo.rows() != values_lo.rows() || values_lo.cols() != coords.rows() {
            return Err(Error::ShapeMismatch {
                op: "IntervalFunctionDataset::new",
                lhs: sensors_lo.shape().to_vec(),
                rhs: values_lo.shape().to_vec(),
            });
        }
        Ok(Self {
            sensors_lo,
            sensors_hi,
            values_lo,
            values_hi,
            coords,
        })
    }

    pub fn len(&self) -> usize {
        self.sensors_lo.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sensors(&self) -> usize {
        self.sensors_lo.cols()
    }

    pub fn points(&self) -> usize {
        self.coords.rows()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(invalid("empty selection"));
        }
        Self::new(
            self.sensors_lo.select_rows(idx),
            self.sensors_hi.select_rows(idx),
            self.values_lo.select_rows(idx),
            self.values_hi.select_rows(idx),
            self.coords.clone(),
        )
    }

    pub fn range(&self, start: usize, end: usize) -> Result<Self> {
        let idx: Vec<usize> = (start..end.min(self.len())).collect();
        self.select(&idx)
    }

    /// Centers of the sensor intervals and of the value intervals.
    pub fn centers(&self) -> FunctionDataset {
        let mid = |a: &Tensor, b: &Tensor| a.zip_map(b, |l, h| 0.5 * (l + h)).unwrap();
        FunctionDataset {
            sensors: mid(&self.sensors_lo, &self.sensors_hi),
            values: mid(&self.values_lo, &self.values_hi),
            coords: self.coords.clone(),
        }
    }
}

/// Noise-free 1D regression curve `sin(2x)·e^{-x} + 1`.
pub fn truth_1d(x: f64) -> f64 {
    (2.0 * x).sin() * (-x).exp() + 1.0
}

/// `n` points with `x ~ U[0, π]` and `y = truth(x) + N(0, NOISE_STD²)`.
pub fn gen_1d_regression(n: usize, seed: u64) -> Result<PointDataset> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=PI)).collect();
    let y: Vec<f64> = x.iter().map(|&x| truth_1d(x) + noise.sample(&mut rng)).collect();
    PointDataset::new(Tensor::matrix(n, 1, x)?, Tensor::matrix(n, 1, y)?)
}

/// Gaussian-process prior with an RBF kernel over `grid` (`n × dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub length_scale: f64,
    pub grid: Tensor,
    pub jitter: f64,
}

impl GpConfig {
    pub fn new(length_scale: f64, grid: Tensor) -> Result<Self> {
        if !(length_scale > 0.0) {
            return Err(invalid("length scale must be positive"));
        }
        Ok(Self {
            length_scale,
            grid,
            jitter: 1e-8,
        })
    }

    /// `K_ij = exp(-|x_i - x_j|² / (2 l²))`.
    pub fn kernel(&self) -> Tensor {
        let g = &self.grid;
        let l2 = 2.0 * self.length_scale * self.length_scale;
        Tensor::from_fn(g.rows(), g.rows(), |i, j| {
            let d2: f64 = g.row(i).iter().zip(g.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            (-d2 / l2).exp()
        })
    }
}

/// Cholesky factor of `K + jitter·I`, escalating the jitter ×10 up to 1e-4.
fn gp_factor(cfg: &GpConfig) -> Result<DMatrix<f64>> {
    let k = cfg.kernel();
    let n = k.rows();
    let mut jitter = cfg.jitter.max(1e-12);
    while jitter <= 1e-4 * (1.0 + 1e-9) {
        let m = DMatrix::from_fn(n, n, |i, j| k.get(i, j) + if i == j { jitter } else { 0.0 });
        if let Some(ch) = m.cholesky() {
            return Ok(ch.unpack());
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(
        "GP covariance is not positive definite after jitter escalation".into(),
    ))
}

/// `n` zero-mean GP draws on the configured grid (`n × grid_len`).
pub fn sample_gp(cfg: &GpConfig, n: usize, seed: u64) -> Result<Tensor> {
    if cfg.grid.is_empty() || n == 0 {
        return Err(invalid("GP sampling needs a grid and n > 0"));
    }
    let l = gp_factor(cfg)?;
    let m = l.nrows();
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n * m);
    let mut z = vec![0.0; m];
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..m {
            let mut s = 0.0;
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                s += l[(i, k)] * zk;
            }
            out.push(s);
        }
    }
    Tensor::matrix(n, m, out)
}

/// Solves `g'' = rhs` with `g = 0` at both ends by central differences on a
/// uniform grid (`rhs` holds values at all nodes, boundaries included).
pub fn poisson_fd(rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if n < 3 {
        return Err(invalid("Poisson grid needs at least 3 nodes"));
    }
    let h = 1.0 / (n - 1) as f64;
    let k = n - 2;
    // (g_{i-1} - 2 g_i + g_{i+1}) / h² = rhs_i, Thomas algorithm on the interior
    let d: Vec<f64> = (1..=k).map(|i| rhs[i] * h * h).collect();
    let mut c_prime = vec![0.0f64; k];
    let mut d_prime = vec![0.0; k];
    c_prime[0] = 1.0 / -2.0;
    d_prime[0] = d[0] / -2.0;
    for i in 1..k {
        let denom = -2.0 - c_prime[i - 1];
        assert!(denom.abs() > 1e-300, "singular tridiagonal system");
        c_prime[i] = 1.0 / denom;
        d_prime[i] = (d[i] - d_prime[i - 1]) / denom;
    }
    let mut g = vec![0.0; n];
    g[k] = d_prime[k - 1];
    for i in (1..k).rev() {
        g[i] = d_prime[i - 1] - c_prime[i - 1] * g[i + 1];
    }
    Ok(g)
}

/// Nodes of the Poisson solver grid (`Δx = 0.01`).
pub const POISSON_NODES: usize = 101;

/// Coefficient in `g'' = 20 u`.
pub const POISSON_SOURCE: f64 = 20.0;

fn interp_uniform(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let t = (x.clamp(0.0, 1.0)) * (n - 1) as f64;
    let i = (t.floor() as usize).min(n - 2);
    let f = t - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}

/// Solves `g'' = 20 u`, `g(0) = g(1) = 0` for `u` given on a uniform grid over
/// `[0, 1]`; the solution is computed on 101 nodes and interpolated back.
pub fn solve_poisson_1d(u: &[f64]) -> Result<Vec<f64>> {
    if u.len() < 2 {
        return Err(invalid("forcing needs at least two sensor values"));
    }
    let fine = linspace(0.0, 1.0, POISSON_NODES);
    let rhs: Vec<f64> = fine
        .iter()
        .map(|&x| POISSON_SOURCE * interp_uniform(u, x))
        .collect();
    let g = poisson_fd(&rhs)?;
    Ok(linspace(0.0, 1.0, u.len())
        .into_iter()
        .map(|x| interp_uniform(&g, x))
        .collect())
}

/// Banded Cholesky factor of a symmetric positive definite matrix with
/// half-bandwidth `bw`; row `i` stores `L[i][i-bw..=i]`.
#[derive(Clone, Debug)]
struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    fn factor(n: usize, bw: usize, a: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (i - j);
        for j in 0..n {
            for i in j..(j + w).min(n) {
                let mut s = a(i, j);
                let k0 = i.saturating_sub(bw);
                for k in k0..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Numerical("banded matrix is not positive definite".into()));
                    }
                    l[at(j, j)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    fn solve(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        let at = |i: usize, j: usize| i * w + (i - j);
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l[at(i, k)] * b[k];
            }
            b[i] = s / self.l[at(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + w).min(self.n) {
                s -= self.l[at(k, i)] * b[k];
            }
            b[i] = s / self.l[at(i, i)];
        }
    }
}

/// `-a Δu = f` on the unit square with Dirichlet data, 5-point stencil on an
/// `n × n` node grid. The interior system is factored once.
#[derive(Clone, Debug)]
pub struct DarcyProblem {
    n: usize,
    a: f64,
    f: f64,
    factor: BandCholesky,
}

/// Grid size of the Darcy problem.
pub const DARCY_NODES: usize = 51;

impl DarcyProblem {
    pub fn new(n: usize, a: f64, f: f64) -> Result<Self> {
        if n < 3 || !(a > 0.0) {
            return Err(invalid("Darcy grid needs n >= 3 and a > 0"));
        }
        let k = n - 2;
        let factor = BandCholesky::factor(k * k, k, |i, j| {
            if i == j {
                4.0
            } else if (i - j == 1 && i % k != 0) || i - j == k {
                -1.0
            } else {
                0.0
            }
        })?;
        Ok(Self { n, a, f, factor })
    }

    /// The 51×51 problem with `a = 0.1`, `f = -1`.
    pub fn standard() -> &'static DarcyProblem {
        static CELL: OnceLock<DarcyProblem> = OnceLock::new();
        CELL.get_or_init(|| DarcyProblem::new(DARCY_NODES, 0.1, -1.0).expect("valid problem"))
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    /// Row-major indices `i·n + j` of boundary nodes.
    pub fn boundary_indices(&self) -> Vec<usize> {
        let n = self.n;
        (0..n * n)
            .filter(|&idx| {
                let (i, j) = (idx / n, idx % n);
                i == 0 || j == 0 || i == n - 1 || j == n - 1
            })
            .collect()
    }

    /// Node coordinates `(x, y)` in row-major order (`x` along columns).
    pub fn coords(&self) -> Tensor {
        let n = self.n;
        let h = 1.0 / (n - 1) as f64;
        Tensor::from_fn(n * n, 2, |idx, c| {
            let (i, j) = (idx / n, idx % n);
            if c == 0 {
                j as f64 * h
            } else {
                i as f64 * h
            }
        })
    }

    /// Solution at all nodes given boundary values in [`Self::boundary_indices`] order.
    pub fn solve(&self, boundary: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let bidx = self.boundary_indices();
        if boundary.len() != bidx.len() {
            return Err(Error::ShapeMismatch {
                op: "solve_darcy_2d",
                lhs: vec![bidx.len()],
                rhs: vec![boundary.len()],
            });
        }
        let mut u = vec![0.0; n * n];
        for (&idx, &v) in bidx.iter().zip(boundary) {
            u[idx] = v;
        }
        let h = 1.0 / (n - 1) as f64;
        let k = n - 2;
        let mut rhs = vec![self.f * h * h / self.a; k * k];
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let r = (i - 1) * k + (j - 1);
                for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    if ni == 0 || nj == 0 || ni == n - 1 || nj == n - 1 {
                        rhs[r] += u[ni * n + nj];
                    }
                }
            }
        }
        self.factor.solve(&mut rhs);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                u[i * n + j] = rhs[(i - 1) * k + (j - 1)];
            }
        }
        Ok(u)
    }
}

/// Solves the standard Darcy problem for boundary data on its 200 boundary nodes.
pub fn solve_darcy_2d(boundary: &[f64]) -> Result<Vec<f64>> {
    DarcyProblem::standard().solve(boundary)
}

/// Interval widths drawn uniformly from `[min, max]` (absolute units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthRange {
    pub min: f64,
    pub max: f64,
}

impl WidthRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min >= 0.0 && min <= max) {
            return Err(invalid(format!("invalid width range [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

/// How output intervals are obtained from input intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    /// Grid search of the noisy 1D curve over the interval.
    ExactOpt,
    /// Solve at both endpoint functions and sort per output point.
    EndpointMonotone,
}

/// Ideal interval data for the 1D regression curve: each center input gets a
/// width from `widths`, clipped to the domain `[0, π]`; the output interval is the envelope of
/// `truth(x) + noise` over [`GRID_SEARCH_POINTS`] points spanning the input
/// interval. Zero width returns the pointwise observation unchanged.
pub fn build_ideal_intervals_1d(
    base: &PointDataset,
    widths: WidthRange,
    seed: u64,
) -> Result<IntervalDataset> {
    if base.inputs.cols() != 1 || base.outputs.cols() != 1 {
        return Err(Error::Unsupported("grid-search intervals are 1D only".into()));
    }
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let n = base.len();
    let (mut xl, mut xh, mut yl, mut yh) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let c = base.inputs.get(i, 0);
        let w = widths.draw(&mut rng);
        if w == 0.0 {
            let y = base.outputs.get(i, 0);
            xl.push(c);
            xh.push(c);
            yl.push(y);
            yh.push(y);
            continue;
        }
        let (lo, hi) = ((c - 0.5 * w).max(0.0), (c + 0.5 * w).min(PI));
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in linspace(lo, hi, GRID_SEARCH_POINTS) {
            let y = truth_1d(x) + noise.sample(&mut rng);
            mn = mn.min(y);
            mx = mx.max(y);
        }
        xl.push(lo);
        xh.push(hi);
        yl.push(mn);
        yh.push(mx);
    }
    IntervalDataset::new(
        Tensor::matrix(n, 1, xl)?,
        Tensor::matrix(n, 1, xh)?,
        Tensor::matrix(n, 1, yl)?,
        Tensor::matrix(n, 1, yh)?,
    )
}

/// Interval function data plus the number of output points where the
/// center solution fell outside the sorted endpoint solutions.
#[derive(Clone, Debug)]
pub struct IdealFunctionIntervals {
    pub data: IntervalFunctionDataset,
    pub non_monotone: usize,
}

/// Endpoint-monotone intervals: each function gets one width `w_i` from
/// `widths`, sensors become `[u - w_i/2, u + w_i/2]`, and outputs are the
/// sorted solutions at the two endpoint functions.
pub fn build_ideal_function_intervals<S>(
    base: &FunctionDataset,
    widths: WidthRange,
    seed: u64,
    solver: S,
) -> Result<IdealFunctionIntervals>
where
    S: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut rng = rng_from_seed(seed);
    let (n, m, p) = (base.len(), base.sensors.cols(), base.values.cols());
    let mut sl = Vec::with_capacity(n * m);
    let mut sh = Vec::with_capacity(n * m);
    let mut vl = Vec::with_capacity(n * p);
    let mut vh = Vec::with_capacity(n * p);
    let mut non_monotone = 0;
    for i in 0..n {
        let w = widths.draw(&mut rng);
        let u = base.sensors.row(i);
        let ul: Vec<f64> = u.iter().map(|v| v - 0.5 * w).collect();
        let uh: Vec<f64> = u.iter().map(|v| v + 0.5 * w).collect();
        let gl = solver(&ul)?;
        let gh = solver(&uh)?;
        if gl.len() != p || gh.len() != p {
            return Err(invalid("solver output length differs from dataset grid"));
        }
        let center = base.values.row(i);
        for j in 0..p {
            let (a, b) = if gl[j] <= gh[j] { (gl[j], gh[j]) } else { (gh[j], gl[j]) };
            let tol = 1e-9 * (1.0 + center[j].abs());
            if center[j] < a - tol || center[j] > b + tol {
                non_monotone += 1;
            }
            vl.push(a);
            vh.push(b);
        }
        sl.extend(ul);
        sh.extend(uh);
    }
    let data = IntervalFunctionDataset::new(
        Tensor::matrix(n, m, sl)?,
        Tensor::matrix(n, m, sh)?,
        Tensor::matrix(n, p, vl)?,
        Tensor::matrix(n, p, vh)?,
        base.coords.clone(),
    )?;
    Ok(IdealFunctionIntervals { data, non_monotone })
}

/// Sensors, and output points, of the 1D Poisson problem.
pub const POISSON_SENSORS: usize = 100;

/// GP length scale of the Poisson forcing.
pub const POISSON_LENGTH_SCALE: f64 = 0.1;

/// GP length scale of the Darcy boundary data.
pub const DARCY_LENGTH_SCALE: f64 = 0.2;

/// `n` Poisson forcing/solution pairs on 100 sensors (`m = p = 100`).
pub fn gen_poisson_dataset(n: usize, seed: u64) -> Result<FunctionDataset> {
    let grid = linspace(0.0, 1.0, POISSON_SENSORS);
    let coords = Tensor::matrix(grid.len(), 1, grid)?;
    let gp = GpConfig::new(POISSON_LENGTH_SCALE, coords.clone())?;
    let u = sample_gp(&gp, n, seed)?;
    let mut values = Vec::with_capacity(n * POISSON_SENSORS);
    for i in 0..n {
        values.extend(solve_poisson_1d(u.row(i))?);
    }
    FunctionDataset::new(u, Tensor::matrix(n, POISSON_SENSORS, values)?, coords)
}

/// `n` Darcy boundary/solution pairs: 200 boundary sensors, 2601 output nodes.
pub fn gen_darcy_dataset(n: usize, seed: u64) -> Result<FunctionDataset> {
    let problem = DarcyProblem::standard();
    let all = problem.coords();
    let bidx = problem.boundary_indices();
    let gp = GpConfig::new(DARCY_LENGTH_SCALE, all.select_rows(&bidx))?;
    let b = sample_gp(&gp, n, seed)?;
    let p = all.rows();
    let mut values = Vec::with_capacity(n * p);
    for i in 0..n {
        values.extend(problem.solve(b.row(i))?);
    }
    FunctionDataset::new(b, Tensor::matrix(n, p, values)?, all)
}

/// Population standard deviation of every entry.
pub fn std_all(t: &Tensor) -> f64 {
    let m = t.mean();
    (t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_truth_values() {
        assert_eq!(truth_1d(0.0), 1.0);
        assert!((truth_1d(PI / 4.0) - 1.455_938_8_f64).abs() < 1e-6);
    }

    #[test]
    fn regression_noise_level() {
        let d = gen_1d_regression(100_000, 3).unwrap();
        let res: Vec<f64> = (0..d.len())
            .map(|i| d.outputs.get(i, 0) - truth_1d(d.inputs.get(i, 0)))
            .collect();
        let t = Tensor::vector(res).unwrap();
        let s = std_all(&t);
        assert!((s / NOISE_STD - 1.0).abs() < 0.05, "std {s}");
        assert!(d.inputs.data().iter().all(|&x| (0.0..=PI).contains(&x)));
    }

    #[test]
    fn kernel_diagonal_and_decay() {
        let grid = Tensor::matrix(3, 1, vec![0.0, 0.05, 5.0]).unwrap();
        let k = GpConfig::new(0.1, grid).unwrap().kernel();
        for i in 0..3 {
            assert_eq!(k.get(i, i), 1.0);
        }
        assert!(k.get(0, 2) < 1e-100);
        assert!(k.get(0, 1) > 0.8);
    }

    #[test]
    fn poisson_constant_forcing() {
        let g = poisson_fd(&vec![20.0; POISSON_NODES]).unwrap();
        assert!((g[50] + 2.5).abs() < 1e-10);
        let zero = solve_poisson_1d(&[0.0; 100]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_is_linear() {
        let u1: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin()).collect();
        let u2: Vec<f64> = (0..100).map(|i| (i as f64 * 0.07).cos()).collect();
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + b * y).collect();
        let g1 = solve_poisson_1d(&u1).unwrap();
        let g2 = solve_poisson_1d(&u2).unwrap();
        let gm = solve_poisson_1d(&mix).unwrap();
        for i in 0..100 {
            assert!((gm[i] - (a * g1[i] + b * g2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn darcy_harmonic_constant() {
        let p = DarcyProblem::new(11, 0.1, 0.0).unwrap();
        let u = p.solve(&vec![2.5; p.boundary_indices().len()]).unwrap();
        assert!(u.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn darcy_boundary_layout() {
        let p = DarcyProblem::standard();
        assert_eq!(p.boundary_indices().len(), 200);
        assert_eq!(p.coords().rows(), 2601);
    }

    #[test]
    fn width_range_validation() {
        assert!(WidthRange::new(0.3, 0.1).is_err());
        assert!(WidthRange::new(-0.1, 0.1).is_err());
        assert!(WidthRange::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn zero_width_intervals_are_degenerate() {
        let base = gen_1d_regression(20, 1).unwrap();
        let d = build_ideal_intervals_1d(&base, WidthRange::new(0.0, 0.0).unwrap(), 2).unwrap();
        assert_eq!(d.inputs_lo, base.inputs);
        assert_eq!(d.inputs_hi, base.inputs);
        assert_eq!(d.outputs_lo, base.outputs);
        assert_eq!(d.outputs_hi, base.outputs);
    }

    #[test]
    fn mix_seed_separates_streams() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
    }
}
