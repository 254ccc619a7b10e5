//! Interval datasets from pointwise data by grid cells or k-means clusters.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from_seed, IntervalDataset, PointDataset};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Cluster sizes used for the Poisson pool; mapped to counts via
/// [`ClusterAugConfig::from_sizes`].
pub const PDE_CLUSTER_SIZES: [usize; 12] = [5, 6, 8, 10, 15, 20, 30, 40, 50, 100, 200, 300];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAugConfig {
    pub resolutions: Vec<f64>,
    /// Groups smaller than this are dropped.
    #[serde(default = "one")]
    pub min_group_size: usize,
}

fn one() -> usize {
    1
}

impl GridAugConfig {
    pub fn new(resolutions: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            resolutions,
            min_group_size: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `count` resolutions evenly spaced over `[lo, hi]`.
    pub fn evenly_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(crate::data::linspace(lo, hi, count))
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(invalid("grid augmentation needs at least one resolution"));
        }
        if self.resolutions.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("grid resolutions must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAugConfig {
    pub cluster_counts: Vec<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub min_group_size: usize,
}

impl ClusterAugConfig {
    pub fn new(cluster_counts: Vec<usize>, seed: u64) -> Self {
        let d = KMeansConfig::default();
        Self {
            cluster_counts,
            max_iters: d.max_iters,
            tol: d.tol,
            seed,
            min_group_size: 1,
        }
    }

    /// One cluster count `k = round(n / size)` per target size, clamped to `[1, n]`.
    pub fn from_sizes(n: usize, sizes: &[usize], seed: u64) -> Result<Self> {
        if n == 0 || sizes.is_empty() || sizes.contains(&0) {
            return Err(invalid("cluster sizes need n > 0 and positive sizes"));
        }
        let counts = sizes
            .iter()
            .map(|&s| ((n as f64 / s as f64).round() as usize).clamp(1, n))
            .collect();
        Ok(Self::new(counts, seed))
    }

    /// k-means settings used for one cluster count.
    pub fn kmeans_config(&self, k: usize) -> KMeansConfig {
        KMeansConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            seed: crate::data::mix_seed(self.seed, k as u64),
        }
    }
}

/// Accumulates the component-wise envelope of one group.
struct Envelope {
    xl: Vec<f64>,
    xh: Vec<f64>,
    yl: Vec<f64>,
    yh: Vec<f64>,
    count: usize,
}

impl Envelope {
    fn new(x: &[f64], y: &[f64]) -> Self {
        Self {
            xl: x.to_vec(),
            xh: x.to_vec(),
            yl: y.to_vec(),
            yh: y.to_vec(),
            count: 1,
        }
    }

    fn push(&mut self, x: &[f64], y: &[f64]) {
        for (j, v) in x.iter().enumerate() {
            self.xl[j] = self.xl[j].min(*v);
            self.xh[j] = self.xh[j].max(*v);
        }
        for (j, v) in y.iter().enumerate() {
            self.yl[j] = self.yl[j].min(*v);
            self.yh[j] = self.yh[j].max(*v);
        }
        self.count += 1;
    }
}

fn emit(groups: impl IntoIterator<Item = Envelope>, d: usize, m: usize, min_size: usize) -> Result<IntervalDataset> {
    let (mut xl, mut xh, mut yl, mut yh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut rows = 0;
    for g in groups.into_iter().filter(|g| g.count >= min_size) {
        xl.extend(g.xl);
        xh.extend(g.xh);
        yl.extend(g.yl);
        yh.extend(g.yh);
        rows += 1;
    }
    if rows == 0 {
        return Err(invalid("augmentation produced no groups"));
    }
    IntervalDataset::new(
        Tensor::matrix(rows, d, xl)?,
        Tensor::matrix(rows, d, xh)?,
        Tensor::matrix(rows, m, yl)?,
        Tensor::matrix(rows, m, yh)?,
    )
}

/// Buckets points by `floor(x / r)` for every resolution `r` and emits one
/// interval sample per non-empty cell. Meant for low input dimension.
pub fn grid_intervals(data: &PointDataset, cfg: &GridAugConfig) -> Result<IntervalDataset> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("empty dataset"));
    }
    let (d, m) = (data.inputs.cols(), data.outputs.cols());
    let mut groups = Vec::new();
    for &r in &cfg.resolutions {
        let mut cells: BTreeMap<Vec<i64>, Envelope> = BTreeMap::new();
        for i in 0..data.len() {
            let x = data.inputs.row(i);
            let y = data.outputs.row(i);
            let key: Vec<i64> = x.iter().map(|v| (v / r).floor() as i64).collect();
            cells
                .entry(key)
                .and_modify(|e| e.push(x, y))
                .or_insert_with(|| Envelope::new(x, y));
        }
        groups.extend(cells.into_values());
    }
    emit(groups, d, m, cfg.min_group_size)
}

/// Labels and centroids (`k × d`) of a k-means fit.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Tensor,
    pub iterations: usize,
}

impl KMeans {
    /// Within-cluster sum of squared distances.
    pub fn inertia(&self, points: &Tensor) -> f64 {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &c)| sq_dist(points.row(i), self.centroids.row(c)))
            .sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed(points: &Tensor, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centroids = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if t < *w {
                    idx = i;
                    break;
                }
                t -= w;
            }
            idx
        } else {
            // every point coincides with a centroid already
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds until the largest centroid shift
/// falls below `tol` or `max_iters` is reached.
pub fn kmeans(points: &Tensor, k: usize, cfg: &KMeansConfig) -> Result<KMeans> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(invalid(format!("k-means needs 1 <= k <= N, got k={k}, N={n}")));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("k-means input"));
    }
    let d = points.cols();
    let mut rng = rng_from_seed(cfg.seed);
    let mut centroids = plus_plus_seed(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    for _ in 0..cfg.max_iters.max(1) {
        iterations += 1;
        for (i, l) in labels.iter_mut().enumerate() {
            *l = nearest(points.row(i), &centroids).0;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        // an empty cluster takes the farthest point of the largest cluster
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let big = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            let mean: Vec<f64> = sums[big].iter().map(|s| s / counts[big] as f64).collect();
            let far = (0..n)
                .filter(|&i| labels[i] == big)
                .max_by(|&a, &b| {
                    sq_dist(points.row(a), &mean)
                        .total_cmp(&sq_dist(points.row(b), &mean))
                        .then(b.cmp(&a))
                })
                .unwrap();
            labels[far] = c;
            counts[big] -= 1;
            counts[c] = 1;
            for j in 0..d {
                sums[big][j] -= points.get(far, j);
                sums[c][j] = points.get(far, j);
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < cfg.tol {
            break;
        }
    }
    for (i, l) in labels.iter_mut().enumerate() {
        *l = nearest(points.row(i), &centroids).0;
    }
    let flat: Vec<f64> = centroids.into_iter().flatten().collect();
    Ok(KMeans {
        labels,
        centroids: Tensor::matrix(k, d, flat)?,
        iterations,
    })
}

/// Clusters the inputs for every `k` in the config and emits one interval
/// sample per cluster.
pub fn cluster_intervals(data: &PointDataset, cfg: &ClusterAugConfig) -> Result<IntervalDataset> {
    if cfg.cluster_counts.is_empty() {
        return Err(invalid("cluster augmentation needs at least one count"));
    }
    let (d, m) = (data.inputs.cols(), data.outputs.cols());
    let mut groups = Vec::new();
    for &k in &cfg.cluster_counts {
        let fit = kmeans(&data.inputs, k, &cfg.kmeans_config(k))?;
        let mut env: Vec<Option<Envelope>> = (0..k).map(|_| None).collect();
        for (i, &c) in fit.labels.iter().enumerate() {
            let (x, y) = (data.inputs.row(i), data.outputs.row(i));
            match &mut env[c] {
                Some(e) => e.push(x, y),
                slot => *slot = Some(Envelope::new(x, y)),
            }
        }
        groups.extend(env.into_iter().flatten());
    }
    emit(groups, d, m, cfg.min_group_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(x: &[f64], y: &[f64]) -> PointDataset {
        PointDataset::new(
            Tensor::matrix(x.len(), 1, x.to_vec()).unwrap(),
            Tensor::matrix(y.len(), 1, y.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn grid_hand_bucketing() {
        let d = pts(&[0.1, 0.12, 0.3], &[1.0, 2.0, 5.0]);
        let out = grid_intervals(&d, &GridAugConfig::new(vec![0.2]).unwrap()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.inputs_lo.data(), &[0.1, 0.3]);
        assert_eq!(out.inputs_hi.data(), &[0.12, 0.3]);
        assert_eq!(out.outputs_lo.data(), &[1.0, 5.0]);
        assert_eq!(out.outputs_hi.data(), &[2.0, 5.0]);
    }

    #[test]
    fn grid_coarse_and_fine_extremes() {
        let d = pts(&[0.1, 0.5, 0.9], &[3.0, -1.0, 2.0]);
        let coarse = grid_intervals(&d, &GridAugConfig::new(vec![10.0]).unwrap()).unwrap();
        assert_eq!(coarse.len(), 1);
        assert_eq!(coarse.inputs_lo.data(), &[0.1]);
        assert_eq!(coarse.outputs_hi.data(), &[3.0]);
        let fine = grid_intervals(&d, &GridAugConfig::new(vec![0.01]).unwrap()).unwrap();
        assert_eq!(fine.inputs_lo, fine.inputs_hi);
        assert_eq!(fine.outputs_lo.data(), &[3.0, -1.0, 2.0]);
    }

    #[test]
    fn grid_min_group_size_filters() {
        let d = pts(&[0.1, 0.12, 0.3], &[1.0, 2.0, 5.0]);
        let mut cfg = GridAugConfig::new(vec![0.2]).unwrap();
        cfg.min_group_size = 2;
        assert_eq!(grid_intervals(&d, &cfg).unwrap().len(), 1);
        assert!(GridAugConfig::new(vec![]).is_err());
        assert!(GridAugConfig::new(vec![0.0]).is_err());
    }

    #[test]
    fn kmeans_four_points() {
        let p = Tensor::matrix(4, 1, vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let fit = kmeans(&p, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(fit.labels[0], fit.labels[1]);
        assert_eq!(fit.labels[2], fit.labels[3]);
        assert_ne!(fit.labels[0], fit.labels[2]);
        let mut c = fit.centroids.data().to_vec();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
    }

    #[test]
    fn kmeans_k_equals_n_and_errors() {
        let p = Tensor::matrix(5, 1, vec![3.0, -1.0, 7.0, 2.0, 0.5]).unwrap();
        let fit = kmeans(&p, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(fit.inertia(&p), 0.0);
        assert!(kmeans(&p, 6, &KMeansConfig::default()).is_err());
        assert!(kmeans(&p, 0, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn kmeans_duplicates_share_labels() {
        let base = [0.0, 0.3, 5.0, 5.2, 9.0];
        let doubled: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let p = Tensor::matrix(10, 1, doubled).unwrap();
        let fit = kmeans(&p, 3, &KMeansConfig::default()).unwrap();
        for i in 0..5 {
            assert_eq!(fit.labels[i], fit.labels[i + 5]);
        }
    }

    #[test]
    fn cluster_extremes() {
        let d = pts(&[0.0, 1.0, 4.0, 9.0], &[2.0, 1.0, 0.0, 5.0]);
        let one = cluster_intervals(&d, &ClusterAugConfig::new(vec![1], 3)).unwrap();
        assert_eq!(one.inputs_lo.data(), &[0.0]);
        assert_eq!(one.inputs_hi.data(), &[9.0]);
        assert_eq!(one.outputs_lo.data(), &[0.0]);
        assert_eq!(one.outputs_hi.data(), &[5.0]);
        let all = cluster_intervals(&d, &ClusterAugConfig::new(vec![4], 3)).unwrap();
        assert_eq!(all.inputs_lo, all.inputs_hi);
        let mut ys = all.outputs_lo.data().to_vec();
        ys.sort_by(f64::total_cmp);
        assert_eq!(ys, vec![0.0, 1.0, 2.0, 5.0]);
    }

    #[test]
    fn sizes_map_to_counts() {
        let cfg = ClusterAugConfig::from_sizes(1000, &PDE_CLUSTER_SIZES, 0).unwrap();
        let total: usize = cfg.cluster_counts.iter().sum();
        assert!((720..=880).contains(&total), "{total}");
        assert!(ClusterAugConfig::from_sizes(10, &[0], 0).is_err());
    }
}
