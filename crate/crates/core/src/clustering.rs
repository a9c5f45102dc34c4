//! k-means over normalized R-D vectors.
//!
//! Lloyd iterations with k-means++ seeding and `n_init` restarts. Restart `r`
//! draws from a ChaCha stream selected by `r`, so results depend only on the
//! configured seed, never on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rd_model::{
    fit_normalization, to_rd_vector, ClusterModel, OperatingPointGrid, RdSample,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative inertia decrease falls below this.
    pub rel_tol: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 300,
            rel_tol: 1e-6,
            n_init: 10,
            seed,
        }
    }
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self::new(10, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// Sum of squared L2 distances to the assigned centroids.
    pub inertia: f64,
}

/// Result of [`kmeans_fit`]: the best restart.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: ClusterAssignment,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
    /// Index of the winning restart.
    pub restart: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid, ties to the lowest index.
pub fn nearest_centroid(vector: &[f64], centroids: &[Vec<f64>]) -> Result<(usize, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    for (l, c) in centroids.iter().enumerate() {
        if c.len() != vector.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                actual: vector.len(),
            });
        }
        let d = squared_distance(vector, c);
        if d < best.1 {
            best = (l, d);
        }
    }
    if best.0 == usize::MAX {
        return Err(Error::InvalidConfig("no centroids".into()));
    }
    Ok(best)
}

/// Assigns a normalized R-D vector to the nearest centroid of `model`.
pub fn assign_nearest(vector: &[f64], model: &ClusterModel) -> Result<usize> {
    nearest_centroid(vector, &model.normalized_centroids()).map(|(l, _)| l)
}

fn validate_input(vectors: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if vectors.len() < k {
        return Err(Error::NotEnoughSamples {
            needed: k,
            got: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(dim)
}

fn kmeans_plus_plus(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(vectors[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| squared_distance(v, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = vectors[pick].clone();
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(squared_distance(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    vectors
        .iter()
        .map(|v| nearest_centroid(v, centroids).expect("validated dimensions"))
        .unzip()
}

fn update_centroids(
    vectors: &[Vec<f64>],
    labels: &[usize],
    d2: &[f64],
    k: usize,
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &l) in vectors.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(v) {
            *s += x;
        }
    }
    // Empty clusters take the points farthest from their current centroids.
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| d2[b].total_cmp(&d2[a]).then(a.cmp(&b)));
    let mut donors = order.into_iter();
    for l in 0..k {
        if counts[l] == 0 {
            let i = donors.next().expect("n >= k");
            sums[l] = vectors[i].clone();
            counts[l] = 1;
        } else {
            let c = counts[l] as f64;
            sums[l].iter_mut().for_each(|s| *s /= c);
        }
    }
    sums
}

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    inertia: f64,
    trace: Vec<f64>,
}

fn single_run(vectors: &[Vec<f64>], cfg: &KMeansConfig, dim: usize, restart: usize) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut centroids = kmeans_plus_plus(vectors, cfg.k, &mut rng);
    let mut trace = Vec::new();
    let mut iter = 0;
    loop {
        let (labels, d2) = assign_all(vectors, &centroids);
        let inertia: f64 = d2.iter().sum();
        let converged = match trace.last() {
            Some(&prev) => prev - inertia <= cfg.rel_tol * prev,
            None => inertia == 0.0,
        };
        trace.push(inertia);
        iter += 1;
        if converged || iter >= cfg.max_iters {
            return Run {
                centroids,
                labels,
                inertia,
                trace,
            };
        }
        centroids = update_centroids(vectors, &labels, &d2, cfg.k, dim);
    }
}

/// Clusters `vectors` into `cfg.k` groups, keeping the restart with the
/// lowest inertia (ties to the earliest restart).
pub fn kmeans_fit(vectors: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansFit> {
    let dim = validate_input(vectors, cfg.k)?;
    if cfg.n_init == 0 || cfg.max_iters == 0 {
        return Err(Error::InvalidConfig(
            "n_init and max_iters must be positive".into(),
        ));
    }
    if !(cfg.rel_tol >= 0.0) {
        return Err(Error::InvalidConfig("rel_tol must be non-negative".into()));
    }
    let runs: Vec<Run> = (0..cfg.n_init)
        .into_par_iter()
        .map(|r| single_run(vectors, cfg, dim, r))
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.inertia < a.1.inertia { b } else { a })
        .expect("n_init >= 1");
    Ok(KMeansFit {
        centroids: best.centroids,
        assignment: ClusterAssignment {
            labels: best.labels,
            inertia: best.inertia,
        },
        inertia_trace: best.trace,
        restart,
    })
}

/// Normalizes the samples' R-D vectors, runs k-means and builds the cluster
/// model (centroid curves repaired to be monotone). Also returns the
/// normalized vectors and the fit.
pub fn fit_cluster_model(
    samples: &[RdSample],
    grid: &OperatingPointGrid,
    cfg: &KMeansConfig,
) -> Result<(ClusterModel, Vec<Vec<f64>>, KMeansFit)> {
    let stats = fit_normalization(samples, grid)?;
    let vectors = samples
        .iter()
        .map(|s| stats.normalize(&to_rd_vector(s, grid)?))
        .collect::<Result<Vec<_>>>()?;
    let fit = kmeans_fit(&vectors, cfg)?;
    let model =
        ClusterModel::from_normalized_centroids(grid.clone(), stats, &fit.centroids, cfg.seed)?;
    Ok((model, vectors, fit))
}

/// `sum_i ||x_i - mu_{l(i)}|| / sum_i ||x_i||`.
pub fn mean_relative_error(
    vectors: &[Vec<f64>],
    centroids: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            actual: labels.len(),
        });
    }
    let mut residual = 0.0;
    let mut total = 0.0;
    for (v, &l) in vectors.iter().zip(labels) {
        let c = centroids.get(l).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "label {l} out of range for {} centroids",
                centroids.len()
            ))
        })?;
        if c.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                actual: v.len(),
            });
        }
        residual += squared_distance(v, c).sqrt();
        total += v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    if total == 0.0 {
        return Err(Error::Degenerate("all vectors are zero".into()));
    }
    Ok(residual / total)
}

/// Seed used for the `k`-cluster fit inside [`error_vs_k_sweep`].
pub fn sweep_seed(base: u64, k: usize) -> u64 {
    base ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mean relative error of the best k-means fit for each `k`.
pub fn error_vs_k_sweep(
    vectors: &[Vec<f64>],
    k_values: &[usize],
    cfg: &KMeansConfig,
) -> Result<Vec<(usize, f64)>> {
    k_values
        .iter()
        .map(|&k| {
            let run_cfg = KMeansConfig {
                k,
                seed: sweep_seed(cfg.seed, k),
                ..cfg.clone()
            };
            let fit = kmeans_fit(vectors, &run_cfg)?;
            let err = mean_relative_error(vectors, &fit.centroids, &fit.assignment.labels)?;
            Ok((k, err))
        })
        .collect()
}
