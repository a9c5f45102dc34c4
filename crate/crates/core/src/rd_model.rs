//! Operating-point grids, per-chunk R-D samples, component normalization and
//! centroid R-D curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::EPSILON_STD;

/// Relative tolerance for the monotonicity check at ingestion.
pub const MONOTONE_REL_TOL: f64 = 1e-6;

/// Schema version written into serialized cluster models.
pub const CLUSTER_MODEL_VERSION: u32 = 1;

/// Ordered encoder operating points (CRF or QP values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OperatingPointGrid {
    points: Vec<f64>,
}

impl OperatingPointGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 operating points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite operating point".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "operating points must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of operating points `s`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Grid index of an operating point value.
    pub fn index_of(&self, q: f64) -> Result<usize> {
        self.points
            .iter()
            .position(|&p| (p - q).abs() <= 1e-9 * p.abs().max(1.0))
            .ok_or(Error::NotOnGrid(q))
    }
}

impl TryFrom<Vec<f64>> for OperatingPointGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<OperatingPointGrid> for Vec<f64> {
    fn from(grid: OperatingPointGrid) -> Self {
        grid.points
    }
}

/// Measured bitrate (kbps) and quality (dB) of one chunk at every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdSample {
    pub chunk_id: String,
    pub rates: Vec<f64>,
    pub qualities: Vec<f64>,
}

fn violates_non_increasing(prev: f64, next: f64) -> bool {
    next - prev > MONOTONE_REL_TOL * prev.abs().max(next.abs())
}

impl RdSample {
    /// Validates lengths, finiteness, positivity of rates and monotonicity.
    pub fn new(
        chunk_id: impl Into<String>,
        rates: Vec<f64>,
        qualities: Vec<f64>,
        grid: &OperatingPointGrid,
    ) -> Result<Self> {
        let chunk_id = chunk_id.into();
        let fail = |reason: String| Error::Ingestion {
            chunk_id: chunk_id.clone(),
            reason,
        };
        let s = grid.len();
        if rates.len() != s || qualities.len() != s {
            return Err(fail(format!(
                "expected {s} rates and qualities, got {} and {}",
                rates.len(),
                qualities.len()
            )));
        }
        if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(fail("rates must be finite and strictly positive".into()));
        }
        if qualities.iter().any(|q| !q.is_finite()) {
            return Err(fail("qualities must be finite".into()));
        }
        if let Some(j) = rates
            .windows(2)
            .position(|w| violates_non_increasing(w[0], w[1]))
        {
            return Err(fail(format!(
                "rate increases between grid index {j} and {}",
                j + 1
            )));
        }
        if let Some(j) = qualities
            .windows(2)
            .position(|w| violates_non_increasing(w[0], w[1]))
        {
            return Err(fail(format!(
                "quality increases between grid index {j} and {}",
                j + 1
            )));
        }
        Ok(Self {
            chunk_id,
            rates,
            qualities,
        })
    }

    /// Rebuilds a sample from a `[rates.., qualities..]` vector.
    pub fn from_rd_vector(
        chunk_id: impl Into<String>,
        v: &[f64],
        grid: &OperatingPointGrid,
    ) -> Result<Self> {
        let s = grid.len();
        if v.len() != 2 * s {
            return Err(Error::DimensionMismatch {
                expected: 2 * s,
                actual: v.len(),
            });
        }
        Self::new(chunk_id, v[..s].to_vec(), v[s..].to_vec(), grid)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

/// Concatenates rates then qualities, in grid order.
pub fn to_rd_vector(sample: &RdSample, grid: &OperatingPointGrid) -> Result<Vec<f64>> {
    let s = grid.len();
    if sample.rates.len() != s || sample.qualities.len() != s {
        return Err(Error::Ingestion {
            chunk_id: sample.chunk_id.clone(),
            reason: format!("sample does not cover the {s}-point grid"),
        });
    }
    let mut v = Vec::with_capacity(2 * s);
    v.extend_from_slice(&sample.rates);
    v.extend_from_slice(&sample.qualities);
    Ok(v)
}

/// Per-component mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl NormalizationStats {
    /// Fits statistics over equal-length vectors (divisor `n - 1`), clamping
    /// standard deviations at [`EPSILON_STD`].
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::NotEnoughSamples {
                needed: 2,
                got: vectors.len(),
            });
        }
        let dim = vectors[0].len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = vectors.len() as f64;
        let mut means = vec![0.0; dim];
        for v in vectors {
            for (m, x) in means.iter_mut().zip(v) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; dim];
        for v in vectors {
            for ((s, x), m) in stds.iter_mut().zip(v).zip(&means) {
                *s += (x - m) * (x - m);
            }
        }
        stds.iter_mut()
            .for_each(|s| *s = (*s / (n - 1.0)).sqrt().max(EPSILON_STD));
        Ok(Self { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(v.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn denormalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(v.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| x * s + m)
            .collect())
    }
}

/// Fits normalization statistics over the R-D vectors of a training set.
pub fn fit_normalization(
    samples: &[RdSample],
    grid: &OperatingPointGrid,
) -> Result<NormalizationStats> {
    let vectors = samples
        .iter()
        .map(|s| to_rd_vector(s, grid))
        .collect::<Result<Vec<_>>>()?;
    NormalizationStats::fit(&vectors)
}

/// Least-squares non-increasing fit (pool-adjacent-violators).
///
/// Runs the increasing variant on the reversed sequence and reverses back.
pub fn pava_non_increasing(values: &[f64]) -> Vec<f64> {
    // (block mean, block size)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &x in values.iter().rev() {
        blocks.push((x, 1));
        while blocks.len() >= 2 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (m, n) in blocks {
        out.extend(std::iter::repeat_n(m, n));
    }
    out.reverse();
    out
}

/// Denormalized cluster-mean R-D curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidCurve {
    pub cluster_id: usize,
    pub rates: Vec<f64>,
    pub qualities: Vec<f64>,
}

impl CentroidCurve {
    /// Replaces rates and qualities by their closest non-increasing sequences.
    pub fn repair_monotonicity(&self) -> CentroidCurve {
        CentroidCurve {
            cluster_id: self.cluster_id,
            rates: pava_non_increasing(&self.rates),
            qualities: pava_non_increasing(&self.qualities),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.rates.windows(2).all(|w| w[1] <= w[0])
            && self.qualities.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn to_rd_vector(&self) -> Vec<f64> {
        let mut v = self.rates.clone();
        v.extend_from_slice(&self.qualities);
        v
    }
}

/// Piecewise-linear (rate, quality) at operating point `q`; no extrapolation.
pub fn interpolate_curve(
    curve: &CentroidCurve,
    grid: &OperatingPointGrid,
    q: f64,
) -> Result<(f64, f64)> {
    let pts = grid.points();
    if curve.rates.len() != pts.len() || curve.qualities.len() != pts.len() {
        return Err(Error::DimensionMismatch {
            expected: pts.len(),
            actual: curve.rates.len().min(curve.qualities.len()),
        });
    }
    if !(q >= grid.min() && q <= grid.max()) {
        return Err(Error::OutOfRange {
            q,
            min: grid.min(),
            max: grid.max(),
        });
    }
    let hi = pts.partition_point(|&p| p < q);
    if pts[hi] == q {
        return Ok((curve.rates[hi], curve.qualities[hi]));
    }
    let lo = hi - 1;
    let t = (q - pts[lo]) / (pts[hi] - pts[lo]);
    let lerp = |a: f64, b: f64| a + t * (b - a);
    Ok((
        lerp(curve.rates[lo], curve.rates[hi]),
        lerp(curve.qualities[lo], curve.qualities[hi]),
    ))
}

/// Normalization statistics plus `k` centroid curves over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub v: u32,
    pub grid: OperatingPointGrid,
    pub stats: NormalizationStats,
    pub centroids: Vec<CentroidCurve>,
    pub k: usize,
    pub seed: u64,
}

impl ClusterModel {
    /// Builds a model from normalized-space k-means centroids: denormalizes,
    /// splits into rate and quality halves, and repairs monotonicity.
    pub fn from_normalized_centroids(
        grid: OperatingPointGrid,
        stats: NormalizationStats,
        centroids: &[Vec<f64>],
        seed: u64,
    ) -> Result<Self> {
        let s = grid.len();
        if stats.dim() != 2 * s {
            return Err(Error::DimensionMismatch {
                expected: 2 * s,
                actual: stats.dim(),
            });
        }
        let curves = centroids
            .iter()
            .enumerate()
            .map(|(id, c)| {
                let raw = stats.denormalize(c)?;
                Ok(CentroidCurve {
                    cluster_id: id,
                    rates: raw[..s].to_vec(),
                    qualities: raw[s..].to_vec(),
                }
                .repair_monotonicity())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, stats, curves, seed)
    }

    pub fn new(
        grid: OperatingPointGrid,
        stats: NormalizationStats,
        centroids: Vec<CentroidCurve>,
        seed: u64,
    ) -> Result<Self> {
        let model = Self {
            v: CLUSTER_MODEL_VERSION,
            k: centroids.len(),
            grid,
            stats,
            centroids,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.v != CLUSTER_MODEL_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported cluster model version {}",
                self.v
            )));
        }
        if self.k == 0 || self.centroids.len() != self.k {
            return Err(Error::InvalidConfig(format!(
                "model declares k={} with {} centroids",
                self.k,
                self.centroids.len()
            )));
        }
        let s = self.grid.len();
        if self.stats.dim() != 2 * s || self.stats.stds.len() != 2 * s {
            return Err(Error::DimensionMismatch {
                expected: 2 * s,
                actual: self.stats.dim(),
            });
        }
        for (i, c) in self.centroids.iter().enumerate() {
            if c.cluster_id != i {
                return Err(Error::InvalidConfig(format!(
                    "centroid at position {i} has cluster_id {}",
                    c.cluster_id
                )));
            }
            if c.rates.len() != s || c.qualities.len() != s {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    actual: c.rates.len(),
                });
            }
        }
        Ok(())
    }

    /// Centroids mapped back into normalized space.
    pub fn normalized_centroids(&self) -> Vec<Vec<f64>> {
        self.centroids
            .iter()
            .map(|c| {
                self.stats
                    .normalize(&c.to_rd_vector())
                    .expect("validated dimensions")
            })
            .collect()
    }

    pub fn interpolate(&self, cluster: usize, q: f64) -> Result<(f64, f64)> {
        let curve = self.centroids.get(cluster).ok_or_else(|| {
            Error::InvalidConfig(format!("cluster {cluster} out of range (k={})", self.k))
        })?;
        interpolate_curve(curve, &self.grid, q)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
