//! Rate/quality sweeps and Bjontegaard delta rate.
//!
//! A sweep is a list of corpus operating points `(avg_rate, avg_quality,
//! worst_quality)`. The baseline sweep encodes every cluster (or chunk) at the
//! same CRF; the optimal sweep re-solves the allocation with the baseline's
//! average and worst quality as floors. "Expected" sweeps use centroid
//! curves and cluster weights; "actual" sweeps use each chunk's measured
//! curve and its predicted cluster.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocation::{
    per_chunk_allocation, solve_allocation, AllocationSolution, CorpusDistribution,
    QualityConstraints,
};
use crate::classifier::{ClassifierModel, FeatureVector};
use crate::error::{Error, Result};
use crate::rd_model::{ClusterModel, OperatingPointGrid, RdSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    BaselineExpected,
    OptimalExpected,
    BaselineActual,
    OptimalActual,
    OracleActual,
}

impl SweepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::BaselineExpected => "baseline_expected",
            Self::OptimalExpected => "optimal_expected",
            Self::BaselineActual => "baseline_actual",
            Self::OptimalActual => "optimal_actual",
            Self::OracleActual => "oracle_actual",
        }
    }
}

impl std::fmt::Display for SweepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub avg_rate: f64,
    pub avg_quality: f64,
    pub worst_quality: f64,
}

/// Sweep points sorted by average rate, with average quality strictly
/// increasing along the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
}

impl Sweep {
    pub fn new(kind: SweepKind, mut points: Vec<SweepPoint>) -> Result<Self> {
        if points.iter().any(|p| {
            !(p.avg_rate.is_finite() && p.avg_quality.is_finite() && p.worst_quality.is_finite())
        }) {
            return Err(Error::InvalidSweep(format!("{kind}: non-finite point")));
        }
        points.sort_by(|a, b| a.avg_rate.total_cmp(&b.avg_rate));
        if let Some(w) = points
            .windows(2)
            .find(|w| w[1].avg_quality <= w[0].avg_quality)
        {
            return Err(Error::InvalidSweep(format!(
                "{kind}: quality does not increase with rate between `{}` and `{}`",
                w[0].label, w[1].label
            )));
        }
        Ok(Self { kind, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn crf_label(q: f64) -> String {
    format!("crf={q}")
}

/// Every cluster at the same CRF, aggregated with the cluster weights.
pub fn baseline_sweep_expected(
    model: &ClusterModel,
    w: &CorpusDistribution,
    crf_list: &[f64],
) -> Result<Sweep> {
    if w.k() != model.k {
        return Err(Error::DimensionMismatch {
            expected: model.k,
            actual: w.k(),
        });
    }
    let points = crf_list
        .iter()
        .map(|&q| {
            let j = model.grid.index_of(q)?;
            let mut avg_rate = 0.0;
            let mut avg_quality = 0.0;
            let mut worst = f64::INFINITY;
            for (c, wl) in model.centroids.iter().zip(&w.weights) {
                avg_rate += wl * c.rates[j];
                avg_quality += wl * c.qualities[j];
                worst = worst.min(c.qualities[j]);
            }
            Ok(SweepPoint {
                label: crf_label(q),
                avg_rate,
                avg_quality,
                worst_quality: worst,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Sweep::new(SweepKind::BaselineExpected, points)
}

/// Re-solves the allocation at every baseline point's (average, worst)
/// qualities. Returns the sweep and the per-point solutions in baseline
/// order.
pub fn optimal_sweep_expected(
    model: &ClusterModel,
    w: &CorpusDistribution,
    baseline: &Sweep,
) -> Result<(Sweep, Vec<AllocationSolution>)> {
    if baseline.is_empty() {
        return Err(Error::InvalidSweep("empty baseline sweep".into()));
    }
    let mut points = Vec::with_capacity(baseline.len());
    let mut solutions = Vec::with_capacity(baseline.len());
    for p in &baseline.points {
        let c = QualityConstraints {
            min_avg_quality: p.avg_quality,
            min_worst_quality: p.worst_quality,
        };
        let sol = solve_allocation(model, w, &c)?;
        // the baseline point itself is feasible, so the optimum is no worse
        debug_assert!(sol.avg_rate <= p.avg_rate * (1.0 + 1e-9) + 1e-9);
        points.push(SweepPoint {
            label: p.label.clone(),
            avg_rate: sol.avg_rate,
            avg_quality: sol.avg_quality,
            worst_quality: sol.worst_quality,
        });
        solutions.push(sol);
    }
    Ok((Sweep::new(SweepKind::OptimalExpected, points)?, solutions))
}

/// Predicted cluster per sample, joined to features by `chunk_id`.
pub fn predict_for_samples(
    samples: &[RdSample],
    features: &[FeatureVector],
    classifier: &ClassifierModel,
) -> Result<Vec<usize>> {
    let by_id: HashMap<&str, &FeatureVector> =
        features.iter().map(|f| (f.chunk_id.as_str(), f)).collect();
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| !by_id.contains_key(s.chunk_id.as_str()))
        .map(|s| s.chunk_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingChunks(missing));
    }
    samples
        .iter()
        .map(|s| classifier.predict_feature(by_id[s.chunk_id.as_str()]))
        .collect()
}

fn aggregate_chunks(samples: &[RdSample], idx: impl Fn(usize) -> usize) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mut rate = 0.0;
    let mut quality = 0.0;
    let mut worst = f64::INFINITY;
    for (i, s) in samples.iter().enumerate() {
        let j = idx(i);
        rate += s.rates[j];
        quality += s.qualities[j];
        worst = worst.min(s.qualities[j]);
    }
    (rate / n, quality / n, worst)
}

/// Pairs each baseline CRF with the allocation solved at its constraints.
/// `solutions` is in `baseline` point order, as returned by
/// [`optimal_sweep_expected`].
pub fn pair_with_crfs(
    crf_list: &[f64],
    baseline: &Sweep,
    solutions: &[AllocationSolution],
) -> Result<Vec<(f64, AllocationSolution)>> {
    if baseline.len() != solutions.len() {
        return Err(Error::DimensionMismatch {
            expected: baseline.len(),
            actual: solutions.len(),
        });
    }
    crf_list
        .iter()
        .map(|&q| {
            let label = crf_label(q);
            baseline
                .points
                .iter()
                .position(|p| p.label == label)
                .map(|i| (q, solutions[i].clone()))
                .ok_or_else(|| Error::InvalidSweep(format!("no baseline point `{label}`")))
        })
        .collect()
}

/// Baseline and optimal sweeps over measured chunk curves. For each
/// `(crf, solution)` in `plan`, the baseline encodes every chunk at `crf`
/// and the optimal sweep encodes chunk `i` at
/// `solution.op_index[predicted[i]]`.
pub fn actual_sweeps(
    samples: &[RdSample],
    predicted: &[usize],
    grid: &OperatingPointGrid,
    plan: &[(f64, AllocationSolution)],
) -> Result<(Sweep, Sweep)> {
    if samples.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    if predicted.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            actual: predicted.len(),
        });
    }
    if let Some(s) = samples.iter().find(|s| s.len() != grid.len()) {
        return Err(Error::Ingestion {
            chunk_id: s.chunk_id.clone(),
            reason: "sample does not cover the grid".into(),
        });
    }
    let mut baseline = Vec::new();
    let mut optimal = Vec::new();
    for (q, sol) in plan {
        let q = *q;
        let j = grid.index_of(q)?;
        if let Some(&bad) = predicted.iter().find(|&&l| l >= sol.op_index.len()) {
            return Err(Error::InvalidConfig(format!(
                "predicted cluster {bad} outside the allocation's {} clusters",
                sol.op_index.len()
            )));
        }
        let (r, qa, qw) = aggregate_chunks(samples, |_| j);
        baseline.push(SweepPoint {
            label: crf_label(q),
            avg_rate: r,
            avg_quality: qa,
            worst_quality: qw,
        });
        let (r, qa, qw) = aggregate_chunks(samples, |i| sol.op_index[predicted[i]]);
        optimal.push(SweepPoint {
            label: crf_label(q),
            avg_rate: r,
            avg_quality: qa,
            worst_quality: qw,
        });
    }
    Ok((
        Sweep::new(SweepKind::BaselineActual, baseline)?,
        Sweep::new(SweepKind::OptimalActual, optimal)?,
    ))
}

/// Per-chunk optimal allocation at every baseline point's floors.
pub fn oracle_sweep_actual(samples: &[RdSample], baseline_actual: &Sweep) -> Result<Sweep> {
    let points = baseline_actual
        .points
        .iter()
        .map(|p| {
            let c = QualityConstraints {
                min_avg_quality: p.avg_quality,
                min_worst_quality: p.worst_quality,
            };
            let sol = per_chunk_allocation(samples, &c)?;
            Ok(SweepPoint {
                label: p.label.clone(),
                avg_rate: sol.avg_rate,
                avg_quality: sol.avg_quality,
                worst_quality: sol.worst_quality,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Sweep::new(SweepKind::OracleActual, points)
}

/// Least-squares cubic in `u = (quality - center) / half`.
fn fit_cubic(sweep: &Sweep, center: f64, half: f64) -> Result<[f64; 4]> {
    let n = sweep.len();
    let a = DMatrix::from_fn(n, 4, |i, j| {
        ((sweep.points[i].avg_quality - center) / half).powi(j as i32)
    });
    let b = DVector::from_iterator(n, sweep.points.iter().map(|p| p.avg_rate.log10()));
    let coef = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Degenerate(format!("cubic fit failed: {e}")))?;
    Ok([coef[0], coef[1], coef[2], coef[3]])
}

/// Bjontegaard delta rate of `test` against `reference`, in percent
/// (negative: `test` needs less rate for the same average quality).
pub fn bd_rate(reference: &Sweep, test: &Sweep) -> Result<f64> {
    for s in [reference, test] {
        if s.len() < 4 {
            return Err(Error::InvalidSweep(format!(
                "{}: BD-rate needs at least 4 points, got {}",
                s.kind,
                s.len()
            )));
        }
        if s.points.iter().any(|p| p.avg_rate <= 0.0) {
            return Err(Error::InvalidSweep(format!(
                "{}: non-positive rate",
                s.kind
            )));
        }
    }
    let range = |s: &Sweep| {
        let qs = s.points.iter().map(|p| p.avg_quality);
        (
            qs.clone().fold(f64::INFINITY, f64::min),
            qs.fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (ref_lo, ref_hi) = range(reference);
    let (test_lo, test_hi) = range(test);
    let lo = ref_lo.max(test_lo);
    let hi = ref_hi.min(test_hi);
    if !(hi > lo) {
        return Err(Error::InvalidSweep(format!(
            "quality ranges do not overlap ([{ref_lo}, {ref_hi}] vs [{test_lo}, {test_hi}])"
        )));
    }
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let pr = fit_cubic(reference, center, half)?;
    let pt = fit_cubic(test, center, half)?;
    // mean of a0 + a1 u + a2 u^2 + a3 u^3 over u in [-1, 1]
    let mean = |p: [f64; 4]| p[0] + p[2] / 3.0;
    let diff = mean(pt) - mean(pr);
    Ok((10f64.powf(diff) - 1.0) * 100.0)
}

/// Average quality of `sweep` at `rate`, linear in log-rate between points.
/// `None` outside the sweep's rate range.
pub fn quality_at_rate(sweep: &Sweep, rate: f64) -> Option<f64> {
    let pts = &sweep.points;
    let first = pts.first()?;
    let last = pts.last()?;
    if rate < first.avg_rate || rate > last.avg_rate {
        return None;
    }
    let hi = pts.partition_point(|p| p.avg_rate < rate);
    if pts[hi].avg_rate == rate || hi == 0 {
        return Some(pts[hi].avg_quality);
    }
    let (a, b) = (&pts[hi - 1], &pts[hi]);
    let t = (rate.ln() - a.avg_rate.ln()) / (b.avg_rate.ln() - a.avg_rate.ln());
    Some(a.avg_quality + t * (b.avg_quality - a.avg_quality))
}
