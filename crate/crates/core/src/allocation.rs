//! Choosing one grid operating point per cluster so that the weighted average
//! bitrate is minimal while the weighted average quality and the worst
//! cluster quality stay above given floors.
//!
//! The worst-quality floor decomposes per cluster: it simply removes grid
//! points. The average-quality floor is handled by a Lagrange multiplier
//! `lambda`; for fixed `lambda` every cluster independently minimizes
//! `rate - lambda * quality`, and `lambda` is bisected until the average
//! constraint is just met. This reaches points on the lower convex hull of
//! each cluster's (quality, rate) set. Points strictly inside a hull can be
//! better once the discrete average constraint is taken into account, so the
//! multiplier solution is then polished by a local search over single-cluster
//! and (for small instances) two-cluster moves, and finally by a depth-first
//! branch and bound that prunes with the multiplier's lower bound. The search
//! is capped at a fixed node budget; within the budget the result is optimal.
//! [`exhaustive_allocation`] is the exact reference for small instances.

use serde::{Deserialize, Serialize};

use crate::error::{BindingConstraint, Error, Result};
use crate::rd_model::{ClusterModel, RdSample};

/// Absolute slack (dB) when checking quality constraints.
pub const QUALITY_TOL: f64 = 1e-9;

const MAX_BISECTIONS: usize = 100;
const BRACKET_REL_TOL: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 1100;
const EXHAUSTIVE_LIMIT: f64 = 1e7;
/// Pairwise moves are searched only when the option count is at most this.
const PAIR_SEARCH_LIMIT: usize = 400;
/// Node budget of the branch and bound.
const BRANCH_NODE_BUDGET: usize = 200_000;

/// Fraction of corpus chunks in each cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDistribution {
    pub weights: Vec<f64>,
}

impl CorpusDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfig("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    /// Normalizes arbitrary non-negative masses.
    pub fn from_unnormalized(masses: &[f64]) -> Result<Self> {
        let sum: f64 = masses.iter().sum();
        if !(sum > 0.0) || masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidConfig(
                "masses must be non-negative with a positive sum".into(),
            ));
        }
        Self::new(masses.iter().map(|m| m / sum).collect())
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }
}

/// Estimates cluster weights from predicted cluster ids.
pub fn estimate_weights(predictions: &[usize], k: usize) -> Result<CorpusDistribution> {
    if predictions.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let mut counts = vec![0u64; k];
    for &p in predictions {
        *counts.get_mut(p).ok_or_else(|| {
            Error::InvalidConfig(format!("prediction {p} out of range for k={k}"))
        })? += 1;
    }
    let total = predictions.len() as f64;
    CorpusDistribution::new(counts.iter().map(|&c| c as f64 / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityConstraints {
    /// Floor on the weighted average quality (dB).
    pub min_avg_quality: f64,
    /// Floor on every cluster's quality (dB).
    pub min_worst_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub op_index: Vec<usize>,
    pub op_values: Vec<f64>,
    pub avg_rate: f64,
    pub avg_quality: f64,
    pub worst_quality: f64,
    pub lambda_star: f64,
    /// True when produced by exhaustive enumeration.
    pub exact: bool,
}

/// Per-chunk operating points and the resulting corpus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerChunkAllocation {
    pub op_index: Vec<usize>,
    pub avg_rate: f64,
    pub avg_quality: f64,
    pub worst_quality: f64,
    pub lambda_star: f64,
}

/// A rate/quality curve over grid indices.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CurveRef<'a> {
    pub rates: &'a [f64],
    pub qualities: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Choice {
    pub op_index: Vec<usize>,
    pub avg_rate: f64,
    pub avg_quality: f64,
    pub worst_quality: f64,
    pub lambda: f64,
}

fn aggregate(curves: &[CurveRef<'_>], weights: &[f64], idx: &[usize], lambda: f64) -> Choice {
    let mut avg_rate = 0.0;
    let mut avg_quality = 0.0;
    let mut worst = f64::INFINITY;
    for ((c, &w), &j) in curves.iter().zip(weights).zip(idx) {
        avg_rate += w * c.rates[j];
        avg_quality += w * c.qualities[j];
        worst = worst.min(c.qualities[j]);
    }
    Choice {
        op_index: idx.to_vec(),
        avg_rate,
        avg_quality,
        worst_quality: worst,
        lambda,
    }
}

fn satisfies(choice: &Choice, c: &QualityConstraints) -> bool {
    choice.avg_quality >= c.min_avg_quality - QUALITY_TOL
        && choice.worst_quality >= c.min_worst_quality - QUALITY_TOL
}

fn check_inputs(curves: &[CurveRef<'_>], weights: &[f64], c: &QualityConstraints) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::InvalidConfig("no curves to allocate".into()));
    }
    if curves.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: curves.len(),
            actual: weights.len(),
        });
    }
    if !c.min_avg_quality.is_finite() || !c.min_worst_quality.is_finite() {
        return Err(Error::InvalidConfig(
            "quality constraints must be finite".into(),
        ));
    }
    for cv in curves {
        if cv.rates.is_empty() || cv.rates.len() != cv.qualities.len() {
            return Err(Error::DimensionMismatch {
                expected: cv.qualities.len(),
                actual: cv.rates.len(),
            });
        }
    }
    Ok(())
}

/// Per-curve grid indices meeting the worst-quality floor, or the
/// infeasibility error naming the binding constraint.
fn feasible_sets(
    curves: &[CurveRef<'_>],
    weights: &[f64],
    c: &QualityConstraints,
) -> Result<Vec<Vec<usize>>> {
    let mut sets = Vec::with_capacity(curves.len());
    let mut best_avg = 0.0;
    for (l, (cv, w)) in curves.iter().zip(weights).enumerate() {
        let set: Vec<usize> = (0..cv.qualities.len())
            .filter(|&j| cv.qualities[j] >= c.min_worst_quality - QUALITY_TOL)
            .collect();
        if set.is_empty() {
            let best = cv
                .qualities
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::Infeasible {
                constraint: BindingConstraint::WorstQuality,
                detail: format!(
                    "curve {l} peaks at {best:.4} dB, below the floor {:.4} dB",
                    c.min_worst_quality
                ),
            });
        }
        best_avg += w * set
            .iter()
            .map(|&j| cv.qualities[j])
            .fold(f64::NEG_INFINITY, f64::max);
        sets.push(set);
    }
    if best_avg < c.min_avg_quality - QUALITY_TOL {
        return Err(Error::Infeasible {
            constraint: BindingConstraint::AverageQuality,
            detail: format!(
                "best achievable average is {best_avg:.4} dB, below the floor {:.4} dB",
                c.min_avg_quality
            ),
        });
    }
    Ok(sets)
}

/// Per-curve minimizer of `rate - lambda * quality` over its feasible set;
/// ties go to higher quality, then to the lower index.
fn lagrangian_pick(curves: &[CurveRef<'_>], sets: &[Vec<usize>], lambda: f64) -> Vec<usize> {
    curves
        .iter()
        .zip(sets)
        .map(|(cv, set)| {
            let mut best = set[0];
            let mut best_cost = cv.rates[best] - lambda * cv.qualities[best];
            for &j in &set[1..] {
                let cost = cv.rates[j] - lambda * cv.qualities[j];
                if cost < best_cost || (cost == best_cost && cv.qualities[j] > cv.qualities[best]) {
                    best = j;
                    best_cost = cost;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn lagrangian_allocation(
    curves: &[CurveRef<'_>],
    weights: &[f64],
    c: &QualityConstraints,
) -> Result<Choice> {
    check_inputs(curves, weights, c)?;
    let sets = feasible_sets(curves, weights, c)?;
    let eval = |lambda: f64| {
        aggregate(
            curves,
            weights,
            &lagrangian_pick(curves, &sets, lambda),
            lambda,
        )
    };

    let cheapest = eval(0.0);
    if satisfies(&cheapest, c) {
        return Ok(cheapest);
    }

    let mut best: Option<Choice> = None;
    let consider = |choice: Choice, best: &mut Option<Choice>| {
        if satisfies(&choice, c) && best.as_ref().is_none_or(|b| choice.avg_rate < b.avg_rate) {
            *best = Some(choice);
        }
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    loop {
        let choice = eval(hi);
        if satisfies(&choice, c) {
            consider(choice, &mut best);
            break;
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            // Only reachable through rounding; the max-quality pick is feasible.
            let idx: Vec<usize> = curves
                .iter()
                .zip(&sets)
                .map(|(cv, set)| {
                    *set.iter()
                        .max_by(|&&a, &&b| {
                            cv.qualities[a].total_cmp(&cv.qualities[b]).then(b.cmp(&a))
                        })
                        .expect("non-empty feasible set")
                })
                .collect();
            return Ok(aggregate(curves, weights, &idx, f64::INFINITY));
        }
    }

    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= BRACKET_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let choice = eval(mid);
        if satisfies(&choice, c) {
            hi = mid;
            consider(choice, &mut best);
        } else {
            lo = mid;
        }
    }
    consider(eval(lo), &mut best);
    consider(eval(hi), &mut best);
    let best = best.expect("upper bracket is feasible");
    let polished = refine(curves, weights, &sets, c, best);
    Ok(branch_and_bound(curves, weights, &sets, c, polished))
}

/// Depth-first search over clusters, seeded with a feasible incumbent. A
/// partial assignment is pruned when the remaining clusters cannot reach the
/// average floor, or when a Lagrangian lower bound (at zero and at the
/// incumbent's multiplier) cannot beat the incumbent.
fn branch_and_bound(
    curves: &[CurveRef<'_>],
    weights: &[f64],
    sets: &[Vec<usize>],
    c: &QualityConstraints,
    incumbent: Choice,
) -> Choice {
    let lambda = incumbent.lambda;
    if !lambda.is_finite() || lambda <= 0.0 {
        return incumbent;
    }
    let k = curves.len();
    let cost =
        |l: usize, j: usize| weights[l] * (curves[l].rates[j] - lambda * curves[l].qualities[j]);
    // options in ascending multiplier cost, so good leaves are found first
    let ordered: Vec<Vec<usize>> = sets
        .iter()
        .enumerate()
        .map(|(l, set)| {
            let mut v = set.clone();
            v.sort_by(|&a, &b| cost(l, a).total_cmp(&cost(l, b)).then(a.cmp(&b)));
            v
        })
        .collect();
    let mut min_rate = vec![0.0; k + 1];
    let mut min_cost = vec![0.0; k + 1];
    let mut max_quality = vec![0.0; k + 1];
    for l in (0..k).rev() {
        let set = &sets[l];
        let w = weights[l];
        let cv = &curves[l];
        min_rate[l] = min_rate[l + 1]
            + set
                .iter()
                .map(|&j| w * cv.rates[j])
                .fold(f64::INFINITY, f64::min);
        min_cost[l] = min_cost[l + 1]
            + set
                .iter()
                .map(|&j| cost(l, j))
                .fold(f64::INFINITY, f64::min);
        max_quality[l] = max_quality[l + 1]
            + set
                .iter()
                .map(|&j| w * cv.qualities[j])
                .fold(f64::NEG_INFINITY, f64::max);
    }

    struct Search<'s> {
        ordered: &'s [Vec<usize>],
        curves: &'s [CurveRef<'s>],
        weights: &'s [f64],
        min_rate: &'s [f64],
        min_cost: &'s [f64],
        max_quality: &'s [f64],
        floor: f64,
        lambda: f64,
        idx: Vec<usize>,
        best_rate: f64,
        best_idx: Vec<usize>,
        nodes: usize,
    }
    impl Search<'_> {
        fn visit(&mut self, l: usize, rate: f64, quality: f64) {
            if self.nodes >= BRANCH_NODE_BUDGET {
                return;
            }
            self.nodes += 1;
            if l == self.idx.len() {
                if quality >= self.floor && rate < self.best_rate {
                    self.best_rate = rate;
                    self.best_idx.clone_from(&self.idx);
                }
                return;
            }
            if quality + self.max_quality[l] < self.floor {
                return;
            }
            let need = self.floor - quality;
            let bound = rate + self.min_rate[l].max(self.min_cost[l] + self.lambda * need);
            if bound >= self.best_rate * (1.0 - 1e-12) {
                return;
            }
            let w = self.weights[l];
            let cv = self.curves[l];
            for &j in &self.ordered[l] {
                self.idx[l] = j;
                self.visit(l + 1, rate + w * cv.rates[j], quality + w * cv.qualities[j]);
            }
        }
    }
    let mut search = Search {
        ordered: &ordered,
        curves,
        weights,
        min_rate: &min_rate,
        min_cost: &min_cost,
        max_quality: &max_quality,
        floor: c.min_avg_quality - QUALITY_TOL,
        lambda,
        idx: vec![0; k],
        best_rate: incumbent.avg_rate,
        best_idx: incumbent.op_index.clone(),
        nodes: 0,
    };
    search.visit(0, 0.0, 0.0);
    let found = aggregate(curves, weights, &search.best_idx, lambda);
    if satisfies(&found, c) && found.avg_rate < incumbent.avg_rate {
        found
    } else {
        incumbent
    }
}

/// Best-improvement local search from a feasible choice. A move re-assigns
/// one cluster, or two clusters at once, and is taken only if it keeps the
/// average floor and lowers the average rate.
fn refine(
    curves: &[CurveRef<'_>],
    weights: &[f64],
    sets: &[Vec<usize>],
    c: &QualityConstraints,
    start: Choice,
) -> Choice {
    let floor = c.min_avg_quality - QUALITY_TOL;
    let mut idx = start.op_index.clone();
    let mut rate = start.avg_rate;
    let mut quality = start.avg_quality;
    let options: usize = sets.iter().map(Vec::len).sum();
    let pairs = options <= PAIR_SEARCH_LIMIT;
    loop {
        // (delta rate, delta quality) of moving cluster l to grid index j
        let delta = |l: usize, j: usize, idx: &[usize]| {
            let cv = &curves[l];
            let cur = idx[l];
            (
                weights[l] * (cv.rates[j] - cv.rates[cur]),
                weights[l] * (cv.qualities[j] - cv.qualities[cur]),
            )
        };
        let min_gain = 1e-12 * rate.abs();
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        let mut offer = |dr: f64, dq: f64, moves: Vec<(usize, usize)>| {
            if dr < -min_gain && quality + dq >= floor && best.as_ref().is_none_or(|(b, _)| dr < *b)
            {
                best = Some((dr, moves));
            }
        };
        for (l, set) in sets.iter().enumerate() {
            for &j in set {
                if j == idx[l] {
                    continue;
                }
                let (dr, dq) = delta(l, j, &idx);
                offer(dr, dq, vec![(l, j)]);
                if !pairs {
                    continue;
                }
                for (m, set_m) in sets.iter().enumerate().skip(l + 1) {
                    for &jm in set_m {
                        if jm == idx[m] {
                            continue;
                        }
                        let (dr2, dq2) = delta(m, jm, &idx);
                        offer(dr + dr2, dq + dq2, vec![(l, j), (m, jm)]);
                    }
                }
            }
        }
        let Some((_, moves)) = best else {
            break;
        };
        for (l, j) in moves {
            idx[l] = j;
        }
        let updated = aggregate(curves, weights, &idx, start.lambda);
        rate = updated.avg_rate;
        quality = updated.avg_quality;
    }
    aggregate(curves, weights, &idx, start.lambda)
}

pub(crate) fn exhaustive_choice(
    curves: &[CurveRef<'_>],
    weights: &[f64],
    c: &QualityConstraints,
) -> Result<Choice> {
    check_inputs(curves, weights, c)?;
    let combos: f64 = curves.iter().map(|cv| cv.rates.len() as f64).product();
    if combos > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            combinations: combos,
        });
    }
    feasible_sets(curves, weights, c)?;
    let mut idx = vec![0usize; curves.len()];
    let mut best: Option<Choice> = None;
    loop {
        let choice = aggregate(curves, weights, &idx, f64::NAN);
        if satisfies(&choice, c) && best.as_ref().is_none_or(|b| choice.avg_rate < b.avg_rate) {
            best = Some(choice);
        }
        // lexicographic odometer, last position fastest
        let mut pos = curves.len();
        loop {
            if pos == 0 {
                return best.ok_or_else(|| Error::Infeasible {
                    constraint: BindingConstraint::AverageQuality,
                    detail: "no grid combination meets both floors".into(),
                });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < curves[pos].rates.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn model_curves<'a>(model: &'a ClusterModel, w: &CorpusDistribution) -> Result<Vec<CurveRef<'a>>> {
    if w.k() != model.k {
        return Err(Error::DimensionMismatch {
            expected: model.k,
            actual: w.k(),
        });
    }
    Ok(model
        .centroids
        .iter()
        .map(|c| CurveRef {
            rates: &c.rates,
            qualities: &c.qualities,
        })
        .collect())
}

fn to_solution(model: &ClusterModel, choice: Choice, exact: bool) -> AllocationSolution {
    let points = model.grid.points();
    AllocationSolution {
        op_values: choice.op_index.iter().map(|&j| points[j]).collect(),
        op_index: choice.op_index,
        avg_rate: choice.avg_rate,
        avg_quality: choice.avg_quality,
        worst_quality: choice.worst_quality,
        lambda_star: if exact { 0.0 } else { choice.lambda },
        exact,
    }
}

/// Lagrangian solution of the cluster allocation problem.
pub fn solve_allocation(
    model: &ClusterModel,
    w: &CorpusDistribution,
    c: &QualityConstraints,
) -> Result<AllocationSolution> {
    let curves = model_curves(model, w)?;
    let choice = lagrangian_allocation(&curves, &w.weights, c)?;
    Ok(to_solution(model, choice, false))
}

/// Exact solution by enumerating all `s^k` grid combinations.
pub fn exhaustive_allocation(
    model: &ClusterModel,
    w: &CorpusDistribution,
    c: &QualityConstraints,
) -> Result<AllocationSolution> {
    let curves = model_curves(model, w)?;
    let choice = exhaustive_choice(&curves, &w.weights, c)?;
    Ok(to_solution(model, choice, true))
}

fn sample_curves(samples: &[RdSample]) -> (Vec<CurveRef<'_>>, Vec<f64>) {
    let n = samples.len();
    (
        samples
            .iter()
            .map(|s| CurveRef {
                rates: &s.rates,
                qualities: &s.qualities,
            })
            .collect(),
        vec![1.0 / n as f64; n],
    )
}

/// Allocates every chunk individually (each chunk its own cluster with
/// weight `1/n`): the best achievable allocation for the given chunks.
pub fn per_chunk_allocation(
    samples: &[RdSample],
    c: &QualityConstraints,
) -> Result<PerChunkAllocation> {
    let (curves, weights) = sample_curves(samples);
    let choice = lagrangian_allocation(&curves, &weights, c)?;
    Ok(PerChunkAllocation {
        op_index: choice.op_index,
        avg_rate: choice.avg_rate,
        avg_quality: choice.avg_quality,
        worst_quality: choice.worst_quality,
        lambda_star: choice.lambda,
    })
}

/// Exhaustive counterpart of [`per_chunk_allocation`] for small inputs.
pub fn per_chunk_exhaustive(
    samples: &[RdSample],
    c: &QualityConstraints,
) -> Result<PerChunkAllocation> {
    let (curves, weights) = sample_curves(samples);
    let choice = exhaustive_choice(&curves, &weights, c)?;
    Ok(PerChunkAllocation {
        op_index: choice.op_index,
        avg_rate: choice.avg_rate,
        avg_quality: choice.avg_quality,
        worst_quality: choice.worst_quality,
        lambda_star: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rd_model::{CentroidCurve, NormalizationStats, OperatingPointGrid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_from(curves: Vec<(Vec<f64>, Vec<f64>)>, grid: Vec<f64>) -> ClusterModel {
        let s = grid.len();
        let centroids = curves
            .into_iter()
            .enumerate()
            .map(|(i, (rates, qualities))| CentroidCurve {
                cluster_id: i,
                rates,
                qualities,
            })
            .collect();
        let stats = NormalizationStats {
            means: vec![0.0; 2 * s],
            stds: vec![1.0; 2 * s],
        };
        ClusterModel::new(OperatingPointGrid::new(grid).unwrap(), stats, centroids, 0).unwrap()
    }

    /// Random monotone curves shaped like encoder R-D behaviour.
    pub(crate) fn random_model(rng: &mut ChaCha8Rng, k: usize, s: usize) -> ClusterModel {
        let grid: Vec<f64> = (0..s).map(|j| 20.0 + 6.0 * j as f64).collect();
        let curves = (0..k)
            .map(|_| {
                let a = rng.random_range(42.0..55.0);
                let b = rng.random_range(0.1..0.5);
                let c = rng.random_range(500.0..20000.0);
                let d = rng.random_range(0.03..0.1);
                let rates = grid.iter().map(|q| c * (-d * q).exp()).collect();
                let quals = grid.iter().map(|q| a - b * q).collect();
                (rates, quals)
            })
            .collect();
        model_from(curves, grid)
    }

    fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> CorpusDistribution {
        let masses: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        CorpusDistribution::from_unnormalized(&masses).unwrap()
    }

    fn constraints_between(
        model: &ClusterModel,
        w: &CorpusDistribution,
        rng: &mut ChaCha8Rng,
    ) -> QualityConstraints {
        let s = model.grid.len();
        let lo_avg: f64 = (0..model.k)
            .map(|l| w.weights[l] * model.centroids[l].qualities[s - 1])
            .sum();
        let hi_avg: f64 = (0..model.k)
            .map(|l| w.weights[l] * model.centroids[l].qualities[0])
            .sum();
        let worst_hi = model
            .centroids
            .iter()
            .map(|c| c.qualities[0])
            .fold(f64::INFINITY, f64::min);
        let worst_lo = model
            .centroids
            .iter()
            .map(|c| c.qualities[s - 1])
            .fold(f64::INFINITY, f64::min);
        QualityConstraints {
            min_avg_quality: rng.random_range(lo_avg..hi_avg),
            min_worst_quality: rng.random_range(worst_lo..worst_hi),
        }
    }

    #[test]
    fn weights_from_counts() {
        assert_eq!(
            estimate_weights(&[0, 0, 1, 1], 2).unwrap().weights,
            vec![0.5, 0.5]
        );
        assert_eq!(
            estimate_weights(&[3, 3, 3], 5).unwrap().weights,
            vec![0.0, 0.0, 0.0, 1.0, 0.0]
        );
        assert!(estimate_weights(&[], 2).is_err());
        assert!(estimate_weights(&[2], 2).is_err());
    }

    #[test]
    fn weights_track_multinomial_truth() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let preds: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                probs
                    .iter()
                    .position(|p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(3)
            })
            .collect();
        let w = estimate_weights(&preds, 4).unwrap();
        for (est, p) in w.weights.iter().zip(probs) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((est - p).abs() <= 3.0 * sigma, "{est} vs {p}");
        }
    }

    #[test]
    fn single_cluster_takes_cheapest_feasible_point() {
        let model = model_from(
            vec![(
                vec![900.0, 500.0, 300.0, 200.0],
                vec![44.0, 41.0, 38.0, 35.0],
            )],
            vec![10.0, 20.0, 30.0, 40.0],
        );
        let w = CorpusDistribution::new(vec![1.0]).unwrap();
        let c = QualityConstraints {
            min_avg_quality: 39.0,
            min_worst_quality: 30.0,
        };
        let sol = solve_allocation(&model, &w, &c).unwrap();
        assert_eq!(sol.op_index, vec![1]);
        assert_eq!(sol.op_values, vec![20.0]);
        assert_eq!(
            exhaustive_allocation(&model, &w, &c).unwrap().op_index,
            vec![1]
        );
        assert!(!sol.exact);
    }

    #[test]
    fn slack_constraints_give_cheapest_points_and_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 3, 5);
        let w = random_weights(&mut rng, 3);
        let c = QualityConstraints {
            min_avg_quality: 0.0,
            min_worst_quality: 0.0,
        };
        let sol = solve_allocation(&model, &w, &c).unwrap();
        assert_eq!(sol.op_index, vec![4, 4, 4]);
        assert_eq!(sol.lambda_star, 0.0);
    }

    #[test]
    fn hand_enumerated_two_by_two() {
        // cluster 0: (rate, q) = (100, 40) | (60, 36)
        // cluster 1: (rate, q) = (300, 38) | (120, 30)
        // weights 0.5/0.5; avg floor 36, worst floor 30
        //   [0,0]: rate 200, q 39     [0,1]: rate 110, q 35 (fails avg)
        //   [1,0]: rate 180, q 37     [1,1]: rate 90,  q 33 (fails avg)
        let model = model_from(
            vec![
                (vec![100.0, 60.0], vec![40.0, 36.0]),
                (vec![300.0, 120.0], vec![38.0, 30.0]),
            ],
            vec![20.0, 40.0],
        );
        let w = CorpusDistribution::new(vec![0.5, 0.5]).unwrap();
        let c = QualityConstraints {
            min_avg_quality: 36.0,
            min_worst_quality: 30.0,
        };
        let exact = exhaustive_allocation(&model, &w, &c).unwrap();
        assert_eq!(exact.op_index, vec![1, 0]);
        assert_eq!(exact.avg_rate, 180.0);
        assert!(exact.exact);
        let sol = solve_allocation(&model, &w, &c).unwrap();
        assert!(sol.avg_rate >= exact.avg_rate);
    }

    #[test]
    fn infeasibility_names_the_binding_constraint() {
        let model = model_from(
            vec![
                (vec![100.0, 60.0], vec![40.0, 36.0]),
                (vec![300.0, 120.0], vec![38.0, 30.0]),
            ],
            vec![20.0, 40.0],
        );
        let w = CorpusDistribution::new(vec![0.5, 0.5]).unwrap();
        let worst = QualityConstraints {
            min_avg_quality: 30.0,
            min_worst_quality: 38.5,
        };
        for result in [
            solve_allocation(&model, &w, &worst),
            exhaustive_allocation(&model, &w, &worst),
        ] {
            assert!(matches!(
                result,
                Err(Error::Infeasible {
                    constraint: BindingConstraint::WorstQuality,
                    ..
                })
            ));
        }
        let avg = QualityConstraints {
            min_avg_quality: 39.5,
            min_worst_quality: 0.0,
        };
        for result in [
            solve_allocation(&model, &w, &avg),
            exhaustive_allocation(&model, &w, &avg),
        ] {
            assert!(matches!(
                result,
                Err(Error::Infeasible {
                    constraint: BindingConstraint::AverageQuality,
                    ..
                })
            ));
        }
    }

    #[test]
    fn exhaustive_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 8, 13);
        let w = random_weights(&mut rng, 8);
        let c = QualityConstraints {
            min_avg_quality: 0.0,
            min_worst_quality: 0.0,
        };
        assert!(matches!(
            exhaustive_allocation(&model, &w, &c),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn lagrangian_never_beats_oracle_and_stays_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..60 {
            let k = rng.random_range(1..=4);
            let s = rng.random_range(2..=6);
            let model = random_model(&mut rng, k, s);
            let w = random_weights(&mut rng, k);
            let c = constraints_between(&model, &w, &mut rng);
            let (sol, exact) = match (
                solve_allocation(&model, &w, &c),
                exhaustive_allocation(&model, &w, &c),
            ) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(_), Err(_)) => continue,
                (a, b) => panic!("solvers disagree on feasibility: {a:?} {b:?}"),
            };
            assert!(sol.avg_rate >= exact.avg_rate * (1.0 - 1e-12));
            assert!(
                sol.avg_rate <= exact.avg_rate * 1.005,
                "{} vs {}",
                sol.avg_rate,
                exact.avg_rate
            );
            for s in [&sol, &exact] {
                assert!(s.avg_quality >= c.min_avg_quality - 1e-9);
                assert!(s.worst_quality >= c.min_worst_quality - 1e-9);
            }
        }
    }

    #[test]
    fn relaxing_constraints_never_raises_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = random_model(&mut rng, 4, 8);
        let w = random_weights(&mut rng, 4);
        let s = model.grid.len();
        let hi: f64 = (0..4)
            .map(|l| w.weights[l] * model.centroids[l].qualities[0])
            .sum();
        let lo: f64 = (0..4)
            .map(|l| w.weights[l] * model.centroids[l].qualities[s - 1])
            .sum();
        let worst_floor = model
            .centroids
            .iter()
            .map(|c| c.qualities[s - 1])
            .fold(f64::INFINITY, f64::min);
        let mut prev = f64::INFINITY;
        for step in 0..=20 {
            let avg = hi - (hi - lo) * step as f64 / 20.0;
            let c = QualityConstraints {
                min_avg_quality: avg,
                min_worst_quality: worst_floor,
            };
            let sol = solve_allocation(&model, &w, &c).unwrap();
            assert!(sol.avg_rate <= prev + 1e-9);
            prev = sol.avg_rate;
        }
        // worst-quality ladder at a fixed average floor
        let mid = 0.5 * (hi + lo);
        let mut prev = f64::INFINITY;
        let top = model
            .centroids
            .iter()
            .map(|c| c.qualities[0])
            .fold(f64::INFINITY, f64::min);
        for step in 0..=20 {
            let floor = top - (top - worst_floor) * step as f64 / 20.0;
            let c = QualityConstraints {
                min_avg_quality: mid,
                min_worst_quality: floor,
            };
            let sol = solve_allocation(&model, &w, &c).unwrap();
            assert!(sol.avg_rate <= prev + 1e-9);
            prev = sol.avg_rate;
        }
    }

    #[test]
    fn zero_lambda_means_cheapest_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let model = random_model(&mut rng, 3, 6);
            let w = random_weights(&mut rng, 3);
            let c = constraints_between(&model, &w, &mut rng);
            let Ok(sol) = solve_allocation(&model, &w, &c) else {
                continue;
            };
            if sol.lambda_star == 0.0 {
                for (l, &j) in sol.op_index.iter().enumerate() {
                    let cv = &model.centroids[l];
                    let cheapest = (0..cv.rates.len())
                        .filter(|&i| cv.qualities[i] >= c.min_worst_quality - 1e-9)
                        .min_by(|&a, &b| cv.rates[a].total_cmp(&cv.rates[b]))
                        .unwrap();
                    assert_eq!(cv.rates[j], cv.rates[cheapest]);
                }
            }
        }
    }

    fn sample(id: &str, rates: Vec<f64>, quals: Vec<f64>, grid: &OperatingPointGrid) -> RdSample {
        RdSample::new(id, rates, quals, grid).unwrap()
    }

    #[test]
    fn per_chunk_single_and_identical_chunks() {
        let grid = OperatingPointGrid::new(vec![10.0, 20.0, 30.0]).unwrap();
        let one = vec![sample(
            "a",
            vec![500.0, 250.0, 120.0],
            vec![42.0, 38.0, 33.0],
            &grid,
        )];
        let c = QualityConstraints {
            min_avg_quality: 37.0,
            min_worst_quality: 30.0,
        };
        let sol = per_chunk_allocation(&one, &c).unwrap();
        assert_eq!(sol.op_index, vec![1]);
        let many: Vec<RdSample> = (0..6)
            .map(|i| {
                sample(
                    &format!("c{i}"),
                    vec![500.0, 250.0, 120.0],
                    vec![42.0, 38.0, 33.0],
                    &grid,
                )
            })
            .collect();
        // at 37 dB one chunk can drop to the cheapest point; at 37.9 none can
        let loose = per_chunk_allocation(&many, &c).unwrap();
        assert_eq!(
            loose.avg_rate,
            per_chunk_exhaustive(&many, &c).unwrap().avg_rate
        );
        assert!((loose.avg_rate - 1370.0 / 6.0).abs() < 1e-9);
        let c = QualityConstraints {
            min_avg_quality: 37.9,
            ..c
        };
        let sol_many = per_chunk_allocation(&many, &c).unwrap();
        assert!(sol_many.op_index.iter().all(|&j| j == 1), "{sol_many:?}");
        assert!((sol_many.avg_rate - 250.0).abs() < 1e-9);
        assert!((sol_many.avg_quality - 38.0).abs() < 1e-9);
        assert_eq!(sol_many.worst_quality, 38.0);
    }

    #[test]
    fn per_chunk_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = OperatingPointGrid::new(vec![20.0, 30.0, 40.0, 50.0]).unwrap();
        let mut checked = 0;
        for _ in 0..20 {
            let samples: Vec<RdSample> = (0..5)
                .map(|i| {
                    let a = rng.random_range(42.0..55.0);
                    let b = rng.random_range(0.1..0.5);
                    let c = rng.random_range(500.0..20000.0);
                    let d = rng.random_range(0.03..0.1);
                    let p = grid.points();
                    sample(
                        &format!("c{i}"),
                        p.iter().map(|q| c * (-d * q).exp()).collect(),
                        p.iter().map(|q| a - b * q).collect(),
                        &grid,
                    )
                })
                .collect();
            let avg_hi: f64 = samples.iter().map(|s| s.qualities[0]).sum::<f64>() / 5.0;
            let avg_lo: f64 = samples.iter().map(|s| s.qualities[3]).sum::<f64>() / 5.0;
            let c = QualityConstraints {
                min_avg_quality: rng.random_range(avg_lo..avg_hi),
                min_worst_quality: samples
                    .iter()
                    .map(|s| s.qualities[3])
                    .fold(f64::INFINITY, f64::min),
            };
            let heuristic = per_chunk_allocation(&samples, &c).unwrap();
            let exact = per_chunk_exhaustive(&samples, &c).unwrap();
            assert!(heuristic.avg_rate >= exact.avg_rate * (1.0 - 1e-12));
            assert!(heuristic.avg_rate <= exact.avg_rate * 1.005);
            checked += 1;
        }
        assert_eq!(checked, 20);
    }

    proptest! {
        #[test]
        fn weight_scaling_leaves_choice_unchanged(seed in 0u64..500, scale in 0.1f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 3, 6);
            let masses: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let w = CorpusDistribution::from_unnormalized(&masses).unwrap();
            let scaled: Vec<f64> = masses.iter().map(|m| m * scale).collect();
            let w2 = CorpusDistribution::from_unnormalized(&scaled).unwrap();
            let c = constraints_between(&model, &w, &mut rng);
            if let (Ok(a), Ok(b)) = (solve_allocation(&model, &w, &c), solve_allocation(&model, &w2, &c)) {
                prop_assert_eq!(a.op_index, b.op_index);
            }
        }
    }
}
