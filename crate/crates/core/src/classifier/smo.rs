//! Binary soft-margin SVM trained by sequential minimal optimization.
//!
//! Working-set selection uses second-order information (the LIBSVM scheme):
//! `i` is the maximal violator in the "up" set and `j` minimizes the
//! predicted objective decrease among the "low" set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SvmHyperparams;

const TAU: f64 = 1e-12;

/// Solver limits for [`train_binary_svm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoOptions {
    /// Stop once the maximal KKT violation `m(a) - M(a)` drops below this.
    pub kkt_tol: f64,
    /// Upper bound on pair updates; `None` means `max(100_000, 100 n)`.
    pub max_iter: Option<usize>,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-3,
            max_iter: None,
        }
    }
}

pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Trained two-class machine. Positive decision values mean `positive`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub positive: usize,
    pub negative: usize,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    /// False when the iteration cap was hit before the KKT tolerance.
    pub converged: bool,
}

impl BinaryMachine {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * rbf_kernel(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Raw solver output, before support vectors are extracted.
#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the soft-margin dual for labels `y` in {+1, -1}.
pub fn solve_dual(
    x: &[Vec<f64>],
    y: &[f64],
    hp: SvmHyperparams,
    opts: SmoOptions,
) -> Result<SmoSolution> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::Degenerate(
            "binary SVM needs both positive and negative examples".into(),
        ));
    }
    hp.validate()?;
    let c = hp.c;
    let kernel: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| rbf_kernel(&x[i], &x[j], hp.gamma)).collect())
        .collect();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = opts.max_iter.unwrap_or_else(|| (100 * n).max(100_000));
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // select i
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let in_up = if y[t] > 0.0 {
                !is_upper(alpha[t])
            } else {
                !is_lower(alpha[t])
            };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        // select j
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let in_low = if y[t] > 0.0 {
                    !is_lower(alpha[t])
                } else {
                    !is_upper(alpha[t])
                };
                if !in_low {
                    continue;
                }
                let v = y[t] * grad[t];
                if v >= gmax2 {
                    gmax2 = v;
                }
                let grad_diff = gmax + v;
                if grad_diff > 0.0 {
                    let quad = kernel[i][i] + kernel[t][t] - 2.0 * kernel[i][t];
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gmax + gmax2 >= opts.kkt_tol => (i, j),
            _ => {
                converged = true;
                break;
            }
        };
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (kernel[i][i] + kernel[j][j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kernel[i][i] + kernel[j][j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    // bias from free vectors, else midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(SmoSolution {
        alpha,
        bias: -rho,
        iterations,
        converged,
    })
}

/// Trains a binary machine on scaled features; `labels[i]` is `true` for
/// the positive class.
pub fn train_binary_svm(
    x: &[Vec<f64>],
    labels: &[bool],
    hp: SvmHyperparams,
    opts: SmoOptions,
    positive: usize,
    negative: usize,
) -> Result<BinaryMachine> {
    let y: Vec<f64> = labels.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let sol = solve_dual(x, &y, hp, opts)?;
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for ((xi, yi), a) in x.iter().zip(&y).zip(&sol.alpha) {
        if *a > 0.0 {
            support_vectors.push(xi.clone());
            dual_coefs.push(a * yi);
        }
    }
    Ok(BinaryMachine {
        positive,
        negative,
        support_vectors,
        dual_coefs,
        bias: sol.bias,
        gamma: hp.gamma,
        converged: sol.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn hp(c: f64, gamma: f64) -> SvmHyperparams {
        SvmHyperparams { c, gamma }
    }

    fn check_dual_feasibility(sol: &SmoSolution, y: &[f64], c: f64) {
        assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let s: f64 = sol.alpha.iter().zip(y).map(|(a, y)| a * y).sum();
        assert!(s.abs() < 1e-9, "sum alpha*y = {s}");
    }

    #[test]
    fn two_points_are_separated() {
        let x = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let m = train_binary_svm(
            &x,
            &[true, false],
            hp(1.0, 0.5),
            SmoOptions::default(),
            0,
            1,
        )
        .unwrap();
        assert!(m.decision(&x[0]) > 0.0);
        assert!(m.decision(&x[1]) < 0.0);
        assert!(m.converged);
    }

    #[test]
    fn xor_is_learned_with_rbf() {
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        let labels = [true, true, false, false];
        let m = train_binary_svm(&x, &labels, hp(10.0, 1.0), SmoOptions::default(), 0, 1).unwrap();
        for (xi, &l) in x.iter().zip(&labels) {
            assert_eq!(m.decision(xi) > 0.0, l);
        }
    }

    #[test]
    fn separable_blobs_reach_full_training_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let pos = i % 2 == 0;
            let cx = if pos { 2.5 } else { -2.5 };
            x.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
            labels.push(pos);
        }
        let y: Vec<f64> = labels.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let sol = solve_dual(&x, &y, hp(1000.0, 0.5), SmoOptions::default()).unwrap();
        check_dual_feasibility(&sol, &y, 1000.0);
        let m =
            train_binary_svm(&x, &labels, hp(1000.0, 0.5), SmoOptions::default(), 0, 1).unwrap();
        let correct = x
            .iter()
            .zip(&labels)
            .filter(|(xi, &l)| (m.decision(xi) > 0.0) == l)
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn overlapping_classes_satisfy_kkt_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..120 {
            let pos = i % 3 != 0;
            let cx = if pos { 0.7 } else { -0.7 };
            x.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
            y.push(if pos { 1.0 } else { -1.0 });
        }
        let c = 2.0;
        let opts = SmoOptions::default();
        let sol = solve_dual(&x, &y, hp(c, 0.7), opts).unwrap();
        assert!(sol.converged);
        check_dual_feasibility(&sol, &y, c);
        let labels: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
        let m = train_binary_svm(&x, &labels, hp(c, 0.7), opts, 0, 1).unwrap();
        let mut free = 0;
        for ((xi, yi), a) in x.iter().zip(&y).zip(&sol.alpha) {
            if *a > 0.0 && *a < c {
                free += 1;
                assert!((yi * m.decision(xi) - 1.0).abs() <= 10.0 * opts.kkt_tol);
            }
        }
        assert!(free > 0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(
            train_binary_svm(&x, &[true, true], hp(1.0, 1.0), SmoOptions::default(), 0, 1).is_err()
        );
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
        let labels: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let opts = SmoOptions {
            kkt_tol: 1e-3,
            max_iter: Some(2),
        };
        let m = train_binary_svm(&x, &labels, hp(10.0, 1.0), opts, 0, 1).unwrap();
        assert!(!m.converged);
        assert!(!m.support_vectors.is_empty());
    }
}
