use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{confusion, ClassifierModel, LabeledFeature, SvmHyperparams};

/// Mean validation accuracy of one `(c, gamma)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub c: f64,
    pub gamma: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub cells: Vec<CvCell>,
    pub best: SvmHyperparams,
    /// Number of model fits per grid cell (= folds).
    pub fits_per_cell: usize,
}

/// Indices grouped by label, each group shuffled by `rng`.
fn shuffled_groups(labels: &[usize], rng: &mut ChaCha8Rng) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    for members in groups.values_mut() {
        members.shuffle(rng);
    }
    groups
}

/// Stratified split; each class keeps `round(ratio * n_c)` training members
/// (at least one on each side). Both halves keep the input order.
pub fn split_train_test(
    dataset: &[LabeledFeature],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledFeature>, Vec<LabeledFeature>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train ratio must be in (0, 1), got {ratio}"
        )));
    }
    let labels: Vec<usize> = dataset.iter().map(|(_, l)| *l).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_groups(&labels, &mut rng);
    let mut in_train = vec![false; dataset.len()];
    for (label, members) in &groups {
        let n = members.len();
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "class {label} has {n} sample(s); a stratified split needs at least 2"
            )));
        }
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (row, t) in dataset.iter().zip(in_train) {
        if t {
            train.push(row.clone());
        } else {
            test.push(row.clone());
        }
    }
    Ok((train, test))
}

/// Fold index per sample. Members of each class are dealt round-robin after
/// a seeded shuffle; the dealing position carries over between classes so
/// fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_groups(labels, &mut rng);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for (label, members) in &groups {
        if members.len() < folds {
            return Err(Error::InvalidConfig(format!(
                "class {label} has {} members, fewer than {folds} folds",
                members.len()
            )));
        }
        for &i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Grid search over `(c, gamma)` with stratified k-fold cross-validation.
/// The best cell maximizes mean accuracy; ties go to smaller `c`, then
/// smaller `gamma`.
pub fn grid_search_cv(
    train: &[LabeledFeature],
    c_grid: &[f64],
    gamma_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if c_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidConfig("empty hyperparameter grid".into()));
    }
    let mut cs = c_grid.to_vec();
    let mut gammas = gamma_grid.to_vec();
    cs.sort_by(f64::total_cmp);
    gammas.sort_by(f64::total_cmp);
    let labels: Vec<usize> = train.iter().map(|(_, l)| *l).collect();
    let assignment = stratified_folds(&labels, folds, seed)?;
    let rows: Vec<&Vec<f64>> = train.iter().map(|(f, _)| &f.values).collect();

    let split = |fold: usize| {
        let mut tr = (Vec::new(), Vec::new());
        let mut va = (Vec::new(), Vec::new());
        for ((r, &l), &a) in rows.iter().zip(&labels).zip(&assignment) {
            let side = if a == fold { &mut va } else { &mut tr };
            side.0.push((*r).clone());
            side.1.push(l);
        }
        (tr, va)
    };
    let fold_data: Vec<_> = (0..folds).map(split).collect();

    let grid: Vec<SvmHyperparams> = cs
        .iter()
        .flat_map(|&c| gammas.iter().map(move |&gamma| SvmHyperparams { c, gamma }))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&hp| {
            let mut acc_sum = 0.0;
            for ((tx, ty), (vx, vy)) in &fold_data {
                let model = ClassifierModel::train(tx, ty, hp)?;
                let pred = vx
                    .iter()
                    .map(|x| model.predict(x))
                    .collect::<Result<Vec<_>>>()?;
                acc_sum += confusion(vy, &pred, &model.classes).0;
            }
            Ok(CvCell {
                c: hp.c,
                gamma: hp.gamma,
                mean_accuracy: acc_sum / folds as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = cells
        .iter()
        .fold(None::<&CvCell>, |best, cell| match best {
            Some(b) if cell.mean_accuracy <= b.mean_accuracy => Some(b),
            _ => Some(cell),
        })
        .expect("non-empty grid");
    Ok(CvResult {
        best: SvmHyperparams {
            c: best.c,
            gamma: best.gamma,
        },
        cells,
        fits_per_cell: folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FeatureVector;

    fn dataset(per_class: &[usize]) -> Vec<LabeledFeature> {
        let mut out = Vec::new();
        for (label, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let x = label as f64 * 10.0 + (i as f64 * 0.618).fract();
                out.push((
                    FeatureVector::new(format!("c{label}_{i}"), vec![x, (i as f64).sin()]),
                    label,
                ));
            }
        }
        out
    }

    #[test]
    fn eighty_twenty_split() {
        let data = dataset(&[25, 25, 25, 25]);
        let (train, test) = split_train_test(&data, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
    }

    #[test]
    fn split_preserves_class_proportions() {
        let data = dataset(&[13, 7, 31]);
        let (train, _) = split_train_test(&data, 0.8, 2).unwrap();
        for (label, n) in [(0, 13usize), (1, 7), (2, 31)] {
            let got = train.iter().filter(|(_, l)| *l == label).count() as f64;
            assert!((got - 0.8 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn half_split_of_pairs_is_one_each() {
        let data = dataset(&[2, 2, 2]);
        let (train, test) = split_train_test(&data, 0.5, 3).unwrap();
        for label in 0..3 {
            assert_eq!(train.iter().filter(|(_, l)| *l == label).count(), 1);
            assert_eq!(test.iter().filter(|(_, l)| *l == label).count(), 1);
        }
    }

    #[test]
    fn split_is_deterministic_and_rejects_singletons() {
        let data = dataset(&[10, 10]);
        assert_eq!(
            split_train_test(&data, 0.8, 9).unwrap(),
            split_train_test(&data, 0.8, 9).unwrap()
        );
        assert!(split_train_test(&dataset(&[1, 5]), 0.8, 0).is_err());
        assert!(split_train_test(&data, 1.0, 0).is_err());
    }

    #[test]
    fn folds_are_balanced_and_stratified() {
        let labels: Vec<usize> = (0..53).map(|i| i % 3).collect();
        let folds = stratified_folds(&labels, 5, 4).unwrap();
        let mut sizes = [0usize; 5];
        for &f in &folds {
            sizes[f] += 1;
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in 0..3 {
            let mut per = [0usize; 5];
            for (f, l) in folds.iter().zip(&labels) {
                if *l == class {
                    per[*f] += 1;
                }
            }
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        assert_eq!(folds, stratified_folds(&labels, 5, 4).unwrap());
        assert!(stratified_folds(&[0, 0, 1], 2, 0).is_err());
    }

    #[test]
    fn separable_data_reaches_full_cv_accuracy() {
        let data = dataset(&[15, 15, 15]);
        let cv = grid_search_cv(&data, &[1.0, 10.0], &[0.1, 1.0], 5, 0).unwrap();
        assert_eq!(cv.fits_per_cell, 5);
        assert_eq!(cv.cells.len(), 4);
        let best = cv
            .cells
            .iter()
            .find(|c| c.c == cv.best.c && c.gamma == cv.best.gamma)
            .unwrap();
        assert_eq!(best.mean_accuracy, 1.0);
        // ties resolve to the smallest c then gamma
        assert_eq!((cv.best.c, cv.best.gamma), (1.0, 0.1));
        assert_eq!(
            cv,
            grid_search_cv(&data, &[10.0, 1.0], &[1.0, 0.1], 5, 0).unwrap()
        );
    }

    #[test]
    fn fold_accounting_on_ten_points() {
        // two classes of 5 with folds = 5: every fold holds one point of each;
        // folds = n would leave classes smaller than the fold count
        let data = dataset(&[5, 5]);
        let cv = grid_search_cv(&data, &[1.0], &[1.0], 5, 0).unwrap();
        assert_eq!(cv.fits_per_cell, 5);
        assert!(grid_search_cv(&data, &[1.0], &[1.0], 10, 0).is_err());
    }
}
