//! Ranking metrics for detector evaluation plus small statistics helpers.
//!
//! Average precision follows the rank-walk definition: sort by score
//! descending (ties keep input order), take the precision at every positive's
//! rank, average. AUROC is computed with the Mann-Whitney midrank formula;
//! [`auroc_pair_count`] is the O(n²) pair-counting definition kept as an
//! independent cross-check, with ties worth half. Both reject degenerate
//! single-class inputs instead of returning a made-up value.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_scores<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Contract("metrics need at least one sample".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices of `scores` in descending order; equal scores keep input order.
fn descending_order<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    idx
}

/// Mean precision over the ranks of the positive samples.
pub fn average_precision<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T> {
    let (pos, _) = check_scores(scores, labels)?;
    if pos == 0 {
        return Err(Error::Contract("average precision needs a positive sample".into()));
    }
    let mut true_positives = 0usize;
    let mut acc = T::zero();
    for (rank0, &i) in descending_order(scores).iter().enumerate() {
        if labels[i] {
            true_positives += 1;
            acc += T::from_usize_(true_positives) / T::from_usize_(rank0 + 1);
        }
    }
    Ok(acc / T::from_usize_(pos))
}

/// Ascending 1-based ranks with ties sharing their average rank.
fn midranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![T::zero(); n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[idx[end + 1]] == values[idx[start]] {
            end += 1;
        }
        // ranks start+1 ..= end+1 share the same value
        let avg = T::from_usize_(start + 1 + end + 1) / T::fl(2.0);
        for &i in &idx[start..=end] {
            ranks[i] = avg;
        }
        start = end + 1;
    }
    ranks
}

/// Area under the ROC curve via the Mann-Whitney rank-sum identity.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T> {
    let (pos, neg) = check_scores(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Contract("auroc needs both classes".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: T = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| *r)
        .sum();
    let np = T::from_usize_(pos);
    let u = rank_sum - np * (np + T::one()) / T::fl(2.0);
    Ok(u / (np * T::from_usize_(neg)))
}

/// Pair-counting AUROC: fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Quadratic; kept as an oracle.
pub fn auroc_pair_count<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T> {
    let (pos, neg) = check_scores(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Contract("auroc needs both classes".into()));
    }
    let mut acc = T::zero();
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                acc += T::one();
            } else if scores[i] == scores[j] {
                acc += T::fl(0.5);
            }
        }
    }
    Ok(acc / (T::from_usize_(pos) * T::from_usize_(neg)))
}

/// Spearman rank correlation (midranks + Pearson on the ranks).
pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract("spearman needs two equally long series".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value".into()));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let n = T::from_usize_(x.len());
    let mx = rx.iter().cloned().sum::<T>() / n;
    let my = ry.iter().cloned().sum::<T>() / n;
    let mut cov = T::zero();
    let mut vx = T::zero();
    let mut vy = T::zero();
    for (a, b) in rx.iter().zip(&ry) {
        let da = *a - mx;
        let db = *b - my;
        cov += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx == T::zero() || vy == T::zero() {
        return Err(Error::Contract("spearman is undefined for a constant series".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

pub fn mean<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    values.iter().cloned().sum::<T>() / T::from_usize_(values.len())
}

/// Population standard deviation (divides by n).
pub fn std_population<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let m = mean(values);
    let var = values.iter().map(|v| (*v - m) * (*v - m)).sum::<T>()
        / T::from_usize_(values.len());
    var.sqrt()
}

/// Sample standard deviation (divides by n - 1); 0 for fewer than 2 values.
pub fn std_sample<T: Scalar>(values: &[T]) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    let m = mean(values);
    let var = values.iter().map(|v| (*v - m) * (*v - m)).sum::<T>()
        / T::from_usize_(values.len() - 1);
    var.sqrt()
}

/// Median over a copy of the input; averages the middle pair for even n.
pub fn median<T: Scalar>(values: &[T]) -> T {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::fl(2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn average_precision_worked_example() {
        // Positives at ranks 1 and 3: (1/1 + 2/3) / 2 = 5/6.
        let scores = [0.9, 0.8, 0.7, 0.6];
        let labels = [true, false, true, false];
        assert_relative_eq!(
            average_precision(&scores, &labels).unwrap(),
            5.0 / 6.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn average_precision_is_one_when_positives_lead() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(average_precision(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auroc_worked_example_three_quarters() {
        let scores = [0.9, 0.8, 0.7, 0.6];
        let labels = [true, false, true, false];
        assert_relative_eq!(auroc(&scores, &labels).unwrap(), 0.75, max_relative = 1e-15);
        assert_relative_eq!(
            auroc_pair_count(&scores, &labels).unwrap(),
            0.75,
            max_relative = 1e-15
        );
    }

    #[test]
    fn all_tied_scores_give_auroc_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [true, false, true, false];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.5);
        assert_eq!(auroc_pair_count(&scores, &labels).unwrap(), 0.5);
        // AP tie-break keeps input order: positives land at ranks 1 and 3.
        assert_relative_eq!(
            average_precision(&scores, &labels).unwrap(),
            5.0 / 6.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auroc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(average_precision(&[0.1, 0.2], &[false, false]).is_err());
        assert!(average_precision::<f64>(&[], &[]).is_err());
        assert!(auroc(&[f64::NAN, 0.2], &[true, false]).is_err());
        assert!(auroc(&[0.1], &[true, false]).is_err());
    }

    /// The midrank formula must agree with pair counting on every input.
    #[test]
    fn auroc_formulas_agree_on_exhaustive_small_inputs() {
        let score_grid = [0.0, 0.25, 0.25, 0.5, 1.0];
        let mut rng = rng_from_seed(7);
        for n in 2..=8usize {
            for _ in 0..300 {
                let scores: Vec<f64> =
                    (0..n).map(|_| score_grid[rng.gen_range(0..score_grid.len())]).collect();
                let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
                let pos = labels.iter().filter(|&&l| l).count();
                if pos == 0 || pos == n {
                    continue;
                }
                let a = auroc(&scores, &labels).unwrap();
                let b = auroc_pair_count(&scores, &labels).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    /// AP re-derived straight from the definition on random inputs.
    #[test]
    fn average_precision_matches_direct_recomputation() {
        let mut rng = rng_from_seed(11);
        for _ in 0..500 {
            let n = rng.gen_range(2..10usize);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if !labels.iter().any(|&l| l) {
                labels[0] = true;
            }
            // definition: walk ranks, average precision at positives
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());
            let mut tp = 0.0;
            let mut expected = 0.0;
            let mut count = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                if labels[i] {
                    tp += 1.0;
                    expected += tp / (k as f64 + 1.0);
                    count += 1.0;
                }
            }
            expected /= count;
            assert_relative_eq!(
                average_precision(&scores, &labels).unwrap(),
                expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn random_scores_give_auroc_near_half() {
        let mut rng = rng_from_seed(3);
        let scores: Vec<f64> = (0..4000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..4000).map(|_| rng.gen_bool(0.5)).collect();
        let a = auroc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.03, "uninformative scores scored {a}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Strictly increasing transforms must not move ranking metrics.
        #[test]
        fn ranking_metrics_are_monotone_invariant(
            raw in proptest::collection::vec((0.0f64..1.0, proptest::bool::ANY), 4..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            let pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let squashed: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
            let exped: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let a0 = auroc(&scores, &labels).unwrap();
            prop_assert!((auroc(&squashed, &labels).unwrap() - a0).abs() < 1e-12);
            prop_assert!((auroc(&exped, &labels).unwrap() - a0).abs() < 1e-12);
            let p0 = average_precision(&scores, &labels).unwrap();
            prop_assert!((average_precision(&squashed, &labels).unwrap() - p0).abs() < 1e-12);
            prop_assert!((average_precision(&exped, &labels).unwrap() - p0).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_pinned_values() {
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[8.0, 6.0, 4.0, 2.0]).unwrap(),
            -1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(),
            -0.5,
            max_relative = 1e-15
        );
        // Nonlinear but monotone is still a perfect rank correlation.
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[0.1, 100.0, 101.0, 5000.0]).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn stats_helpers_worked_example() {
        // mean 0.2 with population stdev sqrt(0.02/3) ~= 0.0816
        let v = [0.1, 0.2, 0.3];
        assert_relative_eq!(mean(&v), 0.2, max_relative = 1e-15);
        assert_relative_eq!(std_population(&v), (0.02f64 / 3.0).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(std_sample(&v), 0.1, max_relative = 1e-12);
        assert_eq!(std_sample(&[1.0]), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
