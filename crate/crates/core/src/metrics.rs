//! Accuracy, unweighted average recall, (weighted) label-ranking average
//! precision and the continuity-corrected McNemar test.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{Head, Label};

/// Chi-square critical value, 1 degree of freedom, alpha = 0.01.
pub const MCNEMAR_CRITICAL_001: f64 = 6.635;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} ground-truth entries")]
    LengthMismatch(usize, usize),
    #[error("metric is undefined on an empty input")]
    Empty,
    #[error("class {class} at sample {index} is outside [0, {n_classes})")]
    ClassOutOfRange {
        index: usize,
        class: usize,
        n_classes: usize,
    },
    #[error("sample {0} has no true labels")]
    EmptyTruthSet(usize),
    #[error("sample {0} has a non-finite score")]
    NonFiniteScore(usize),
    #[error("label {label} at sample {index} exceeds the {n_labels} score columns")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        n_labels: usize,
    },
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean recall over the classes that occur in `truth`.
pub fn uar(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), truth.len())?;
    let mut support = vec![0usize; n_classes];
    let mut hits = vec![0usize; n_classes];
    for (index, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if t >= n_classes {
            return Err(MetricsError::ClassOutOfRange {
                index,
                class: t,
                n_classes,
            });
        }
        support[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let recalls: Vec<f64> = support
        .iter()
        .zip(&hits)
        .filter(|(&s, _)| s > 0)
        .map(|(&s, &h)| h as f64 / s as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Label-ranking average precision of each sample.
///
/// For a true label `l`, precision is the number of true labels scoring at
/// least `score(l)` divided by the number of all labels scoring at least
/// `score(l)`. Ties are resolved pessimistically, i.e. a tie counts as ranked
/// above.
pub fn lrap_per_sample(
    scores: ArrayView2<'_, f64>,
    truth: &[Vec<usize>],
) -> Result<Vec<f64>, MetricsError> {
    check_lengths(scores.nrows(), truth.len())?;
    let n_labels = scores.ncols();
    let mut out = Vec::with_capacity(truth.len());
    let mut order: Vec<usize> = Vec::with_capacity(n_labels);
    let mut is_true = vec![false; n_labels];
    for (index, (row, labels)) in scores.rows().into_iter().zip(truth).enumerate() {
        if labels.is_empty() {
            return Err(MetricsError::EmptyTruthSet(index));
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore(index));
        }
        is_true.iter_mut().for_each(|b| *b = false);
        for &label in labels {
            if label >= n_labels {
                return Err(MetricsError::LabelOutOfRange {
                    index,
                    label,
                    n_labels,
                });
            }
            is_true[label] = true;
        }
        // Walk labels from the highest score down, one tie group at a time.
        order.clear();
        order.extend(0..n_labels);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let n_true = is_true.iter().filter(|&&b| b).count();
        let mut ranked = 0usize;
        let mut true_ranked = 0usize;
        let mut total = 0.0;
        let mut start = 0;
        while start < n_labels {
            let score = row[order[start]];
            let mut end = start;
            while end < n_labels && row[order[end]] == score {
                end += 1;
            }
            let group_true = order[start..end].iter().filter(|&&l| is_true[l]).count();
            ranked += end - start;
            true_ranked += group_true;
            total += group_true as f64 * true_ranked as f64 / ranked as f64;
            start = end;
        }
        out.push(total / n_true as f64);
    }
    Ok(out)
}

/// Mean sample LRAP, or with `weighted` each sample counts once per true label.
pub fn lrap(
    scores: ArrayView2<'_, f64>,
    truth: &[Vec<usize>],
    weighted: bool,
) -> Result<f64, MetricsError> {
    let per_sample = lrap_per_sample(scores, truth)?;
    if weighted {
        let weights: Vec<f64> = truth.iter().map(|t| t.len() as f64).collect();
        let num: f64 = per_sample.iter().zip(&weights).map(|(s, w)| s * w).sum();
        Ok(num / weights.iter().sum::<f64>())
    } else {
        Ok(per_sample.iter().sum::<f64>() / per_sample.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub statistic: f64,
    pub significant: bool,
    /// A correct, B wrong.
    pub b: usize,
    /// A wrong, B correct.
    pub c: usize,
}

impl McNemar {
    /// `(|b - c| - 1)^2 / (b + c)` against the chi-square(1) critical value at 0.01.
    pub fn from_counts(b: usize, c: usize) -> Self {
        if b + c == 0 {
            return Self {
                statistic: 0.0,
                significant: false,
                b,
                c,
            };
        }
        let diff = (b as f64 - c as f64).abs() - 1.0;
        let statistic = diff * diff / (b + c) as f64;
        Self {
            statistic,
            significant: statistic > MCNEMAR_CRITICAL_001,
            b,
            c,
        }
    }
}

/// Paired test on per-sample exact-match correctness of two systems.
pub fn mcnemar<T: PartialEq>(pred_a: &[T], pred_b: &[T], truth: &[T]) -> Result<McNemar, MetricsError> {
    if pred_a.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred_a.len(), truth.len()));
    }
    if pred_b.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred_b.len(), truth.len()));
    }
    let (mut b, mut c) = (0, 0);
    for ((a, bb), t) in pred_a.iter().zip(pred_b).zip(truth) {
        match (a == t, bb == t) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(McNemar::from_counts(b, c))
}

/// Metric names reported for a task, in column order.
pub fn metric_names(head: Head) -> &'static [&'static str] {
    match head {
        Head::MultiClass => &["accuracy", "uar"],
        Head::MultiLabel => &["lrap", "wlrap", "accuracy"],
    }
}

/// Primary metric of a task; the one improvements are measured in.
pub fn primary_metric(head: Head) -> &'static str {
    match head {
        Head::MultiClass => "accuracy",
        Head::MultiLabel => "wlrap",
    }
}

/// Every metric of [`metric_names`] for one set of predictions.
pub fn score_task(
    head: Head,
    probabilities: ArrayView2<'_, f64>,
    predicted: &[Label],
    truth: &[Label],
) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut out = BTreeMap::new();
    match head {
        Head::MultiClass => {
            let p: Vec<usize> = predicted.iter().map(|l| l.class().unwrap_or(usize::MAX)).collect();
            let t: Vec<usize> = truth.iter().map(|l| l.class().unwrap_or(usize::MAX)).collect();
            out.insert("accuracy".to_string(), accuracy(&p, &t)?);
            out.insert("uar".to_string(), uar(&p, &t, probabilities.ncols())?);
        }
        Head::MultiLabel => {
            let sets: Vec<Vec<usize>> = truth.iter().map(Label::active).collect();
            out.insert("lrap".to_string(), lrap(probabilities, &sets, false)?);
            out.insert("wlrap".to_string(), lrap(probabilities, &sets, true)?);
            out.insert("accuracy".to_string(), accuracy(predicted, truth)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]), Ok(1.0));
        assert_eq!(accuracy(&[0, 0], &[1, 1]), Ok(0.0));
        assert_eq!(accuracy(&[1, 2, 3, 0], &[1, 2, 3, 3]), Ok(0.75));
        assert_eq!(accuracy(&[1], &[1, 2]), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(accuracy::<usize>(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn uar_cases() {
        assert_eq!(uar(&[0, 1, 2], &[0, 1, 2], 3), Ok(1.0));
        assert_eq!(uar(&[0, 1, 1, 1], &[0, 0, 1, 1], 2), Ok(0.75));
        // class 2 absent from truth is excluded
        assert_eq!(uar(&[0, 2], &[0, 1], 3), Ok(0.5));
        // balanced classes: uar = accuracy
        let (p, t) = ([0, 1, 1, 0, 2, 2], [0, 0, 1, 1, 2, 2]);
        assert!((uar(&p, &t, 3).unwrap() - accuracy(&p, &t).unwrap()).abs() < 1e-15);
        assert!(matches!(uar(&[0], &[3], 3), Err(MetricsError::ClassOutOfRange { .. })));
        assert_eq!(uar(&[], &[], 2), Err(MetricsError::Empty));
    }

    #[test]
    fn lrap_cases() {
        let s = array![[0.9, 0.1, 0.8], [0.2, 0.7, 0.3]];
        assert_eq!(lrap(s.view(), &[vec![0, 2], vec![1]], false), Ok(1.0));
        let s = array![[0.1, 0.9, 0.8]];
        assert!((lrap(s.view(), &[vec![0]], false).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // all tied: both true labels ranked "at" 3
        let s = array![[0.5, 0.5, 0.5]];
        assert!((lrap(s.view(), &[vec![0, 1]], false).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            lrap(s.view(), &[vec![]], true),
            Err(MetricsError::EmptyTruthSet(0))
        );
    }

    #[test]
    fn weighted_lrap_weights_by_label_count() {
        let s = array![[0.1, 0.9, 0.8], [0.9, 0.8, 0.1]];
        let truth = vec![vec![0], vec![0, 1]];
        // sample LRAPs 1/3 and 1
        assert!((lrap(s.view(), &truth, false).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((lrap(s.view(), &truth, true).unwrap() - (1.0 / 3.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mcnemar_hand_values() {
        let m = McNemar::from_counts(15, 5);
        assert!((m.statistic - 4.05).abs() < 1e-9);
        assert!(!m.significant);
        let m = McNemar::from_counts(20, 2);
        assert!((m.statistic - 289.0 / 22.0).abs() < 1e-9);
        assert!(m.significant);
        assert_eq!(McNemar::from_counts(0, 0).statistic, 0.0);
    }

    #[test]
    fn mcnemar_counts_discordant_pairs() {
        let truth = [0, 1, 2, 0, 1];
        let a = [0, 1, 0, 0, 0];
        let b = [0, 0, 2, 1, 0];
        let m = mcnemar(&a, &b, &truth).unwrap();
        assert_eq!((m.b, m.c), (2, 1));
        let same = mcnemar(&a, &a, &truth).unwrap();
        assert_eq!((same.b, same.c, same.significant), (0, 0, false));
        assert!(mcnemar(&a[..2], &b, &truth).is_err());
    }
}
