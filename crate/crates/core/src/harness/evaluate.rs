//! Scoring of prediction files against truth files.

use std::path::Path;

use super::files::{align, labels_from_indices, read_predictions, read_truth};
use super::HarnessError;
use crate::ensemble::EnsemblePrediction;
use crate::learner::{Head, Label};
use crate::metrics::{self, McNemar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Uar,
    Lrap,
    Wlrap,
}

struct Loaded {
    prediction: EnsemblePrediction,
    truth: Vec<Label>,
    truth_sets: Vec<Vec<usize>>,
}

fn load(predictions: &Path, truth: &Path, head: Head) -> Result<Loaded, HarnessError> {
    let (ids, scores) = read_predictions(predictions)?;
    let truth_rows = read_truth(truth)?;
    let scores = align(&ids, &scores, &truth_rows)?;
    let labels = labels_from_indices(&truth_rows, head, scores.ncols())?;
    Ok(Loaded {
        prediction: EnsemblePrediction::from_probabilities(scores, head),
        truth: labels,
        truth_sets: truth_rows.into_iter().map(|(_, s)| s).collect(),
    })
}

/// Hard labels come from argmax (multi-class) or a 0.5 threshold (multi-label).
pub fn evaluate_files(predictions: &Path, truth: &Path, metric: Metric, head: Head) -> Result<f64, HarnessError> {
    let l = load(predictions, truth, head)?;
    let scores = l.prediction.probabilities.view();
    Ok(match metric {
        Metric::Accuracy => metrics::accuracy(&l.prediction.labels, &l.truth)?,
        Metric::Uar => {
            if head != Head::MultiClass {
                return Err(HarnessError::Invalid("uar is defined for multi-class tasks only".into()));
            }
            let pred = l.prediction.classes().expect("multi-class labels");
            let truth: Vec<usize> = l.truth.iter().filter_map(Label::class).collect();
            metrics::uar(&pred, &truth, scores.ncols())?
        }
        Metric::Lrap => metrics::lrap(scores, &l.truth_sets, false)?,
        Metric::Wlrap => metrics::lrap(scores, &l.truth_sets, true)?,
    })
}

/// McNemar of system A against system B on exact-match correctness.
pub fn mcnemar_files(pred_a: &Path, pred_b: &Path, truth: &Path, head: Head) -> Result<McNemar, HarnessError> {
    let a = load(pred_a, truth, head)?;
    let b = load(pred_b, truth, head)?;
    Ok(metrics::mcnemar(&a.prediction.labels, &b.prediction.labels, &a.truth)?)
}
