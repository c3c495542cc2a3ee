//! Uniform Bayesian model averaging over ensemble members.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::learner::{Head, Label, LearnerError, LearnerParams, OptimizerState};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("an ensemble needs at least one member")]
    Empty,
    #[error("member {index} has {found:?}/{found_outputs} outputs, expected {expected:?}/{expected_outputs}")]
    Incompatible {
        index: usize,
        expected: Head,
        expected_outputs: usize,
        found: Head,
        found_outputs: usize,
    },
    #[error("{0:?} is not a permutation of the {1} members")]
    BadPermutation(Vec<usize>, usize),
    #[error("member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: LearnerError,
    },
}

/// One trained model plus the optimizer state it continues training with.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub params: LearnerParams,
    pub optimizer: OptimizerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Member>,
    head: Head,
    n_outputs: usize,
}

/// Averaged probabilities with the derived hard labels and confidence scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub probabilities: Array2<f64>,
    pub labels: Vec<Label>,
    pub confidence: Vec<f64>,
}

impl EnsemblePrediction {
    /// Labels and confidences from already-averaged probability rows.
    ///
    /// Multi-class: argmax (lowest index on ties), confidence = max probability.
    /// Multi-label: each output `> 0.5`, confidence = mean of `|2p - 1|`.
    pub fn from_probabilities(probabilities: Array2<f64>, head: Head) -> Self {
        let mut labels = Vec::with_capacity(probabilities.nrows());
        let mut confidence = Vec::with_capacity(probabilities.nrows());
        for row in probabilities.rows() {
            match head {
                Head::MultiClass => {
                    let (best, p) = row
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, &p)| {
                            if p > bp {
                                (i, p)
                            } else {
                                (bi, bp)
                            }
                        });
                    labels.push(Label::Class(best));
                    confidence.push(p);
                }
                Head::MultiLabel => {
                    labels.push(Label::Multi(row.iter().map(|&p| p > 0.5).collect()));
                    let decisiveness: f64 = row.iter().map(|&p| (2.0 * p - 1.0).abs()).sum();
                    confidence.push(decisiveness / row.len() as f64);
                }
            }
        }
        Self {
            probabilities,
            labels,
            confidence,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Predicted class per sample (multi-class only).
    pub fn classes(&self) -> Option<Vec<usize>> {
        self.labels.iter().map(Label::class).collect()
    }
}

/// Running mean in member order; exact when all inputs agree.
pub fn average_probabilities(outputs: &[Array2<f64>]) -> Option<Array2<f64>> {
    let (first, rest) = outputs.split_first()?;
    let mut mean = first.clone();
    for (i, next) in rest.iter().enumerate() {
        let count = (i + 2) as f64;
        mean.zip_mut_with(next, |m, &x| *m += (x - *m) / count);
    }
    Some(mean)
}

impl Ensemble {
    pub fn new(members: Vec<Member>) -> Result<Self, EnsembleError> {
        let first = members.first().ok_or(EnsembleError::Empty)?;
        let head = first.params.spec().head;
        let n_outputs = first.params.spec().n_outputs;
        for (index, m) in members.iter().enumerate() {
            let spec = m.params.spec();
            if spec.head != head || spec.n_outputs != n_outputs {
                return Err(EnsembleError::Incompatible {
                    index,
                    expected: head,
                    expected_outputs: n_outputs,
                    found: spec.head,
                    found_outputs: spec.n_outputs,
                });
            }
        }
        Ok(Self {
            members,
            head,
            n_outputs,
        })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Member] {
        &mut self.members
    }

    pub fn into_members(self) -> Vec<Member> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Member probability outputs, evaluated in parallel, returned in member order.
    pub fn member_probabilities(&self, inputs: &[&[f64]]) -> Result<Vec<Array2<f64>>, EnsembleError> {
        self.members
            .par_iter()
            .enumerate()
            .map(|(index, m)| {
                m.params
                    .predict_proba(inputs)
                    .map_err(|source| EnsembleError::Member { index, source })
            })
            .collect()
    }

    /// Mean of the member posteriors, plus hard labels and confidences.
    pub fn avg_predict(&self, inputs: &[&[f64]]) -> Result<EnsemblePrediction, EnsembleError> {
        let outputs = self.member_probabilities(inputs)?;
        let mean = average_probabilities(&outputs).ok_or(EnsembleError::Empty)?;
        Ok(EnsemblePrediction::from_probabilities(mean, self.head))
    }

    /// Reorders members: position `i` of the result holds old member `permutation[i]`.
    pub fn permute_members(self, permutation: &[usize]) -> Result<Self, EnsembleError> {
        let n = self.members.len();
        let mut seen = vec![false; n];
        let valid = permutation.len() == n
            && permutation
                .iter()
                .all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
        if !valid {
            return Err(EnsembleError::BadPermutation(permutation.to_vec(), n));
        }
        let mut slots: Vec<Option<Member>> = self.members.into_iter().map(Some).collect();
        let members = permutation
            .iter()
            .map(|&i| slots[i].take().expect("validated permutation"))
            .collect();
        Ok(Self {
            members,
            head: self.head,
            n_outputs: self.n_outputs,
        })
    }
}
