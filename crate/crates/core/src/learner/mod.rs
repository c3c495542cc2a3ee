//! Compact gradient-trained classifiers.
//!
//! A learner is an optional stack of valid-padding 2D convolutions over the
//! `frames x mels` image, followed by fully connected hidden layers and a
//! softmax (multi-class) or per-output sigmoid (multi-label) head. All
//! parameters live in one flat `Vec<f64>` so the optimizer, finite-difference
//! checks and checkpoints treat every model the same way.

mod adam;
mod io;
mod network;
mod train;

pub use adam::OptimizerState;
pub use io::{read_member, write_member};
pub use network::{Gradients, LearnerParams};
pub use train::{train, EarlyStopping, TrainConfig, TrainSummary};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error("input {index} has {found} values, expected {expected}")]
    InputShape {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("target {index} does not fit a {head:?} head with {n_outputs} outputs")]
    Target {
        index: usize,
        head: Head,
        n_outputs: usize,
    },
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("gradient has {found} entries, parameters have {expected}")]
    GradientShape { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

/// Output head, which also fixes the task kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Softmax over classes, one label per sample.
    MultiClass,
    /// Independent sigmoid per output.
    MultiLabel,
}

/// Ground truth or pseudo-label for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Multi(Vec<bool>),
}

impl Label {
    /// Active class indices.
    pub fn active(&self) -> Vec<usize> {
        match self {
            Label::Class(c) => vec![*c],
            Label::Multi(bits) => bits
                .iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i))
                .collect(),
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Multi(_) => None,
        }
    }

    pub fn fits(&self, head: Head, n_outputs: usize) -> bool {
        match (self, head) {
            (Label::Class(c), Head::MultiClass) => *c < n_outputs,
            (Label::Multi(bits), Head::MultiLabel) => bits.len() == n_outputs,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    /// `(rows, cols)` of the input image; `(1, d)` for flat feature vectors.
    pub input_shape: (usize, usize),
    #[serde(default)]
    pub conv_stem: Vec<ConvSpec>,
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub n_outputs: usize,
    pub head: Head,
}

impl LearnerSpec {
    pub fn mlp(input_dim: usize, hidden: &[usize], n_outputs: usize, head: Head) -> Self {
        Self {
            input_shape: (1, input_dim),
            conv_stem: Vec::new(),
            hidden_layers: hidden.to_vec(),
            activation: Activation::Relu,
            n_outputs,
            head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        network::Layout::new(self).map(|_| ())
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> Result<usize, LearnerError> {
        network::Layout::new(self).map(|l| l.len)
    }
}
