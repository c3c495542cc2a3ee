//! Self-paced ensemble learning for audio classification.
//!
//! An ensemble of small gradient-trained classifiers is pre-trained on labeled
//! source-domain clips, then repeatedly fine-tuned on the target-domain clips it
//! labels most confidently. The crate covers the whole path: waveform ingestion,
//! the mel-spectrogram frontend, the learners, ensemble averaging, the
//! self-paced training loop, evaluation metrics and an experiment runner.

pub mod dsp;
pub mod learner;
pub mod engine;
pub mod harness;
pub mod ensemble;
pub mod metrics;
