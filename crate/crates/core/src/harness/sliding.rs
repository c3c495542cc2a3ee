//! Test-time aggregation over overlapping windows of a long clip.

use ndarray::Array2;

use super::HarnessError;
use crate::dsp::{preprocess, Frontend, Signal};
use crate::ensemble::Ensemble;

/// Per-column maximum over rows.
pub fn max_over_windows(probabilities: &Array2<f64>) -> Vec<f64> {
    probabilities
        .columns()
        .into_iter()
        .map(|col| col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Window start offsets in samples; only windows that fit entirely.
pub fn window_starts(len: usize, window: usize, hop: usize) -> Vec<usize> {
    if window == 0 || hop == 0 || len < window {
        return Vec::new();
    }
    (0..=(len - window) / hop).map(|i| i * hop).collect()
}

/// Runs the ensemble on every window of `signal` and keeps each class's
/// maximum averaged probability.
pub fn sliding_window_predict(
    ensemble: &Ensemble,
    signal: &Signal,
    window_seconds: f64,
    hop_seconds: f64,
    frontend: &Frontend,
) -> Result<Vec<f64>, HarnessError> {
    let sr = f64::from(signal.sample_rate());
    let window = (window_seconds * sr).round() as usize;
    let hop = (hop_seconds * sr).round() as usize;
    if window == 0 || hop == 0 {
        return Err(HarnessError::Invalid(format!(
            "window {window_seconds} s and hop {hop_seconds} s must both span at least one sample"
        )));
    }
    if signal.len() < window {
        return Err(HarnessError::Invalid(format!(
            "signal has {} samples, shorter than one {window}-sample window",
            signal.len()
        )));
    }
    let images = window_starts(signal.len(), window, hop)
        .into_iter()
        .map(|start| {
            let clip = signal.slice(start, window)?;
            preprocess(&clip, &frontend.stft, &frontend.filterbank, window)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<&[f64]> = images.iter().map(|m| m.as_flat()).collect();
    let prediction = ensemble.avg_predict(&inputs)?;
    Ok(max_over_windows(&prediction.probabilities))
}
