//! Waveform to normalized mel-spectrogram images.
//!
//! The pipeline is `fix_length -> stft -> |.|^2 -> mel projection -> dB -> [-1, 1]`.
//! Every function here is pure; the same input always yields bitwise-identical
//! output.

mod mel;
mod stft;

pub use mel::{hz_to_mel, mel_to_hz, normalize_minmax, power_to_db, MelFilterbank};
pub use stft::{stft, ComplexSpectrum, StftConfig, WindowKind};

use ndarray::Array2;
use thiserror::Error;

/// Floor applied to power values before taking the logarithm.
pub const DEFAULT_EPS: f64 = 1e-10;
/// Dynamic range kept below the per-image maximum, in dB.
pub const DEFAULT_TOP_DB: f64 = 80.0;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("signal must contain at least one sample")]
    EmptySignal,
    #[error("signal sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("signal has {len} samples but the window needs {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidStft(String),
    #[error("invalid mel filterbank configuration: {0}")]
    InvalidFilterbank(String),
    #[error("power value {value} at ({row}, {col}) is negative or NaN")]
    NegativePower { row: usize, col: usize, value: f64 },
    #[error("filterbank expects {expected} frequency bins, spectrum has {found}")]
    BinMismatch { expected: usize, found: usize },
}

/// A finite discrete-time waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if samples.is_empty() {
            return Err(DspError::EmptySignal);
        }
        if sample_rate == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFiniteSample { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Contiguous sub-range of the signal.
    pub fn slice(&self, start: usize, len: usize) -> Result<Signal, DspError> {
        let end = start.saturating_add(len).min(self.samples.len());
        Signal::new(self.samples[start.min(end)..end].to_vec(), self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Pads with trailing zeros or center-crops to exactly `target_samples`.
///
/// When the excess is odd the extra sample is trimmed from the end.
pub fn fix_length(signal: &Signal, target_samples: usize) -> Signal {
    let len = signal.len();
    let samples = if len >= target_samples {
        let front = (len - target_samples) / 2;
        signal.samples[front..front + target_samples].to_vec()
    } else {
        let mut padded = Vec::with_capacity(target_samples);
        padded.extend_from_slice(&signal.samples);
        padded.resize(target_samples, 0.0);
        padded
    };
    // target 0 is outside the contract; keep the nonempty invariant anyway
    let samples = if samples.is_empty() { vec![0.0] } else { samples };
    Signal {
        samples,
        sample_rate: signal.sample_rate,
    }
}

/// Normalized log-mel image: `frames x n_mels`, every entry in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelImage {
    values: Array2<f64>,
    stft: StftConfig,
    n_mels: usize,
}

impl MelImage {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Row-major flat view, frame by frame.
    pub fn as_flat(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("mel images are always stored in standard layout")
    }
}

/// Full frontend for one clip.
pub fn preprocess(
    signal: &Signal,
    config: &StftConfig,
    filterbank: &MelFilterbank,
    target_samples: usize,
) -> Result<MelImage, DspError> {
    let fixed = fix_length(signal, target_samples);
    let spectrum = stft(&fixed, config)?;
    let power = spectrum.power();
    let mel = filterbank.apply(&power)?;
    let db = power_to_db(&mel, DEFAULT_EPS, DEFAULT_TOP_DB)?;
    let values = normalize_minmax(&db);
    Ok(MelImage {
        values: values.as_standard_layout().into_owned(),
        stft: config.clone(),
        n_mels: filterbank.n_mels(),
    })
}

/// Bundles everything needed to turn clips into model inputs.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub stft: StftConfig,
    pub filterbank: MelFilterbank,
    pub target_samples: usize,
}

impl Frontend {
    pub fn new(
        stft: StftConfig,
        n_mels: usize,
        sample_rate: u32,
        clip_seconds: f64,
    ) -> Result<Self, DspError> {
        let filterbank = MelFilterbank::new(
            n_mels,
            stft.n_fft,
            sample_rate,
            0.0,
            f64::from(sample_rate) / 2.0,
        )?;
        let target_samples = (clip_seconds * f64::from(sample_rate)).round() as usize;
        if target_samples < stft.win_length {
            return Err(DspError::TooShort {
                len: target_samples,
                needed: stft.win_length,
            });
        }
        Ok(Self {
            stft,
            filterbank,
            target_samples,
        })
    }

    pub fn process(&self, signal: &Signal) -> Result<MelImage, DspError> {
        preprocess(signal, &self.stft, &self.filterbank, self.target_samples)
    }

    /// `(frames, n_mels)` of every image this frontend produces.
    pub fn output_shape(&self) -> (usize, usize) {
        (
            self.stft.frame_count(self.target_samples),
            self.filterbank.n_mels(),
        )
    }
}
