use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DspError, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 * (1 - cos(2 pi n / N))` over `win_length`.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 64,
            win_length: 512,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(
        n_fft: usize,
        hop: usize,
        win_length: usize,
        window: WindowKind,
    ) -> Result<Self, DspError> {
        let cfg = Self {
            n_fft,
            hop,
            win_length,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.hop == 0 {
            return Err(DspError::InvalidStft("hop must be positive".into()));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(DspError::InvalidStft(format!(
                "n_fft {} is not a power of two",
                self.n_fft
            )));
        }
        if !(self.hop <= self.win_length && self.win_length <= self.n_fft) {
            return Err(DspError::InvalidStft(format!(
                "need hop <= win_length <= n_fft, got {} / {} / {}",
                self.hop, self.win_length, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames that fit entirely inside a signal of `len` samples (0 if none).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.win_length {
            0
        } else {
            (len - self.win_length) / self.hop + 1
        }
    }
}

/// One-sided STFT: `frames x (n_fft / 2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    values: Array2<Complex64>,
    config: StftConfig,
}

impl ComplexSpectrum {
    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }

    /// Squared magnitude of every entry.
    pub fn power(&self) -> Array2<f64> {
        self.values.mapv(|c| c.norm_sqr())
    }
}

/// Short-time Fourier transform with the phase referenced to absolute sample time:
///
/// `X(m, k) = sum_n x[n] w[n - mR] exp(-2 pi j k n / N)`
///
/// Frames are placed at `mR` and must lie entirely inside the signal; the window
/// occupies the first `win_length` slots of each `n_fft` buffer.
pub fn stft(signal: &Signal, config: &StftConfig) -> Result<ComplexSpectrum, DspError> {
    config.validate()?;
    let x = signal.samples();
    let n_frames = config.frame_count(x.len());
    if n_frames == 0 {
        return Err(DspError::TooShort {
            len: x.len(),
            needed: config.win_length,
        });
    }
    let n_fft = config.n_fft;
    let n_bins = config.n_bins();
    let window = config.window.coefficients(config.win_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut values = Array2::<Complex64>::zeros((n_frames, n_bins));
    let mut buffer = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (frame, mut row) in values.rows_mut().into_iter().enumerate() {
        let start = frame * config.hop;
        for (slot, (&sample, &w)) in buffer
            .iter_mut()
            .zip(x[start..start + config.win_length].iter().zip(&window))
        {
            *slot = Complex64::new(sample * w, 0.0);
        }
        for slot in &mut buffer[config.win_length..] {
            *slot = Complex64::new(0.0, 0.0);
        }
        fft.process_with_scratch(&mut buffer, &mut scratch);
        // shift from frame-local to absolute time: multiply by exp(-2 pi j k start / N)
        let start_mod = start % n_fft;
        for (k, (out, &local)) in row.iter_mut().zip(&buffer[..n_bins]).enumerate() {
            let phase_index = (k * start_mod) % n_fft;
            let angle = -2.0 * PI * phase_index as f64 / n_fft as f64;
            *out = local * Complex64::from_polar(1.0, angle);
        }
    }
    Ok(ComplexSpectrum {
        values,
        config: config.clone(),
    })
}
