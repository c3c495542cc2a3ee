use ndarray::Array2;

use super::DspError;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided FFT bins.
///
/// Filter centers are equally spaced on the mel axis from `mel(fmin)` to
/// `mel(fmax)` inclusive; each triangle falls to zero at its neighbours'
/// centers (one mel step beyond the ends for the outermost filters). Rows are
/// peak-normalized to 1. A filter narrower than the bin spacing that catches no
/// bin is assigned the single bin nearest its center.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    /// Nonzero column range `[start, end)` of every row.
    support: Vec<(usize, usize)>,
    centers_hz: Vec<f64>,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
}

impl MelFilterbank {
    pub fn new(
        n_mels: usize,
        n_fft: usize,
        sample_rate: u32,
        fmin: f64,
        fmax: f64,
    ) -> Result<Self, DspError> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if n_mels == 0 {
            return Err(DspError::InvalidFilterbank("n_mels must be positive".into()));
        }
        if n_fft < 2 {
            return Err(DspError::InvalidFilterbank("n_fft must be at least 2".into()));
        }
        if sample_rate == 0 {
            return Err(DspError::InvalidFilterbank("sample rate must be positive".into()));
        }
        if !(fmin >= 0.0 && fmin < fmax) {
            return Err(DspError::InvalidFilterbank(format!(
                "need 0 <= fmin < fmax, got {fmin} / {fmax}"
            )));
        }
        if fmax > nyquist {
            return Err(DspError::InvalidFilterbank(format!(
                "fmax {fmax} Hz exceeds the Nyquist frequency {nyquist} Hz"
            )));
        }

        let n_bins = n_fft / 2 + 1;
        let bin_hz = f64::from(sample_rate) / n_fft as f64;
        let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        // (left, center, right) edges in mel
        let edges: Vec<(f64, f64, f64)> = if n_mels == 1 {
            vec![(mel_lo, 0.5 * (mel_lo + mel_hi), mel_hi)]
        } else {
            let step = (mel_hi - mel_lo) / (n_mels - 1) as f64;
            (0..n_mels)
                .map(|i| {
                    let c = mel_lo + step * i as f64;
                    (c - step, c, c + step)
                })
                .collect()
        };

        let mut weights = Array2::<f64>::zeros((n_mels, n_bins));
        let mut support = Vec::with_capacity(n_mels);
        let mut centers_hz = Vec::with_capacity(n_mels);
        for (i, &(l, c, r)) in edges.iter().enumerate() {
            let (l, c, r) = (mel_to_hz(l), mel_to_hz(c), mel_to_hz(r));
            centers_hz.push(c);
            let mut row = weights.row_mut(i);
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let rising = (f - l) / (c - l);
                let falling = (r - f) / (r - c);
                *w = rising.min(falling).max(0.0);
            }
            let peak = row.iter().cloned().fold(0.0, f64::max);
            if peak > 0.0 {
                row.mapv_inplace(|w| w / peak);
            } else {
                let nearest = ((c / bin_hz).round() as usize).min(n_bins - 1);
                row[nearest] = 1.0;
            }
            let start = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let end = row.iter().rposition(|&w| w > 0.0).map_or(0, |e| e + 1);
            support.push((start, end));
        }

        Ok(Self {
            weights,
            support,
            centers_hz,
            n_fft,
            sample_rate,
            fmin,
            fmax,
        })
    }

    /// `n_mels x (n_fft / 2 + 1)`.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn fmin(&self) -> f64 {
        self.fmin
    }

    pub fn fmax(&self) -> f64 {
        self.fmax
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Projects a `frames x bins` power matrix onto the mel bands (`frames x n_mels`).
    pub fn apply(&self, power: &Array2<f64>) -> Result<Array2<f64>, DspError> {
        if power.ncols() != self.n_bins() {
            return Err(DspError::BinMismatch {
                expected: self.n_bins(),
                found: power.ncols(),
            });
        }
        let mut out = Array2::<f64>::zeros((power.nrows(), self.n_mels()));
        for (frame, mut out_row) in power.rows().into_iter().zip(out.rows_mut()) {
            for (band, &(start, end)) in self.support.iter().enumerate() {
                let w = self.weights.row(band);
                let mut acc = 0.0;
                for k in start..end {
                    acc += w[k] * frame[k];
                }
                out_row[band] = acc;
            }
        }
        Ok(out)
    }
}

/// `10 log10(max(p, eps))`, then clipped from below at `max - top_db`.
pub fn power_to_db(power: &Array2<f64>, eps: f64, top_db: f64) -> Result<Array2<f64>, DspError> {
    if let Some(((row, col), &value)) = power.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(DspError::NegativePower { row, col, value });
    }
    let mut db = power.mapv(|p| 10.0 * p.max(eps).log10());
    let peak = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = peak - top_db;
    db.mapv_inplace(|v| v.max(floor));
    Ok(db)
}

/// Affine map of `[min, max]` onto `[-1, 1]`; a constant matrix maps to zeros.
pub fn normalize_minmax(matrix: &Array2<f64>) -> Array2<f64> {
    let (lo, hi) = matrix
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Array2::zeros(matrix.raw_dim());
    }
    matrix.mapv(|v| 2.0 * ((v - lo) / range) - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mel_formula() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn default_filterbank_shape_and_peaks() {
        let fb = MelFilterbank::new(256, 1024, 16_000, 0.0, 8000.0).unwrap();
        assert_eq!(fb.weights().dim(), (256, 513));
        for row in fb.weights().rows() {
            let peak = row.iter().cloned().fold(0.0, f64::max);
            assert_eq!(peak, 1.0);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
        assert!(fb.centers_hz().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn filterbank_covers_every_bin_in_range() {
        let fb = MelFilterbank::new(256, 1024, 16_000, 0.0, 8000.0).unwrap();
        let sums = fb.weights().sum_axis(ndarray::Axis(0));
        assert!(sums.iter().all(|&s| s > 0.0));

        let fb = MelFilterbank::new(40, 256, 8000, 300.0, 3000.0).unwrap();
        let sums = fb.weights().sum_axis(ndarray::Axis(0));
        for (k, s) in sums.iter().enumerate() {
            let f = k as f64 * 8000.0 / 256.0;
            if (300.0..=3000.0).contains(&f) {
                assert!(*s > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn filterbank_rejects_bad_ranges() {
        assert!(MelFilterbank::new(40, 512, 16_000, 0.0, 9000.0).is_err());
        assert!(MelFilterbank::new(40, 512, 16_000, 500.0, 500.0).is_err());
        assert!(MelFilterbank::new(0, 512, 16_000, 0.0, 8000.0).is_err());
    }

    #[test]
    fn single_band_filterbank() {
        let fb = MelFilterbank::new(1, 64, 8000, 0.0, 4000.0).unwrap();
        assert_eq!(fb.n_mels(), 1);
        assert_eq!(fb.weights().iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn sparse_apply_matches_dense_product() {
        let fb = MelFilterbank::new(64, 512, 16_000, 0.0, 8000.0).unwrap();
        let power = Array2::from_shape_fn((7, 257), |(i, j)| ((i * 31 + j * 7) % 13) as f64);
        let dense = power.dot(&fb.weights().t());
        let sparse = fb.apply(&power).unwrap();
        for (a, b) in dense.iter().zip(sparse.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn db_conversion() {
        let db = power_to_db(&array![[1.0, 100.0]], 1e-10, 80.0).unwrap();
        assert_eq!(db[[0, 0]], 0.0);
        assert!((db[[0, 1]] - 20.0).abs() < 1e-12);
        let db = power_to_db(&array![[1.0, 1e-12]], 1e-10, 80.0).unwrap();
        assert_eq!(db[[0, 0]], 0.0);
        assert!((db[[0, 1]] + 80.0).abs() < 1e-12);
        assert!(matches!(
            power_to_db(&array![[1.0, -0.5]], 1e-10, 80.0),
            Err(DspError::NegativePower { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn minmax_normalization() {
        assert_eq!(normalize_minmax(&array![[0.0, 5.0, 10.0]]), array![[-1.0, 0.0, 1.0]]);
        assert_eq!(normalize_minmax(&array![[-3.0, 1.0]]), array![[-1.0, 1.0]]);
        assert_eq!(normalize_minmax(&array![[4.2, 4.2], [4.2, 4.2]]), Array2::<f64>::zeros((2, 2)));
    }
}
