//! Tone-classification corpora with a frequency-shift domain gap.
//!
//! Class `c` is a tone at `f_c`, built either from integer harmonics or, in
//! Shepard mode, from octave-spaced partials under a fixed log-frequency
//! envelope, which places the pitch classes on a circle. Source clips use
//! `f_c` with a small relative jitter and light noise; target clips scale the
//! fundamental by `target_shift_ratio`, add a Hz offset and heavier noise.
//! Multi-label clips mix several class tones.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::Signal;
use crate::engine::{derive_seed, SampleId};
use crate::learner::Label;

#[derive(Debug, Error, PartialEq)]
#[error("invalid synthetic spec: {0}")]
pub struct SyntheticError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    /// Mix 1..=`max_active` class tones per clip.
    pub multi_label: bool,
    pub max_active: usize,
    pub source_train: usize,
    pub source_validation: usize,
    pub source_test: usize,
    pub target_unlabeled: usize,
    pub target_validation: usize,
    pub target_test: usize,
    pub sample_rate: u32,
    pub duration_seconds: f64,
    /// Explicit per-class fundamentals; when empty, `base_frequency_hz * class_ratio^c`.
    pub class_frequencies_hz: Vec<f64>,
    pub base_frequency_hz: f64,
    pub class_ratio: f64,
    /// Relative amplitude of partial 1, 2, ...
    pub harmonics: Vec<f64>,
    /// Uniform relative jitter of the fundamental, both domains.
    pub frequency_jitter: f64,
    pub source_noise_std: f64,
    /// Octave-spaced partials under a fixed log-frequency envelope instead of
    /// integer harmonics. Pitch classes then sit on a circle with no edge class.
    pub shepard: bool,
    pub shepard_center_hz: f64,
    pub shepard_width_octaves: f64,
    /// Multiplicative fundamental shift of target clips.
    pub target_shift_ratio: f64,
    /// Mean fundamental offset of target clips.
    pub target_offset_hz: f64,
    /// Per-clip offset is uniform in `offset +- spread`.
    pub target_offset_spread_hz: f64,
    pub target_noise_std: f64,
}

impl Default for SyntheticSpec {
    /// Six pitch classes a whole tone apart on the octave circle; the target
    /// domain is 5% sharper and four times noisier.
    fn default() -> Self {
        Self {
            n_classes: 6,
            multi_label: false,
            max_active: 2,
            source_train: 1200,
            source_validation: 300,
            source_test: 300,
            target_unlabeled: 600,
            target_validation: 0,
            target_test: 600,
            sample_rate: 8000,
            duration_seconds: 0.25,
            class_frequencies_hz: Vec::new(),
            base_frequency_hz: 200.0,
            class_ratio: 2f64.powf(1.0 / 6.0),
            harmonics: vec![1.0, 0.5, 0.25],
            frequency_jitter: 0.02,
            source_noise_std: 0.05,
            shepard: true,
            shepard_center_hz: 800.0,
            shepard_width_octaves: 1.0,
            target_shift_ratio: 1.05,
            target_offset_hz: 0.0,
            target_offset_spread_hz: 0.0,
            target_noise_std: 0.25,
        }
    }
}

impl SyntheticSpec {
    pub fn class_frequencies(&self) -> Vec<f64> {
        if self.class_frequencies_hz.is_empty() {
            (0..self.n_classes)
                .map(|c| self.base_frequency_hz * self.class_ratio.powi(c as i32))
                .collect()
        } else {
            self.class_frequencies_hz.clone()
        }
    }

    pub fn clip_samples(&self) -> usize {
        (self.duration_seconds * f64::from(self.sample_rate)).round() as usize
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let fail = |m: String| Err(SyntheticError(m));
        if self.n_classes < 2 && !self.multi_label {
            return fail("a multi-class task needs at least 2 classes".into());
        }
        if self.n_classes == 0 {
            return fail("n_classes must be positive".into());
        }
        if self.multi_label && !(1..=self.n_classes).contains(&self.max_active) {
            return fail(format!("max_active {} must lie in 1..={}", self.max_active, self.n_classes));
        }
        if self.sample_rate == 0 || !(self.duration_seconds > 0.0) || self.clip_samples() == 0 {
            return fail("sample_rate and duration_seconds must be positive".into());
        }
        let freqs = self.class_frequencies();
        if freqs.len() != self.n_classes {
            return fail(format!(
                "{} class frequencies for {} classes",
                freqs.len(),
                self.n_classes
            ));
        }
        if freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return fail("class frequencies must be positive".into());
        }
        let mut sorted = freqs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail("class frequencies must be distinct".into());
        }
        if self.harmonics.is_empty() || self.harmonics.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return fail("harmonics must be a non-empty list of non-negative amplitudes".into());
        }
        for (name, v) in [
            ("source_noise_std", self.source_noise_std),
            ("target_noise_std", self.target_noise_std),
            ("frequency_jitter", self.frequency_jitter),
            ("target_offset_spread_hz", self.target_offset_spread_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.target_offset_hz.is_finite() {
            return fail("target_offset_hz must be finite".into());
        }
        if !(self.target_shift_ratio.is_finite() && self.target_shift_ratio > 0.0) {
            return fail("target_shift_ratio must be positive".into());
        }
        if self.shepard
            && !(self.shepard_center_hz > 0.0
                && self.shepard_center_hz.is_finite()
                && self.shepard_width_octaves > 0.0
                && self.shepard_width_octaves.is_finite())
        {
            return fail("shepard_center_hz and shepard_width_octaves must be positive".into());
        }
        let ratio_lo = self.target_shift_ratio.min(1.0);
        let ratio_hi = self.target_shift_ratio.max(1.0);
        let lowest = sorted[0] * (1.0 - self.frequency_jitter) * ratio_lo + self.target_offset_hz.min(0.0)
            - self.target_offset_spread_hz;
        if lowest <= 0.0 {
            return fail(format!("jitter and offset can push a fundamental to {lowest} Hz"));
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        let highest = sorted[sorted.len() - 1] * (1.0 + self.frequency_jitter) * ratio_hi
            + self.target_offset_hz.max(0.0)
            + self.target_offset_spread_hz;
        if highest >= nyquist {
            return fail(format!("fundamental can reach {highest} Hz, Nyquist is {nyquist} Hz"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub id: SampleId,
    pub signal: Signal,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledClip {
    pub id: SampleId,
    pub signal: Signal,
}

/// All splits of one synthetic corpus.
///
/// The truth of `target_unlabeled` is kept apart from the clips and is only
/// reachable through [`SyntheticCorpus::hidden_truth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub source_train: Vec<LabeledClip>,
    pub source_validation: Vec<LabeledClip>,
    pub source_test: Vec<LabeledClip>,
    pub target_unlabeled: Vec<UnlabeledClip>,
    pub target_validation: Vec<LabeledClip>,
    pub target_test: Vec<LabeledClip>,
    hidden_truth: Vec<(SampleId, Label)>,
}

impl SyntheticCorpus {
    /// Ground truth of the unlabeled pool, for evaluation only.
    pub fn hidden_truth(&self) -> &[(SampleId, Label)] {
        &self.hidden_truth
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Domain {
    Source,
    Target,
}

const SPLIT_SEEDS: [u64; 6] = [11, 12, 13, 21, 22, 23];

/// Deterministic in `(spec, seed)`; every clip has its own derived RNG stream.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus, SyntheticError> {
    spec.validate()?;
    let freqs = spec.class_frequencies();
    let splits = [
        (spec.source_train, Domain::Source),
        (spec.source_validation, Domain::Source),
        (spec.source_test, Domain::Source),
        (spec.target_unlabeled, Domain::Target),
        (spec.target_validation, Domain::Target),
        (spec.target_test, Domain::Target),
    ];
    let mut next_id = 0u64;
    let mut generated: Vec<Vec<LabeledClip>> = Vec::with_capacity(splits.len());
    for (split, &(count, domain)) in splits.iter().enumerate() {
        let first_id = next_id;
        next_id += count as u64;
        let clips = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SPLIT_SEEDS[split], i as u64]));
                let (signal, label) = render_clip(spec, &freqs, domain, i, &mut rng);
                LabeledClip {
                    id: SampleId(first_id + i as u64),
                    signal,
                    label,
                }
            })
            .collect();
        generated.push(clips);
    }
    let mut it = generated.into_iter();
    let mut next = || it.next().expect("six splits");
    let source_train = next();
    let source_validation = next();
    let source_test = next();
    let pool = next();
    let hidden_truth = pool.iter().map(|c| (c.id, c.label.clone())).collect();
    let target_unlabeled = pool
        .into_iter()
        .map(|c| UnlabeledClip {
            id: c.id,
            signal: c.signal,
        })
        .collect();
    Ok(SyntheticCorpus {
        source_train,
        source_validation,
        source_test,
        target_unlabeled,
        target_validation: next(),
        target_test: next(),
        hidden_truth,
    })
}

fn render_clip(
    spec: &SyntheticSpec,
    freqs: &[f64],
    domain: Domain,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> (Signal, Label) {
    let n_classes = spec.n_classes;
    let (active, label) = if spec.multi_label {
        let count = rng.random_range(1..=spec.max_active);
        let mut classes = sample(rng, n_classes, count).into_vec();
        classes.sort_unstable();
        let mut bits = vec![false; n_classes];
        classes.iter().for_each(|&c| bits[c] = true);
        (classes, Label::Multi(bits))
    } else {
        // balanced classes
        let c = index % n_classes;
        (vec![c], Label::Class(c))
    };

    let n = spec.clip_samples();
    let sr = f64::from(spec.sample_rate);
    let nyquist = sr / 2.0;
    let mut x = vec![0.0; n];
    let harmonic_sum: f64 = if spec.shepard {
        // envelope weights over octaves sum to about sqrt(2 pi) * width
        2.5 * spec.shepard_width_octaves
    } else {
        spec.harmonics.iter().sum::<f64>()
    }
    .max(f64::MIN_POSITIVE);
    let scale = 0.8 / (harmonic_sum * active.len() as f64);
    for &c in &active {
        let jitter = 1.0 + spec.frequency_jitter * rng.random_range(-1.0..=1.0);
        let (ratio, offset) = match domain {
            Domain::Source => (1.0, 0.0),
            Domain::Target => (
                spec.target_shift_ratio,
                spec.target_offset_hz + spec.target_offset_spread_hz * rng.random_range(-1.0..=1.0),
            ),
        };
        let f0 = freqs[c] * jitter * ratio + offset;
        let amplitude = scale * rng.random_range(0.5..=1.0);
        for (f, weight) in partials(spec, f0, nyquist) {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            if weight == 0.0 {
                continue;
            }
            let w = std::f64::consts::TAU * f / sr;
            for (t, v) in x.iter_mut().enumerate() {
                *v += amplitude * weight * (w * t as f64 + phase).sin();
            }
        }
    }
    let noise_std = match domain {
        Domain::Source => spec.source_noise_std,
        Domain::Target => spec.target_noise_std,
    };
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("validated std");
        for v in &mut x {
            *v += normal.sample(rng);
        }
    }
    let signal = Signal::new(x, spec.sample_rate).expect("finite samples at a positive rate");
    (signal, label)
}

/// `(frequency, amplitude)` of every partial below Nyquist.
fn partials(spec: &SyntheticSpec, f0: f64, nyquist: f64) -> Vec<(f64, f64)> {
    if spec.shepard {
        // fold f0 to the lowest octave above 20 Hz, then stack octaves
        let mut f = f0;
        while f / 2.0 >= 20.0 {
            f /= 2.0;
        }
        let mut out = Vec::new();
        while f < nyquist {
            let z = (f / spec.shepard_center_hz).log2() / spec.shepard_width_octaves;
            out.push((f, (-0.5 * z * z).exp()));
            f *= 2.0;
        }
        out
    } else {
        spec.harmonics
            .iter()
            .enumerate()
            .map(|(h, &w)| (f0 * (h + 1) as f64, w))
            .filter(|&(f, _)| f < nyquist)
            .collect()
    }
}
