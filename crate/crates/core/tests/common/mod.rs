//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use spel::dsp::StftConfig;
use spel::harness::ExperimentConfig;
use spel::learner::{Label, LearnerParams};

/// Direct summation `X(m, k) = sum_n x[n] w[n - mR] exp(-2 pi j k n / N)` over full frames.
pub fn stft_direct(x: &[f64], config: &StftConfig) -> Array2<Complex64> {
    let n = config.n_fft;
    let win = config.window.coefficients(config.win_length);
    let frames = if x.len() < config.win_length {
        0
    } else {
        (x.len() - config.win_length) / config.hop + 1
    };
    let twiddle: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 / n as f64))
        .collect();
    let mut out = Array2::zeros((frames, n / 2 + 1));
    for m in 0..frames {
        let start = m * config.hop;
        for k in 0..=n / 2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (offset, &w) in win.iter().enumerate() {
                let t = start + offset;
                acc += twiddle[(k * t) % n] * (x[t] * w);
            }
            out[[m, k]] = acc;
        }
    }
    out
}

pub fn max_abs_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

/// Label-ranking average precision by explicit pairwise counting.
///
/// Unweighted: mean over samples of the mean precision of their true labels.
/// Weighted: mean over every (sample, true label) pair.
pub fn lrap_pairwise(scores: &Array2<f64>, truth: &[Vec<usize>], weighted: bool) -> f64 {
    let mut sample_means = Vec::new();
    let mut pairs = Vec::new();
    for (s, labels) in truth.iter().enumerate() {
        let row = scores.row(s);
        let mut precisions = Vec::new();
        for &l in labels {
            let mut rank = 0.0;
            let mut hits = 0.0;
            for j in 0..row.len() {
                if row[j] >= row[l] {
                    rank += 1.0;
                    if labels.contains(&j) {
                        hits += 1.0;
                    }
                }
            }
            precisions.push(hits / rank);
        }
        sample_means.push(precisions.iter().sum::<f64>() / precisions.len() as f64);
        pairs.extend(precisions);
    }
    let values = if weighted { pairs } else { sample_means };
    values.iter().sum::<f64>() / values.len() as f64
}

/// Random scores on a coarse grid so ties occur, plus 1 to 5 distinct true labels per row.
pub fn random_ranking_case<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> (Array2<f64>, Vec<Vec<usize>>) {
    let scores = Array2::from_shape_fn((rows, cols), |_| f64::from(rng.random_range(0..20u32)) / 19.0);
    let truth = (0..rows)
        .map(|_| {
            let count = rng.random_range(1..=5.min(cols));
            let mut labels: Vec<usize> = Vec::new();
            while labels.len() < count {
                let l = rng.random_range(0..cols);
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
            labels
        })
        .collect();
    (scores, truth)
}

/// Largest per-component relative error between the analytic gradient and
/// central differences with step `h`.
pub fn gradient_check(params: &LearnerParams, inputs: &[&[f64]], targets: &[Label], h: f64) -> f64 {
    let (_, grad) = params.loss_and_grad(inputs, targets).unwrap();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let original = probe.values()[i];
        probe.values_mut()[i] = original + h;
        let up = probe.loss(inputs, targets).unwrap();
        probe.values_mut()[i] = original - h;
        let down = probe.loss(inputs, targets).unwrap();
        probe.values_mut()[i] = original;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.values()[i];
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

/// Small synthetic experiment that trains in well under a second per round.
pub fn small_experiment() -> ExperimentConfig {
    let mut config = ExperimentConfig::synthetic_benchmark();
    config.name = "small".into();
    config.dsp.n_fft = 256;
    config.dsp.win_length = 256;
    config.dsp.hop = 128;
    config.dsp.n_mels = 32;
    config.synthetic.source_train = 120;
    config.synthetic.source_validation = 0;
    config.synthetic.source_test = 0;
    config.synthetic.target_unlabeled = 150;
    config.synthetic.target_test = 60;
    config.synthetic.duration_seconds = 0.125;
    config.spel.n = 3;
    config.spel.pretrain_epochs = 4;
    config.spel.batch_size = 16;
    config.learners[0].hidden_layers = vec![8];
    config
}

/// A random learner of at most `max_params` parameters with a random batch for it.
pub fn random_learner<R: Rng>(rng: &mut R, max_params: usize) -> (LearnerParams, Vec<Vec<f64>>, Vec<Label>) {
    use spel::learner::{Activation, ConvSpec, Head, LearnerSpec};
    loop {
        let head = if rng.random_bool(0.5) { Head::MultiClass } else { Head::MultiLabel };
        let n_outputs = rng.random_range(2..=5);
        let conv = rng.random_bool(0.3);
        let (rows, cols) = if conv { (rng.random_range(4..=7), rng.random_range(4..=7)) } else { (1, rng.random_range(2..=30)) };
        let conv_stem = if conv {
            vec![ConvSpec {
                channels: rng.random_range(1..=3),
                kernel: rng.random_range(2..=3),
                stride: rng.random_range(1..=2),
            }]
        } else {
            Vec::new()
        };
        let depth = rng.random_range(0..=2);
        let spec = LearnerSpec {
            input_shape: (rows, cols),
            conv_stem,
            hidden_layers: (0..depth).map(|_| rng.random_range(2..=24)).collect(),
            activation: if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh },
            n_outputs,
            head,
        };
        if spec.parameter_count().map_or(true, |p| p > max_params) {
            continue;
        }
        let params = LearnerParams::init(&spec, rng.random()).unwrap();
        let batch = rng.random_range(1..=6);
        let inputs: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets = (0..batch)
            .map(|_| match head {
                Head::MultiClass => Label::Class(rng.random_range(0..n_outputs)),
                Head::MultiLabel => Label::Multi((0..n_outputs).map(|_| rng.random_bool(0.4)).collect()),
            })
            .collect();
        return (params, inputs, targets);
    }
}
