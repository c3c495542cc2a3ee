use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LearnerError, LearnerParams, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Stop when the held-out loss has not improved for `patience` epochs and
/// restore the best parameters seen.
#[derive(Debug, Clone, Copy)]
pub struct EarlyStopping<'a> {
    pub patience: usize,
    pub inputs: &'a [&'a [f64]],
    pub targets: &'a [Label],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSummary {
    /// Mean mini-batch loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub updates: usize,
    pub stopped_early: bool,
}

/// Shuffled mini-batch Adam for `config.epochs` full passes.
///
/// The shuffle order depends only on `seed`, so the whole run is a pure
/// function of its arguments. The optimizer state is updated in place so a
/// later call continues from where this one stopped.
pub fn train(
    params: &mut LearnerParams,
    optimizer: &mut OptimizerState,
    inputs: &[&[f64]],
    targets: &[Label],
    config: TrainConfig,
    seed: u64,
    early_stopping: Option<EarlyStopping<'_>>,
) -> Result<TrainSummary, LearnerError> {
    if inputs.len() != targets.len() {
        return Err(LearnerError::LengthMismatch {
            inputs: inputs.len(),
            targets: targets.len(),
        });
    }
    if inputs.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(LearnerError::ZeroBatch);
    }
    let mut summary = TrainSummary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut best: Option<(f64, LearnerParams)> = None;
    let mut stale = 0;

    let mut batch_inputs = Vec::with_capacity(config.batch_size);
    let mut batch_targets = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            batch_inputs.clear();
            batch_targets.clear();
            for &i in chunk {
                batch_inputs.push(inputs[i]);
                batch_targets.push(targets[i].clone());
            }
            let (loss, grad) = params.loss_and_grad(&batch_inputs, &batch_targets)?;
            optimizer.step(params, &grad)?;
            total += loss;
            batches += 1;
            summary.updates += 1;
        }
        summary.epoch_losses.push(total / batches as f64);

        if let Some(es) = &early_stopping {
            let held_out = params.loss(es.inputs, es.targets)?;
            match &best {
                Some((b, _)) if held_out >= *b => {
                    stale += 1;
                    if stale >= es.patience {
                        summary.stopped_early = true;
                        break;
                    }
                }
                _ => {
                    best = Some((held_out, params.clone()));
                    stale = 0;
                }
            }
        }
    }
    if summary.stopped_early {
        if let Some((_, best_params)) = best {
            *params = best_params;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::super::{Head, LearnerSpec};
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let centre = if class == 0 { -1.5 } else { 1.5 };
            x.push(vec![centre + noise.sample(&mut rng), -centre + noise.sample(&mut rng)]);
            y.push(Label::Class(class));
        }
        (x, y)
    }

    fn accuracy(p: &LearnerParams, x: &[&[f64]], y: &[Label]) -> f64 {
        let probs = p.predict_proba(x).unwrap();
        let hits = probs
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(row, t)| {
                let pred = if row[0] >= row[1] { 0 } else { 1 };
                Label::Class(pred) == **t
            })
            .count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (x, y) = separable(20, 1);
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let mut p = LearnerParams::init(&LearnerSpec::mlp(2, &[4], 2, Head::MultiClass), 0).unwrap();
        let before = p.clone();
        let mut opt = OptimizerState::for_params(1e-2, &p);
        let s = train(&mut p, &mut opt, &rows, &y, TrainConfig { epochs: 0, batch_size: 4 }, 0, None).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.updates, 0);
    }

    #[test]
    fn learns_a_separable_toy_set() {
        let (x, y) = separable(100, 2);
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let mut p = LearnerParams::init(&LearnerSpec::mlp(2, &[], 2, Head::MultiClass), 3).unwrap();
        let mut opt = OptimizerState::for_params(1e-2, &p);
        train(&mut p, &mut opt, &rows, &y, TrainConfig { epochs: 50, batch_size: 16 }, 4, None).unwrap();
        assert_eq!(accuracy(&p, &rows, &y), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = separable(60, 5);
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let spec = LearnerSpec::mlp(2, &[8], 2, Head::MultiClass);
        let run = || {
            let mut p = LearnerParams::init(&spec, 6).unwrap();
            let mut opt = OptimizerState::for_params(1e-3, &p);
            train(&mut p, &mut opt, &rows, &y, TrainConfig { epochs: 5, batch_size: 7 }, 9, None).unwrap();
            (p, opt)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn optimizer_state_carries_across_calls() {
        let (x, y) = separable(32, 7);
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let mut p = LearnerParams::init(&LearnerSpec::mlp(2, &[3], 2, Head::MultiClass), 1).unwrap();
        let mut opt = OptimizerState::for_params(1e-3, &p);
        let cfg = TrainConfig { epochs: 2, batch_size: 8 };
        train(&mut p, &mut opt, &rows, &y, cfg, 1, None).unwrap();
        train(&mut p, &mut opt, &rows, &y, cfg, 2, None).unwrap();
        assert_eq!(opt.t, 16);
        assert_eq!(p.step(), 16);
    }

    #[test]
    fn early_stopping_restores_best() {
        let (x, y) = separable(40, 8);
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        // held-out labels flipped: loss rises as training succeeds
        let flipped: Vec<Label> = y
            .iter()
            .map(|l| Label::Class(1 - l.class().unwrap()))
            .collect();
        let mut p = LearnerParams::init(&LearnerSpec::mlp(2, &[], 2, Head::MultiClass), 2).unwrap();
        let mut opt = OptimizerState::for_params(5e-2, &p);
        let es = EarlyStopping { patience: 2, inputs: &rows, targets: &flipped };
        let s = train(&mut p, &mut opt, &rows, &y, TrainConfig { epochs: 50, batch_size: 8 }, 3, Some(es)).unwrap();
        assert!(s.stopped_early);
        assert!(s.epoch_losses.len() < 50);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut p = LearnerParams::init(&LearnerSpec::mlp(2, &[], 2, Head::MultiClass), 2).unwrap();
        let mut opt = OptimizerState::for_params(1e-3, &p);
        assert!(matches!(
            train(&mut p, &mut opt, &[], &[], TrainConfig { epochs: 1, batch_size: 4 }, 0, None),
            Err(LearnerError::EmptyDataset)
        ));
    }
}
