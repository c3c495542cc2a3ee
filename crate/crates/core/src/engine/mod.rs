//! The self-paced ensemble learning loop.
//!
//! 1. Every member is trained on the labeled source set.
//! 2. For rounds `j = 1..=k` the current ensemble labels the whole unlabeled
//!    target pool, the `m * j` most confident samples are taken with their
//!    hard pseudo-labels, and every member continues training on the source
//!    set plus that selection. The selection is rebuilt from scratch each
//!    round, so earlier picks can drop out or change label.
//! 3. The final ensemble predicts the test set.
//!
//! With `k = 0` this reduces to plain ensemble training.

mod checkpoint;

pub use checkpoint::CheckpointStore;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::MelImage;
use crate::ensemble::{Ensemble, EnsembleError, EnsemblePrediction, Member};
use crate::learner::{self, Label, LearnerError, LearnerParams, LearnerSpec, OptimizerState, TrainConfig};
use crate::metrics::{self, MetricsError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid SPEL configuration: {0}")]
    Config(String),
    #[error("expected {expected} learner specs, got {found}")]
    SpecCount { expected: usize, found: usize },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("{ids} ids for {samples} samples")]
    IdCount { ids: usize, samples: usize },
    #[error("{labels} labels for {samples} samples")]
    LabelCount { labels: usize, samples: usize },
    #[error("sample id {0:?} appears more than once")]
    DuplicateId(SampleId),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<EngineError>,
    },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("round observer failed: {0}")]
    Observer(String),
}

impl EngineError {
    fn in_round(self, round: usize) -> Self {
        match self {
            e @ EngineError::Round { .. } => e,
            e => EngineError::Round {
                round,
                source: Box::new(e),
            },
        }
    }
}

/// Stable identifier of a sample across every split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId(pub u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpelConfig {
    /// Ensemble size.
    pub n: usize,
    /// Number of self-paced rounds.
    pub k: usize,
    /// Pseudo-labeled samples added per round.
    pub m: usize,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    /// Epochs per self-paced round; defaults to `max(1, pretrain_epochs / k)`.
    pub spel_epochs: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// Upper bound on `m * k`.
    pub pseudo_budget: usize,
}

impl Default for SpelConfig {
    fn default() -> Self {
        Self {
            n: 5,
            k: 3,
            m: 50,
            learning_rate: 5e-4,
            pretrain_epochs: 70,
            spel_epochs: None,
            batch_size: 16,
            seed: 0,
            pseudo_budget: 1000,
        }
    }
}

impl SpelConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |msg: String| Err(EngineError::Config(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.m == 0 {
            return fail("m must be at least 1".into());
        }
        if self.m.saturating_mul(self.k) > self.pseudo_budget {
            return fail(format!(
                "m * k = {} exceeds the pseudo-label budget {}",
                self.m * self.k,
                self.pseudo_budget
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.pretrain_epochs == 0 {
            return fail("pretrain_epochs must be positive".into());
        }
        if self.spel_epochs == Some(0) {
            return fail("spel_epochs must be positive".into());
        }
        Ok(())
    }

    pub fn spel_epochs(&self) -> usize {
        self.spel_epochs
            .unwrap_or_else(|| (self.pretrain_epochs / self.k.max(1)).max(1))
    }
}

/// SplitMix64 over the base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

const SEED_INIT: u64 = 1;
const SEED_TRAIN: u64 = 2;

fn check_unique(ids: &[SampleId]) -> Result<(), EngineError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(*id) {
            return Err(EngineError::DuplicateId(*id));
        }
    }
    Ok(())
}

/// Source-domain samples with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    ids: Vec<SampleId>,
    images: Vec<MelImage>,
    labels: Vec<Label>,
}

impl LabeledSet {
    pub fn new(ids: Vec<SampleId>, images: Vec<MelImage>, labels: Vec<Label>) -> Result<Self, EngineError> {
        if ids.len() != images.len() {
            return Err(EngineError::IdCount {
                ids: ids.len(),
                samples: images.len(),
            });
        }
        if labels.len() != images.len() {
            return Err(EngineError::LabelCount {
                labels: labels.len(),
                samples: images.len(),
            });
        }
        check_unique(&ids)?;
        Ok(Self { ids, images, labels })
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn images(&self) -> &[MelImage] {
        &self.images
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.images.iter().map(MelImage::as_flat).collect()
    }
}

/// Target-domain samples. There is deliberately no place to put a label.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    ids: Vec<SampleId>,
    images: Vec<MelImage>,
}

impl UnlabeledSet {
    pub fn new(ids: Vec<SampleId>, images: Vec<MelImage>) -> Result<Self, EngineError> {
        if ids.len() != images.len() {
            return Err(EngineError::IdCount {
                ids: ids.len(),
                samples: images.len(),
            });
        }
        check_unique(&ids)?;
        Ok(Self { ids, images })
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn images(&self) -> &[MelImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.images.iter().map(MelImage::as_flat).collect()
    }
}

/// The confident slice of the unlabeled pool chosen in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSet {
    pub round: usize,
    pub ids: Vec<SampleId>,
    /// Positions of the selected samples inside the unlabeled set.
    pub positions: Vec<usize>,
    pub labels: Vec<Label>,
    /// Non-increasing.
    pub confidences: Vec<f64>,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub pseudo_count: usize,
    /// Training pool size `|X| + pseudo_count`.
    pub pool_size: usize,
    pub min_confidence: Option<f64>,
    pub pseudo_ids: Vec<SampleId>,
    pub pseudo_labels: Vec<Label>,
    /// Validation metrics of the ensemble after this round.
    pub validation: BTreeMap<String, f64>,
}

/// Everything the loop reads. Labels exist only on `labeled` and `validation`.
#[derive(Debug, Clone, Copy)]
pub struct SpelData<'a> {
    pub labeled: &'a LabeledSet,
    pub unlabeled: &'a UnlabeledSet,
    pub validation: Option<&'a LabeledSet>,
    pub test: &'a UnlabeledSet,
}

impl SpelData<'_> {
    /// No id may appear in two splits.
    pub fn check_disjoint(&self) -> Result<(), EngineError> {
        let mut all: Vec<SampleId> = Vec::new();
        all.extend_from_slice(self.labeled.ids());
        all.extend_from_slice(self.unlabeled.ids());
        if let Some(v) = self.validation {
            all.extend_from_slice(v.ids());
        }
        all.extend_from_slice(self.test.ids());
        check_unique(&all)
    }
}

/// Called once per finished round (round 0 is the pre-trained ensemble).
pub trait RoundObserver {
    fn observe(&mut self, ensemble: &Ensemble, report: &RoundReport) -> Result<(), String>;
}

impl RoundObserver for () {
    fn observe(&mut self, _: &Ensemble, _: &RoundReport) -> Result<(), String> {
        Ok(())
    }
}

impl<F> RoundObserver for F
where
    F: FnMut(&Ensemble, &RoundReport) -> Result<(), String>,
{
    fn observe(&mut self, ensemble: &Ensemble, report: &RoundReport) -> Result<(), String> {
        self(ensemble, report)
    }
}

#[derive(Debug, Clone)]
pub struct SpelOutcome {
    pub ensemble: Ensemble,
    /// Test predictions of the pre-trained ensemble (round 0).
    pub baseline: EnsemblePrediction,
    /// Test predictions after the last round.
    pub predictions: EnsemblePrediction,
    /// Rounds `0..=k`.
    pub reports: Vec<RoundReport>,
}

/// Stage 1: independent training of every member on the labeled set.
pub fn pretrain(config: &SpelConfig, labeled: &LabeledSet, specs: &[LearnerSpec]) -> Result<Ensemble, EngineError> {
    config.validate()?;
    if specs.len() != config.n {
        return Err(EngineError::SpecCount {
            expected: config.n,
            found: specs.len(),
        });
    }
    if labeled.is_empty() {
        return Err(EngineError::EmptySet("labeled"));
    }
    let inputs = labeled.inputs();
    let train_config = TrainConfig {
        epochs: config.pretrain_epochs,
        batch_size: config.batch_size,
    };
    let members = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut params = LearnerParams::init(spec, derive_seed(config.seed, &[SEED_INIT, i as u64]))?;
            let mut optimizer = OptimizerState::for_params(config.learning_rate, &params);
            learner::train(
                &mut params,
                &mut optimizer,
                &inputs,
                labeled.labels(),
                train_config,
                derive_seed(config.seed, &[SEED_TRAIN, 0, i as u64]),
                None,
            )?;
            Ok(Member { params, optimizer })
        })
        .collect::<Result<Vec<_>, LearnerError>>()?;
    Ok(Ensemble::new(members)?)
}

/// Scores the whole pool with the ensemble and keeps the `count` most confident.
///
/// Sorting is by confidence, descending; equal confidences keep the lower id first.
pub fn select_pseudo(ensemble: &Ensemble, unlabeled: &UnlabeledSet, count: usize) -> Result<PseudoSet, EngineError> {
    if unlabeled.is_empty() {
        return Err(EngineError::EmptySet("unlabeled"));
    }
    let prediction = ensemble.avg_predict(&unlabeled.inputs())?;
    Ok(select_from_prediction(&prediction, unlabeled.ids(), count))
}

pub(crate) fn select_from_prediction(prediction: &EnsemblePrediction, ids: &[SampleId], count: usize) -> PseudoSet {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        prediction.confidence[b]
            .total_cmp(&prediction.confidence[a])
            .then(ids[a].cmp(&ids[b]))
    });
    order.truncate(count.min(ids.len()));
    PseudoSet {
        round: 0,
        ids: order.iter().map(|&i| ids[i]).collect(),
        labels: order.iter().map(|&i| prediction.labels[i].clone()).collect(),
        confidences: order.iter().map(|&i| prediction.confidence[i]).collect(),
        positions: order,
    }
}

/// One self-paced round `j >= 1`: fresh selection of `m * j` pseudo-labels,
/// then `spel_epochs` of continued training for every member on labeled + pseudo.
pub fn spel_round(
    ensemble: Ensemble,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    round: usize,
    config: &SpelConfig,
) -> Result<(Ensemble, RoundReport), EngineError> {
    if round == 0 {
        return Err(EngineError::Config("self-paced rounds start at 1".into()));
    }
    let mut pseudo = select_pseudo(&ensemble, unlabeled, config.m.saturating_mul(round))?;
    pseudo.round = round;

    let mut inputs = labeled.inputs();
    let mut targets = labeled.labels().to_vec();
    let unlabeled_inputs = unlabeled.inputs();
    inputs.extend(pseudo.positions.iter().map(|&p| unlabeled_inputs[p]));
    targets.extend(pseudo.labels.iter().cloned());

    let train_config = TrainConfig {
        epochs: config.spel_epochs(),
        batch_size: config.batch_size,
    };
    let members = ensemble
        .into_members()
        .into_par_iter()
        .enumerate()
        .map(|(i, mut member)| {
            learner::train(
                &mut member.params,
                &mut member.optimizer,
                &inputs,
                &targets,
                train_config,
                derive_seed(config.seed, &[SEED_TRAIN, round as u64, i as u64]),
                None,
            )?;
            Ok(member)
        })
        .collect::<Result<Vec<_>, LearnerError>>()?;

    let report = RoundReport {
        round,
        pseudo_count: pseudo.len(),
        pool_size: inputs.len(),
        min_confidence: pseudo.confidences.last().copied(),
        pseudo_ids: pseudo.ids,
        pseudo_labels: pseudo.labels,
        validation: BTreeMap::new(),
    };
    Ok((Ensemble::new(members)?, report))
}

fn baseline_report(labeled: &LabeledSet) -> RoundReport {
    RoundReport {
        round: 0,
        pseudo_count: 0,
        pool_size: labeled.len(),
        min_confidence: None,
        pseudo_ids: Vec::new(),
        pseudo_labels: Vec::new(),
        validation: BTreeMap::new(),
    }
}

fn validate_round(ensemble: &Ensemble, validation: Option<&LabeledSet>) -> Result<BTreeMap<String, f64>, EngineError> {
    let Some(v) = validation else {
        return Ok(BTreeMap::new());
    };
    if v.is_empty() {
        return Ok(BTreeMap::new());
    }
    let prediction = ensemble.avg_predict(&v.inputs())?;
    Ok(metrics::score_task(
        ensemble.head(),
        prediction.probabilities.view(),
        &prediction.labels,
        v.labels(),
    )?)
}

/// Runs the full loop, optionally resuming from and writing to a checkpoint store.
#[derive(Debug, Clone)]
pub struct SpelRunner<'a> {
    config: &'a SpelConfig,
    specs: &'a [LearnerSpec],
    checkpoints: Option<&'a CheckpointStore>,
}

impl<'a> SpelRunner<'a> {
    pub fn new(config: &'a SpelConfig, specs: &'a [LearnerSpec]) -> Self {
        Self {
            config,
            specs,
            checkpoints: None,
        }
    }

    pub fn with_checkpoints(mut self, store: &'a CheckpointStore) -> Self {
        self.checkpoints = Some(store);
        self
    }

    pub fn run(&self, data: &SpelData<'_>, observer: &mut dyn RoundObserver) -> Result<SpelOutcome, EngineError> {
        let config = self.config;
        config.validate()?;
        if self.specs.len() != config.n {
            return Err(EngineError::SpecCount {
                expected: config.n,
                found: self.specs.len(),
            });
        }
        data.check_disjoint()?;
        if config.k > 0 && data.unlabeled.is_empty() {
            return Err(EngineError::EmptySet("unlabeled"));
        }
        if let Some(store) = self.checkpoints {
            store.bind(config, self.specs)?;
        }

        let mut reports = Vec::with_capacity(config.k + 1);
        let mut ensemble = None;
        let mut baseline = None;
        for round in 0..=config.k {
            let restored = match self.checkpoints {
                Some(store) => store.load(round)?,
                None => None,
            };
            let (current, report) = match restored {
                Some(saved) => saved,
                None => {
                    let result = if round == 0 {
                        pretrain(config, data.labeled, self.specs).map(|e| (e, baseline_report(data.labeled)))
                    } else {
                        let previous = ensemble.take().expect("round 0 always runs first");
                        spel_round(previous, data.labeled, data.unlabeled, round, config)
                    };
                    let (current, mut report) = result.map_err(|e| e.in_round(round))?;
                    report.validation = validate_round(&current, data.validation).map_err(|e| e.in_round(round))?;
                    if let Some(store) = self.checkpoints {
                        store.save(round, &current, &report)?;
                    }
                    (current, report)
                }
            };
            observer
                .observe(&current, &report)
                .map_err(|e| EngineError::Observer(e).in_round(round))?;
            if round == 0 {
                baseline = Some(current.avg_predict(&data.test.inputs())?);
            }
            reports.push(report);
            ensemble = Some(current);
        }
        let ensemble = ensemble.expect("at least round 0 ran");
        let baseline = baseline.expect("round 0 ran");
        let predictions = if config.k == 0 {
            baseline.clone()
        } else {
            ensemble.avg_predict(&data.test.inputs())?
        };
        Ok(SpelOutcome {
            ensemble,
            baseline,
            predictions,
            reports,
        })
    }
}

/// Stages 1 to 3 without checkpoints or observers.
pub fn run_spel(data: &SpelData<'_>, config: &SpelConfig, specs: &[LearnerSpec]) -> Result<SpelOutcome, EngineError> {
    SpelRunner::new(config, specs).run(data, &mut ())
}
