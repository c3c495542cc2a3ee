//! End-to-end experiments: data preparation, the self-paced loop, per-round
//! metrics and result files.
//!
//! Output directory layout:
//!
//! ```text
//! rounds.csv                 one row per round 0..=k
//! predictions.csv            final ensemble, test split
//! baseline_predictions.csv   round-0 ensemble, test split
//! truth.csv                  test ground truth
//! summary.json               ResultsRecord
//! checkpoints/               only with `checkpoints = true`
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, ValidationDomain};
use super::files::{predictions_csv, truth_csv, write_atomic};
use super::synthetic::{gen_synthetic, LabeledClip, UnlabeledClip};
use super::wav::load_wav;
use super::HarnessError;
use crate::dsp::{Frontend, MelImage, Signal};
use crate::engine::{
    derive_seed, CheckpointStore, LabeledSet, RoundReport, SampleId, SpelData, SpelRunner, UnlabeledSet,
};
use crate::ensemble::{Ensemble, EnsemblePrediction};
use crate::learner::{Head, Label};
use crate::metrics::{self, McNemar};

const DATA_SEED: u64 = 0xDA7A;

/// Preprocessed splits. Test and pool truth live here, beside the engine's
/// label-free sets, and are only read for scoring.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub n_classes: usize,
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub validation: Option<LabeledSet>,
    pub test: UnlabeledSet,
    pub test_truth: Vec<Label>,
    /// Truth of the unlabeled pool when known (synthetic data); used to report pseudo-label accuracy.
    pub pool_truth: Option<HashMap<SampleId, Label>>,
    /// Labeled in-domain hold-out of the source data, when the source provides one.
    pub source_test: Option<LabeledSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub pseudo_count: usize,
    pub min_confidence: Option<f64>,
    /// Share of pseudo-labels that match the hidden truth.
    pub pseudo_accuracy: Option<f64>,
    pub validation: BTreeMap<String, f64>,
    pub test: BTreeMap<String, f64>,
    /// Primary test metric of this round minus that of round 0.
    pub improvement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub data_seconds: f64,
    pub spel_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub name: String,
    pub config_hash: String,
    pub task: Head,
    pub primary_metric: String,
    pub rounds: Vec<RoundRow>,
    pub baseline_test: BTreeMap<String, f64>,
    pub final_test: BTreeMap<String, f64>,
    /// Final ensemble (A) against the round-0 ensemble (B) on the test split.
    pub mcnemar: McNemar,
    pub timings: Timings,
}

/// Record plus the raw test predictions it was computed from.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub record: ResultsRecord,
    pub baseline: EnsemblePrediction,
    pub predictions: EnsemblePrediction,
    pub test_ids: Vec<SampleId>,
    pub test_truth: Vec<Label>,
}

fn process_all(frontend: &Frontend, signals: &[&Signal]) -> Result<Vec<MelImage>, HarnessError> {
    signals
        .par_iter()
        .map(|s| frontend.process(s).map_err(HarnessError::from))
        .collect()
}

fn labeled_set(frontend: &Frontend, clips: &[LabeledClip]) -> Result<LabeledSet, HarnessError> {
    let signals: Vec<&Signal> = clips.iter().map(|c| &c.signal).collect();
    Ok(LabeledSet::new(
        clips.iter().map(|c| c.id).collect(),
        process_all(frontend, &signals)?,
        clips.iter().map(|c| c.label.clone()).collect(),
    )?)
}

fn unlabeled_set(frontend: &Frontend, clips: &[UnlabeledClip]) -> Result<UnlabeledSet, HarnessError> {
    let signals: Vec<&Signal> = clips.iter().map(|c| &c.signal).collect();
    Ok(UnlabeledSet::new(
        clips.iter().map(|c| c.id).collect(),
        process_all(frontend, &signals)?,
    )?)
}

/// Test clips go to the engine without their labels.
fn strip(clips: &[LabeledClip]) -> Vec<UnlabeledClip> {
    clips
        .iter()
        .map(|c| UnlabeledClip {
            id: c.id,
            signal: c.signal.clone(),
        })
        .collect()
}

pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    match config.source {
        DataSource::Synthetic => prepare_synthetic(config),
        DataSource::WavDir => prepare_wav_dir(config),
    }
}

fn prepare_synthetic(config: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    let frontend = config.frontend()?;
    let corpus = gen_synthetic(&config.synthetic, derive_seed(config.spel.seed, &[DATA_SEED]))
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let validation_clips = match config.data.validation_domain {
        ValidationDomain::Source => &corpus.source_validation,
        ValidationDomain::Target => &corpus.target_validation,
    };
    let validation = if validation_clips.is_empty() {
        None
    } else {
        Some(labeled_set(&frontend, validation_clips)?)
    };
    let source_test = if corpus.source_test.is_empty() {
        None
    } else {
        Some(labeled_set(&frontend, &corpus.source_test)?)
    };
    Ok(PreparedData {
        n_classes: config.synthetic.n_classes,
        labeled: labeled_set(&frontend, &corpus.source_train)?,
        unlabeled: unlabeled_set(&frontend, &corpus.target_unlabeled)?,
        validation,
        test: unlabeled_set(&frontend, &strip(&corpus.target_test))?,
        test_truth: corpus.target_test.iter().map(|c| c.label.clone()).collect(),
        pool_truth: Some(corpus.hidden_truth().iter().cloned().collect()),
        source_test,
    })
}

/// `(class index, files)` for every class directory under `dir`, sorted by name.
fn class_dirs(dir: &Path) -> Result<Vec<(String, Vec<PathBuf>)>, HarnessError> {
    let mut classes = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let mut files: Vec<PathBuf> = fs::read_dir(entry.path())?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        classes.push((name, files));
    }
    classes.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(classes)
}

fn load_clips(
    files: &[(PathBuf, usize)],
    first_id: &mut u64,
    sample_rate: u32,
) -> Result<Vec<LabeledClip>, HarnessError> {
    let start = *first_id;
    *first_id += files.len() as u64;
    files
        .par_iter()
        .enumerate()
        .map(|(i, (path, class))| {
            let signal = load_wav(path).map_err(|e| HarnessError::Wav {
                path: path.clone(),
                source: e,
            })?;
            if signal.sample_rate() != sample_rate {
                return Err(HarnessError::Invalid(format!(
                    "{}: sample rate {} Hz, expected {sample_rate} Hz (no resampling)",
                    path.display(),
                    signal.sample_rate()
                )));
            }
            Ok(LabeledClip {
                id: SampleId(start + i as u64),
                signal,
                label: Label::Class(*class),
            })
        })
        .collect()
}

/// Splits every class's files by the given fractions (stratified), in shuffled order.
fn stratified(
    classes: &[(String, Vec<PathBuf>)],
    fractions: &[f64],
    seed: u64,
) -> Vec<Vec<(PathBuf, usize)>> {
    let mut parts = vec![Vec::new(); fractions.len()];
    for (class, (_, files)) in classes.iter().enumerate() {
        let mut files = files.clone();
        files.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class as u64])));
        let n = files.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (p, &f) in fractions.iter().enumerate() {
            cumulative += f;
            let end = if p + 1 == fractions.len() {
                n
            } else {
                ((cumulative * n as f64).round() as usize).min(n)
            };
            parts[p].extend(files[start..end.max(start)].iter().map(|f| (f.clone(), class)));
            start = end.max(start);
        }
    }
    parts
}

/// Two layouts are understood:
///
/// * `<dir>/source/<class>/*.wav` + `<dir>/target/<class>/*.wav`: all source
///   files are labeled training data (minus a validation share when validating
///   on the source domain); target files are split into test, optional
///   validation and the unlabeled pool.
/// * `<dir>/<class>/*.wav`: train/validation/test by the split fractions, then
///   `unlabeled_fraction` of the train split loses its labels.
fn prepare_wav_dir(config: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    let frontend = config.frontend()?;
    let dir = config.resolve(config.data.wav_dir.as_deref().expect("validated"));
    let sr = config.sample_rate();
    let d = &config.data;
    let seed = derive_seed(config.spel.seed, &[DATA_SEED]);
    let (source_dir, target_dir) = (dir.join("source"), dir.join("target"));
    let two_domain = source_dir.is_dir() && target_dir.is_dir();

    let mut next_id = 0u64;
    let (train, validation, test, pool, n_classes);
    if two_domain {
        let source = class_dirs(&source_dir)?;
        let target = class_dirs(&target_dir)?;
        let names = |c: &[(String, Vec<PathBuf>)]| c.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
        if names(&source) != names(&target) {
            return Err(HarnessError::Invalid(format!(
                "source classes {:?} differ from target classes {:?}",
                names(&source),
                names(&target)
            )));
        }
        n_classes = source.len();
        let (src_val_share, tgt_val_share) = match d.validation_domain {
            ValidationDomain::Source => (d.validation_fraction, 0.0),
            ValidationDomain::Target => (0.0, d.validation_fraction),
        };
        let src = stratified(&source, &[1.0 - src_val_share, src_val_share], seed);
        let pool_share = (1.0 - d.test_fraction - tgt_val_share).max(0.0);
        let tgt = stratified(&target, &[d.test_fraction, tgt_val_share, pool_share], seed ^ 1);
        train = load_clips(&src[0], &mut next_id, sr)?;
        let val_files = if src_val_share > 0.0 { &src[1] } else { &tgt[1] };
        validation = load_clips(val_files, &mut next_id, sr)?;
        test = load_clips(&tgt[0], &mut next_id, sr)?;
        pool = load_clips(&tgt[2], &mut next_id, sr)?;
    } else {
        let classes = class_dirs(&dir)?;
        n_classes = classes.len();
        let parts = stratified(
            &classes,
            &[d.train_fraction, d.validation_fraction, d.test_fraction],
            seed,
        );
        let mut train_files = parts[0].clone();
        train_files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 2));
        let n_pool = (d.unlabeled_fraction * train_files.len() as f64).round() as usize;
        let pool_files = train_files.split_off(train_files.len() - n_pool);
        train = load_clips(&train_files, &mut next_id, sr)?;
        validation = load_clips(&parts[1], &mut next_id, sr)?;
        test = load_clips(&parts[2], &mut next_id, sr)?;
        pool = load_clips(&pool_files, &mut next_id, sr)?;
    }
    if n_classes < 2 {
        return Err(HarnessError::Invalid(format!(
            "{} holds {n_classes} class directories, need at least 2",
            dir.display()
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(HarnessError::Invalid(format!(
            "{}: empty train or test split",
            dir.display()
        )));
    }
    let pool_truth = pool.iter().map(|c| (c.id, c.label.clone())).collect();
    Ok(PreparedData {
        n_classes,
        labeled: labeled_set(&frontend, &train)?,
        unlabeled: unlabeled_set(&frontend, &strip(&pool))?,
        validation: if validation.is_empty() {
            None
        } else {
            Some(labeled_set(&frontend, &validation)?)
        },
        test: unlabeled_set(&frontend, &strip(&test))?,
        test_truth: test.iter().map(|c| c.label.clone()).collect(),
        pool_truth: Some(pool_truth),
        source_test: None,
    })
}

fn pseudo_accuracy(report: &RoundReport, truth: Option<&HashMap<SampleId, Label>>) -> Option<f64> {
    let truth = truth?;
    if report.pseudo_ids.is_empty() {
        return None;
    }
    let hits = report
        .pseudo_ids
        .iter()
        .zip(&report.pseudo_labels)
        .filter(|(id, label)| truth.get(id) == Some(label))
        .count();
    Some(hits as f64 / report.pseudo_ids.len() as f64)
}

/// Runs the loop on already prepared data. No files are written.
pub fn run_prepared(config: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentOutput, HarnessError> {
    run_prepared_with(config, data, None, 0.0)
}

fn run_prepared_with(
    config: &ExperimentConfig,
    data: &PreparedData,
    store: Option<&CheckpointStore>,
    data_seconds: f64,
) -> Result<ExperimentOutput, HarnessError> {
    let started = Instant::now();
    let specs = config.learner_specs(data.n_classes)?;
    let head = config.task;
    let test_inputs = data.test.inputs();
    let mut rows: Vec<RoundRow> = Vec::with_capacity(config.spel.k + 1);
    let mut observer = |ensemble: &Ensemble, report: &RoundReport| -> Result<(), String> {
        let prediction = ensemble.avg_predict(&test_inputs).map_err(|e| e.to_string())?;
        let test = metrics::score_task(head, prediction.probabilities.view(), &prediction.labels, &data.test_truth)
            .map_err(|e| e.to_string())?;
        rows.push(RoundRow {
            round: report.round,
            pseudo_count: report.pseudo_count,
            min_confidence: report.min_confidence,
            pseudo_accuracy: pseudo_accuracy(report, data.pool_truth.as_ref()),
            validation: report.validation.clone(),
            test,
            improvement: 0.0,
        });
        Ok(())
    };
    let spel_data = SpelData {
        labeled: &data.labeled,
        unlabeled: &data.unlabeled,
        validation: data.validation.as_ref(),
        test: &data.test,
    };
    let mut runner = SpelRunner::new(&config.spel, &specs);
    if let Some(store) = store {
        runner = runner.with_checkpoints(store);
    }
    let outcome = runner.run(&spel_data, &mut observer)?;

    let primary = metrics::primary_metric(head);
    let base = rows[0].test[primary];
    for row in &mut rows {
        row.improvement = row.test[primary] - base;
    }
    let baseline_test = metrics::score_task(
        head,
        outcome.baseline.probabilities.view(),
        &outcome.baseline.labels,
        &data.test_truth,
    )?;
    let final_test = metrics::score_task(
        head,
        outcome.predictions.probabilities.view(),
        &outcome.predictions.labels,
        &data.test_truth,
    )?;
    let mcnemar = metrics::mcnemar(&outcome.predictions.labels, &outcome.baseline.labels, &data.test_truth)?;
    let spel_seconds = started.elapsed().as_secs_f64();
    let record = ResultsRecord {
        name: config.name.clone(),
        config_hash: config.hash(),
        task: head,
        primary_metric: primary.to_string(),
        rounds: rows,
        baseline_test,
        final_test,
        mcnemar,
        timings: Timings {
            data_seconds,
            spel_seconds,
            total_seconds: data_seconds + spel_seconds,
        },
    };
    Ok(ExperimentOutput {
        record,
        baseline: outcome.baseline,
        predictions: outcome.predictions,
        test_ids: data.test.ids().to_vec(),
        test_truth: data.test_truth.clone(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Column order: round, pseudo_count, min_confidence, pseudo_accuracy,
/// val_<metric>..., test_<metric>..., improvement.
pub fn rounds_csv(record: &ResultsRecord) -> String {
    let names = metrics::metric_names(record.task);
    let has_val = record.rounds.iter().any(|r| !r.validation.is_empty());
    let mut out = String::from("round,pseudo_count,min_confidence,pseudo_accuracy");
    if has_val {
        names.iter().for_each(|n| write!(out, ",val_{n}").unwrap());
    }
    names.iter().for_each(|n| write!(out, ",test_{n}").unwrap());
    out.push_str(",improvement\n");
    for row in &record.rounds {
        write!(
            out,
            "{},{},{},{}",
            row.round,
            row.pseudo_count,
            fmt_opt(row.min_confidence),
            fmt_opt(row.pseudo_accuracy)
        )
        .unwrap();
        if has_val {
            names
                .iter()
                .for_each(|n| write!(out, ",{}", fmt_opt(row.validation.get(*n).copied())).unwrap());
        }
        names
            .iter()
            .for_each(|n| write!(out, ",{}", fmt_opt(row.test.get(*n).copied())).unwrap());
        writeln!(out, ",{:.6}", row.improvement).unwrap();
    }
    out
}

pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("rounds.csv"), rounds_csv(&output.record).as_bytes())?;
    write_atomic(
        &dir.join("predictions.csv"),
        &predictions_csv(&output.test_ids, &output.predictions.probabilities)?,
    )?;
    write_atomic(
        &dir.join("baseline_predictions.csv"),
        &predictions_csv(&output.test_ids, &output.baseline.probabilities)?,
    )?;
    write_atomic(&dir.join("truth.csv"), &truth_csv(&output.test_ids, &output.test_truth)?)?;
    let json = serde_json::to_vec_pretty(&output.record).map_err(|e| HarnessError::Format(e.to_string()))?;
    write_atomic(&dir.join("summary.json"), &json)?;
    Ok(())
}

/// Prepares data, runs, and writes every result file into `config.output_path()`.
pub fn run_config(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let started = Instant::now();
    let data = prepare(config)?;
    let data_seconds = started.elapsed().as_secs_f64();
    run_and_write(config, &data, data_seconds)
}

fn run_and_write(config: &ExperimentConfig, data: &PreparedData, data_seconds: f64) -> Result<ExperimentOutput, HarnessError> {
    let dir = config.output_path();
    fs::create_dir_all(&dir)?;
    let store = if config.checkpoints {
        Some(CheckpointStore::open(dir.join("checkpoints"))?)
    } else {
        None
    };
    let output = run_prepared_with(config, data, store.as_ref(), data_seconds)?;
    write_outputs(&dir, &output)?;
    Ok(output)
}

pub fn run_experiment(config_path: impl AsRef<Path>) -> Result<ResultsRecord, HarnessError> {
    let config = ExperimentConfig::load(config_path)?;
    Ok(run_config(&config)?.record)
}

/// Every `(m, k)` with `k >= 1`, `m * k <= budget` and `k <= k_max`, ordered by `m` then `k`.
pub fn legal_grid(m_values: &[usize], budget: usize, k_max: Option<usize>) -> Vec<(usize, usize)> {
    let mut ms: Vec<usize> = m_values.iter().copied().filter(|&m| m > 0).collect();
    ms.sort_unstable();
    ms.dedup();
    let mut grid = Vec::new();
    for m in ms {
        let k_limit = (budget / m).min(k_max.unwrap_or(usize::MAX));
        grid.extend((1..=k_limit).map(|k| (m, k)));
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub m: usize,
    pub k: usize,
    pub directory: PathBuf,
    pub record: ResultsRecord,
}

/// `m,k,baseline,final,improvement,mcnemar_statistic,mcnemar_significant`
/// with the task's primary metric.
pub fn sweep_csv(entries: &[SweepEntry]) -> String {
    let mut out = String::from("m,k,baseline,final,improvement,mcnemar_statistic,mcnemar_significant\n");
    for e in entries {
        let primary = e.record.primary_metric.as_str();
        let base = e.record.baseline_test[primary];
        let fin = e.record.final_test[primary];
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            e.m,
            e.k,
            base,
            fin,
            fin - base,
            e.record.mcnemar.statistic,
            e.record.mcnemar.significant
        )
        .unwrap();
    }
    out
}

/// Per-round improvement curves of every sweep entry: `m,k,round,improvement`.
pub fn curves_csv(entries: &[SweepEntry]) -> String {
    let mut out = String::from("m,k,round,improvement\n");
    for e in entries {
        for row in &e.record.rounds {
            writeln!(out, "{},{},{},{:.6}", e.m, e.k, row.round, row.improvement).unwrap();
        }
    }
    out
}

/// Runs every legal `(m, k)` pair on one shared data preparation, each in
/// `<output_dir>/m<m>_k<k>/`, then writes `sweep.csv` and `curves.csv`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepEntry>, HarnessError> {
    let grid = legal_grid(&config.sweep.m_values, config.spel.pseudo_budget, config.sweep.k_max);
    if grid.is_empty() {
        return Err(HarnessError::Invalid("sweep grid is empty".into()));
    }
    let started = Instant::now();
    let data = prepare(config)?;
    let data_seconds = started.elapsed().as_secs_f64();
    let root = config.output_path();
    let mut entries = Vec::with_capacity(grid.len());
    for (m, k) in grid {
        let directory = PathBuf::from(format!("m{m}_k{k}"));
        let mut entry_config = config.clone();
        entry_config.spel.m = m;
        entry_config.spel.k = k;
        entry_config.name = format!("{}-m{m}-k{k}", config.name);
        entry_config.output_dir = root.join(&directory);
        let output = run_and_write(&entry_config, &data, data_seconds)?;
        entries.push(SweepEntry {
            m,
            k,
            directory,
            record: output.record,
        });
    }
    write_atomic(&root.join("sweep.csv"), sweep_csv(&entries).as_bytes())?;
    write_atomic(&root.join("curves.csv"), curves_csv(&entries).as_bytes())?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_m_grid() {
        let grid = legal_grid(&[50, 100, 150, 200], 1000, None);
        let expected: Vec<(usize, usize)> = [(50, 20), (100, 10), (150, 6), (200, 5)]
            .iter()
            .flat_map(|&(m, kmax)| (1..=kmax).map(move |k| (m, k)))
            .collect();
        assert_eq!(grid, expected);
        assert_eq!(grid.len(), 41);
        assert!(grid.iter().all(|&(m, k)| m * k <= 1000));
        assert_eq!(legal_grid(&[200, 50], 1000, Some(2)), vec![(50, 1), (50, 2), (200, 1), (200, 2)]);
    }
}
