//! Experiment configuration files.
//!
//! TOML with one section per concern. Every key has a default; an empty file
//! runs the default synthetic corpus through the full-size frontend (1024-point
//! FFT, hop 64, 512-sample window, 256 mel bands). Relative paths resolve
//! against the directory that holds the config file.
//!
//! ```toml
//! name = "benchmark"
//! task = "multi-class"          # or "multi-label"
//! source = "synthetic"          # or "wav-dir"
//! output_dir = "runs/benchmark"
//! checkpoints = false
//!
//! [data]                        # wav-dir splits
//! wav_dir = "corpus"
//! train_fraction = 0.7
//! validation_fraction = 0.15
//! test_fraction = 0.15
//! unlabeled_fraction = 0.5
//! validation_domain = "source"  # or "target"
//!
//! [dsp]
//! n_fft = 1024
//! hop = 64
//! win_length = 512
//! window = "hann"
//! n_mels = 256
//! # sample_rate / clip_seconds: synthetic spec values, else 16000 / 4.0
//!
//! [spel]
//! n = 5
//! k = 3
//! m = 50
//! learning_rate = 5e-4
//! pretrain_epochs = 70
//! batch_size = 16
//! seed = 0
//! pseudo_budget = 1000
//!
//! [[learners]]                  # one entry per member, or one shared entry
//! hidden_layers = [64]
//! activation = "relu"
//! conv_stem = [{ channels = 4, kernel = 3, stride = 2 }]
//!
//! [sweep]
//! m_values = [50, 100, 150, 200]
//! # k_max = 6
//!
//! [synthetic]                   # see SyntheticSpec
//! n_classes = 6
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synthetic::SyntheticSpec;
use super::HarnessError;
use crate::dsp::{Frontend, StftConfig, WindowKind};
use crate::engine::SpelConfig;
use crate::learner::{Activation, ConvSpec, Head, LearnerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    WavDir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationDomain {
    #[default]
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub wav_dir: Option<PathBuf>,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    /// Share of the target pool (or of the train split, single-domain) whose labels are dropped.
    pub unlabeled_fraction: f64,
    pub validation_domain: ValidationDomain,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            wav_dir: None,
            train_fraction: 0.7,
            validation_fraction: 0.15,
            test_fraction: 0.15,
            unlabeled_fraction: 0.5,
            validation_domain: ValidationDomain::Source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub window: WindowKind,
    pub n_mels: usize,
    pub sample_rate: Option<u32>,
    pub clip_seconds: Option<f64>,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 64,
            win_length: 512,
            window: WindowKind::Hann,
            n_mels: 256,
            sample_rate: None,
            clip_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerTemplate {
    pub conv_stem: Vec<ConvSpec>,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for LearnerTemplate {
    fn default() -> Self {
        Self {
            conv_stem: Vec::new(),
            hidden_layers: vec![64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub m_values: Vec<usize>,
    pub k_max: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m_values: vec![50, 100, 150, 200],
            k_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Head,
    pub source: DataSource,
    pub output_dir: PathBuf,
    pub checkpoints: bool,
    pub data: DataConfig,
    pub dsp: DspConfig,
    pub spel: SpelConfig,
    pub learners: Vec<LearnerTemplate>,
    pub sweep: SweepConfig,
    pub synthetic: SyntheticSpec,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            task: Head::MultiClass,
            source: DataSource::Synthetic,
            output_dir: PathBuf::from("runs/experiment"),
            checkpoints: false,
            data: DataConfig::default(),
            dsp: DspConfig::default(),
            spel: SpelConfig::default(),
            learners: vec![LearnerTemplate::default()],
            sweep: SweepConfig::default(),
            synthetic: SyntheticSpec::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// The desk-scale domain-shift benchmark: default synthetic corpus, a
    /// frontend sized for 0.25 s clips at 8 kHz, five one-hidden-layer learners.
    pub fn synthetic_benchmark() -> Self {
        Self {
            name: "synthetic-benchmark".into(),
            output_dir: PathBuf::from("runs/synthetic-benchmark"),
            dsp: DspConfig {
                n_fft: 1024,
                hop: 128,
                win_length: 1024,
                n_mels: 128,
                ..DspConfig::default()
            },
            spel: SpelConfig {
                pretrain_epochs: 20,
                ..SpelConfig::default()
            },
            learners: vec![LearnerTemplate {
                hidden_layers: vec![32],
                ..LearnerTemplate::default()
            }],
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            HarnessError::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Invalid(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Parse { line, message } => HarnessError::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.check_paths()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Invalid(e.to_string()))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Hex SHA-256 of the canonical JSON form (independent of file layout).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn sample_rate(&self) -> u32 {
        match self.source {
            DataSource::Synthetic => self.dsp.sample_rate.unwrap_or(self.synthetic.sample_rate),
            DataSource::WavDir => self.dsp.sample_rate.unwrap_or(16_000),
        }
    }

    pub fn clip_seconds(&self) -> f64 {
        match self.source {
            DataSource::Synthetic => self.dsp.clip_seconds.unwrap_or(self.synthetic.duration_seconds),
            DataSource::WavDir => self.dsp.clip_seconds.unwrap_or(4.0),
        }
    }

    pub fn stft(&self) -> Result<StftConfig, HarnessError> {
        Ok(StftConfig::new(
            self.dsp.n_fft,
            self.dsp.hop,
            self.dsp.win_length,
            self.dsp.window,
        )?)
    }

    pub fn frontend(&self) -> Result<Frontend, HarnessError> {
        Ok(Frontend::new(
            self.stft()?,
            self.dsp.n_mels,
            self.sample_rate(),
            self.clip_seconds(),
        )?)
    }

    /// One spec per member, shaped for this frontend and task.
    pub fn learner_specs(&self, n_classes: usize) -> Result<Vec<LearnerSpec>, HarnessError> {
        let frontend = self.frontend()?;
        let templates: Vec<&LearnerTemplate> = match self.learners.len() {
            1 => vec![&self.learners[0]; self.spel.n],
            n if n == self.spel.n => self.learners.iter().collect(),
            n => {
                return Err(HarnessError::Invalid(format!(
                    "{n} learner entries for an ensemble of {}; give 1 or {}",
                    self.spel.n, self.spel.n
                )))
            }
        };
        templates
            .into_iter()
            .map(|t| {
                let spec = LearnerSpec {
                    input_shape: frontend.output_shape(),
                    conv_stem: t.conv_stem.clone(),
                    hidden_layers: t.hidden_layers.clone(),
                    activation: t.activation,
                    n_outputs: n_classes,
                    head: self.task,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::Invalid(m));
        self.spel.validate()?;
        self.stft()?;
        if self.dsp.n_mels == 0 {
            return invalid("dsp.n_mels must be positive".into());
        }
        if self.learners.is_empty() {
            return invalid("at least one [[learners]] entry is required".into());
        }
        if self.learners.len() != 1 && self.learners.len() != self.spel.n {
            return invalid(format!(
                "{} learner entries for an ensemble of {}; give 1 or {}",
                self.learners.len(),
                self.spel.n,
                self.spel.n
            ));
        }
        let d = &self.data;
        for (name, v) in [
            ("train_fraction", d.train_fraction),
            ("validation_fraction", d.validation_fraction),
            ("test_fraction", d.test_fraction),
            ("unlabeled_fraction", d.unlabeled_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("data.{name} = {v} is outside [0, 1]"));
            }
        }
        let total = d.train_fraction + d.validation_fraction + d.test_fraction;
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("split fractions sum to {total}, expected 1"));
        }
        match self.source {
            DataSource::Synthetic => {
                self.synthetic.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
                if (self.task == Head::MultiLabel) != self.synthetic.multi_label {
                    return invalid(format!(
                        "task {:?} needs synthetic.multi_label = {}",
                        self.task,
                        self.task == Head::MultiLabel
                    ));
                }
                if self.sample_rate() != self.synthetic.sample_rate {
                    return invalid(format!(
                        "dsp.sample_rate {} differs from synthetic.sample_rate {}",
                        self.sample_rate(),
                        self.synthetic.sample_rate
                    ));
                }
            }
            DataSource::WavDir => {
                if d.wav_dir.is_none() {
                    return invalid("source = \"wav-dir\" needs data.wav_dir".into());
                }
                if self.task == Head::MultiLabel {
                    return invalid("wav-dir corpora carry one class per file; use task = \"multi-class\"".into());
                }
            }
        }
        self.frontend()?;
        for m in &self.sweep.m_values {
            if *m == 0 {
                return invalid("sweep.m_values must be positive".into());
            }
        }
        Ok(())
    }

    fn check_paths(&self) -> Result<(), HarnessError> {
        if let (DataSource::WavDir, Some(dir)) = (self.source, &self.data.wav_dir) {
            let dir = self.resolve(dir);
            if !dir.is_dir() {
                return Err(HarnessError::Invalid(format!(
                    "data.wav_dir {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c.spel.batch_size, 16);
        assert_eq!(c.spel.learning_rate, 5e-4);
        assert_eq!((c.dsp.n_fft, c.dsp.hop, c.dsp.win_length, c.dsp.n_mels), (1024, 64, 512, 256));
        assert_eq!(c.sweep.m_values, vec![50, 100, 150, 200]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "name = \"x\"\n[spel]\nn = 5\nk = \"three\"\n";
        match ExperimentConfig::from_toml_str(text) {
            Err(HarnessError::Parse { line: Some(4), .. }) => {}
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_toml_str("[spel]\nbogus = 1\n") {
            Err(HarnessError::Parse { line: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors() {
        let bad_split = "[data]\ntrain_fraction = 0.8\n";
        assert!(matches!(ExperimentConfig::from_toml_str(bad_split), Err(HarnessError::Invalid(_))));
        let budget = "[spel]\nm = 200\nk = 6\n";
        assert!(ExperimentConfig::from_toml_str(budget).is_err());
        let learners = "[spel]\nn = 3\n[[learners]]\n[[learners]]\n";
        assert!(ExperimentConfig::from_toml_str(learners).is_err());
        let label_mismatch = "task = \"multi-label\"\n";
        assert!(ExperimentConfig::from_toml_str(label_mismatch).is_err());
    }

    #[test]
    fn missing_wav_dir_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "source = \"wav-dir\"\n[data]\nwav_dir = \"nope\"\n").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = ExperimentConfig::default();
        let text = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = ExperimentConfig {
            name: "other".into(),
            ..c.clone()
        };
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn shipped_benchmark_file_matches_constructor() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.toml");
        let mut loaded = ExperimentConfig::load(&path).unwrap();
        let built = ExperimentConfig::synthetic_benchmark();
        loaded.output_dir = built.output_dir.clone();
        loaded.base_dir = built.base_dir.clone();
        loaded.sweep = built.sweep.clone();
        assert_eq!(loaded, built);
        let defaults = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default-dsp.toml");
        ExperimentConfig::load(&defaults).unwrap();
    }

    #[test]
    fn learner_list_is_replicated() {
        let c = ExperimentConfig::default();
        let specs = c.learner_specs(6).unwrap();
        assert_eq!(specs.len(), 5);
        assert_eq!(specs[0].input_shape, c.frontend().unwrap().output_shape());
        assert_eq!(specs[0].input_shape.1, 256);
    }
}
