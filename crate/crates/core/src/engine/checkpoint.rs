//! Per-round checkpoints.
//!
//! ```text
//! <root>/run.json                 config + learner specs the directory belongs to
//! <root>/round-000/member-00.bin  one file per member (see learner::write_member)
//! <root>/round-000/report.json
//! ```
//!
//! A round directory is written under a temporary name and renamed into place,
//! so a present `round-NNN` directory is always complete.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EngineError, RoundReport, SpelConfig};
use crate::ensemble::{Ensemble, Member};
use crate::learner::{read_member, write_member, LearnerSpec};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct RunFingerprint {
    config: SpelConfig,
    specs: Vec<LearnerSpec>,
}

#[derive(Debug, Clone)]
pub struct CheckpointStore {
    root: PathBuf,
}

fn ckpt_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Checkpoint(format!("{}: {e}", path.display()))
}

impl CheckpointStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn round_dir(&self, round: usize) -> PathBuf {
        self.root.join(format!("round-{round:03}"))
    }

    /// Ties the directory to one configuration; refuses to mix runs.
    pub fn bind(&self, config: &SpelConfig, specs: &[LearnerSpec]) -> Result<(), EngineError> {
        let path = self.root.join("run.json");
        let current = RunFingerprint {
            config: config.clone(),
            specs: specs.to_vec(),
        };
        if path.exists() {
            let stored: RunFingerprint = serde_json::from_reader(BufReader::new(File::open(&path)?))
                .map_err(|e| ckpt_err(&path, e))?;
            if stored != current {
                return Err(ckpt_err(&path, "directory belongs to a different configuration"));
            }
            return Ok(());
        }
        let json = serde_json::to_vec_pretty(&current).map_err(|e| ckpt_err(&path, e))?;
        fs::write(&path, json)?;
        Ok(())
    }

    pub fn save(&self, round: usize, ensemble: &Ensemble, report: &RoundReport) -> Result<(), EngineError> {
        let final_dir = self.round_dir(round);
        let tmp = tempfile::Builder::new()
            .prefix(&format!(".round-{round:03}-"))
            .tempdir_in(&self.root)?;
        for (i, member) in ensemble.members().iter().enumerate() {
            let file = File::create(tmp.path().join(format!("member-{i:02}.bin")))?;
            write_member(BufWriter::new(file), &member.params, &member.optimizer)?;
        }
        let report_path = tmp.path().join("report.json");
        let json = serde_json::to_vec_pretty(report).map_err(|e| ckpt_err(&report_path, e))?;
        fs::write(&report_path, json)?;
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir)?;
        }
        fs::rename(tmp.keep(), &final_dir)?;
        Ok(())
    }

    pub fn load(&self, round: usize) -> Result<Option<(Ensemble, RoundReport)>, EngineError> {
        let dir = self.round_dir(round);
        if !dir.is_dir() {
            return Ok(None);
        }
        let report_path = dir.join("report.json");
        let report: RoundReport = serde_json::from_reader(BufReader::new(File::open(&report_path)?))
            .map_err(|e| ckpt_err(&report_path, e))?;
        let mut members = Vec::new();
        for i in 0.. {
            let path = dir.join(format!("member-{i:02}.bin"));
            if !path.exists() {
                break;
            }
            let (params, optimizer) =
                read_member(BufReader::new(File::open(&path)?)).map_err(|e| ckpt_err(&path, e))?;
            members.push(Member { params, optimizer });
        }
        Ok(Some((Ensemble::new(members)?, report)))
    }

    /// Rounds with a complete checkpoint, ascending.
    pub fn rounds(&self) -> Result<Vec<usize>, EngineError> {
        let mut rounds = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            if let Some(n) = name.to_str().and_then(|s| s.strip_prefix("round-")) {
                if let Ok(r) = n.parse() {
                    rounds.push(r);
                }
            }
        }
        rounds.sort_unstable();
        Ok(rounds)
    }
}
