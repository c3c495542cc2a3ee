//! On-disk formats: prediction and truth CSVs, mel matrices, atomic writes.
//!
//! ```text
//! predictions.csv   id,score_0,score_1,...
//! truth.csv         id,labels        labels = active class indices joined by ';'
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::HarnessError;
use crate::engine::SampleId;
use crate::learner::{Head, Label};

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| HarnessError::Io(e.error))?;
    Ok(())
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Format(format!("{}: {e}", path.display()))
}

pub fn predictions_csv(ids: &[SampleId], scores: &Array2<f64>) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend((0..scores.ncols()).map(|c| format!("score_{c}")));
    w.write_record(&header).map_err(|e| HarnessError::Format(e.to_string()))?;
    for (id, row) in ids.iter().zip(scores.rows()) {
        let mut record = vec![id.0.to_string()];
        record.extend(row.iter().map(|v| format!("{v:.9}")));
        w.write_record(&record).map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))
}

pub fn truth_csv(ids: &[SampleId], labels: &[Label]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "labels"]).map_err(|e| HarnessError::Format(e.to_string()))?;
    for (id, label) in ids.iter().zip(labels) {
        let joined = label
            .active()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([id.0.to_string(), joined])
            .map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))
}

/// Mel image as CSV, one frame per line.
pub fn matrix_csv(values: &Array2<f64>) -> Vec<u8> {
    let mut out = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read_predictions(path: &Path) -> Result<(Vec<SampleId>, Array2<f64>), HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0) != Some("id") || headers.len() < 2 {
        return Err(csv_err(path, "expected header 'id,score_0,...'"));
    }
    let n_cols = headers.len() - 1;
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = line + 2;
        let id = record[0]
            .parse()
            .map_err(|e| csv_err(path, format!("line {row}: bad id: {e}")))?;
        ids.push(SampleId(id));
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|e| csv_err(path, format!("line {row}: bad score '{field}': {e}")))?;
            flat.push(v);
        }
    }
    let scores = Array2::from_shape_vec((ids.len(), n_cols), flat).map_err(|e| csv_err(path, e))?;
    Ok((ids, scores))
}

/// Active class indices per id.
pub fn read_truth(path: &Path) -> Result<Vec<(SampleId, Vec<usize>)>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "labels"] {
        return Err(csv_err(path, "expected header 'id,labels'"));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = line + 2;
        let id = record[0]
            .parse()
            .map_err(|e| csv_err(path, format!("line {row}: bad id: {e}")))?;
        let labels = record[1]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| csv_err(path, format!("line {row}: bad label: {e}")))?;
        out.push((SampleId(id), labels));
    }
    Ok(out)
}

/// Reorders prediction rows to follow the truth file's ids.
pub fn align(
    ids: &[SampleId],
    scores: &Array2<f64>,
    truth: &[(SampleId, Vec<usize>)],
) -> Result<Array2<f64>, HarnessError> {
    let index: HashMap<SampleId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    if index.len() != ids.len() {
        return Err(HarnessError::Format("duplicate ids in predictions".into()));
    }
    if truth.len() != ids.len() {
        return Err(HarnessError::Format(format!(
            "{} predictions for {} truth rows",
            ids.len(),
            truth.len()
        )));
    }
    let mut out = Array2::zeros((truth.len(), scores.ncols()));
    for (r, (id, _)) in truth.iter().enumerate() {
        let &i = index
            .get(id)
            .ok_or_else(|| HarnessError::Format(format!("no prediction for id {}", id.0)))?;
        out.row_mut(r).assign(&scores.row(i));
    }
    Ok(out)
}

/// Turns active-index lists into labels for `head`.
pub fn labels_from_indices(
    truth: &[(SampleId, Vec<usize>)],
    head: Head,
    n_outputs: usize,
) -> Result<Vec<Label>, HarnessError> {
    truth
        .iter()
        .map(|(id, active)| match head {
            Head::MultiClass => match active.as_slice() {
                [c] if *c < n_outputs => Ok(Label::Class(*c)),
                _ => Err(HarnessError::Format(format!(
                    "id {}: a multi-class truth row needs exactly one class below {n_outputs}",
                    id.0
                ))),
            },
            Head::MultiLabel => {
                let mut bits = vec![false; n_outputs];
                for &c in active {
                    if c >= n_outputs {
                        return Err(HarnessError::Format(format!(
                            "id {}: label {c} exceeds {n_outputs} score columns",
                            id.0
                        )));
                    }
                    bits[c] = true;
                }
                Ok(Label::Multi(bits))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let ids = [SampleId(4), SampleId(9)];
        let scores = array![[0.25, 0.75], [0.5, 0.5]];
        write_atomic(&path, &predictions_csv(&ids, &scores).unwrap()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,score_0,score_1\n4,0.250000000,0.750000000\n"));
        let (back_ids, back) = read_predictions(&path).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!(back, scores);
    }

    #[test]
    fn truth_round_trip_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let ids = [SampleId(1), SampleId(2)];
        let labels = [Label::Multi(vec![true, false, true]), Label::Multi(vec![false, true, false])];
        write_atomic(&path, &truth_csv(&ids, &labels).unwrap()).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "id,labels\n1,0;2\n2,1\n");
        let truth = read_truth(&path).unwrap();
        assert_eq!(labels_from_indices(&truth, Head::MultiLabel, 3).unwrap(), labels);
        assert!(labels_from_indices(&truth, Head::MultiClass, 3).is_err());

        let scores = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        let aligned = align(&[SampleId(2), SampleId(1)], &scores, &truth).unwrap();
        assert_eq!(aligned, array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        assert!(align(&[SampleId(2), SampleId(3)], &scores, &truth).is_err());
    }
}
