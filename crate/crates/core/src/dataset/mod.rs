//! Dataset ingestion, synthesis, and persistence.
//!
//! On-disk layout: a JSON manifest pointing at one delimited numeric table
//! per record (header row = lead labels, values in mV). Native WFDB parsing
//! is out of scope; external conversion to this layout is assumed.

pub mod bundle;
pub mod features;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal::EcgRecord;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingMode {
    OnThePerson,
    OffThePerson,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SessionEntry {
    pub session_index: u32,
    pub day_offset: u32,
    pub record_path: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub sessions: Vec<SessionEntry>,
}

/// The dataset manifest as stored on disk.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub sampling_rate: u32,
    pub lead_labels: Vec<String>,
    pub recording_mode: RecordingMode,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    fn validate(&self, path: &Path) -> Result<()> {
        let invalid = |reason: String| Error::ManifestInvalid {
            path: path.to_path_buf(),
            reason,
        };
        if self.format_version > MANIFEST_VERSION {
            return Err(Error::VersionUnsupported {
                path: path.to_path_buf(),
                found: self.format_version,
                supported: MANIFEST_VERSION,
            });
        }
        if self.lead_labels.is_empty() {
            return Err(invalid("no lead labels".into()));
        }
        if self.sampling_rate == 0 {
            return Err(invalid("sampling rate must be positive".into()));
        }
        for subject in &self.subjects {
            let mut last: Option<(u32, u32)> = None;
            for s in &subject.sessions {
                if let Some((idx, day)) = last {
                    if s.session_index <= idx {
                        return Err(invalid(format!(
                            "subject {}: session indices not ascending ({} after {})",
                            subject.subject_id, s.session_index, idx
                        )));
                    }
                    if s.day_offset < day {
                        return Err(invalid(format!(
                            "subject {}: day offsets decrease at session {}",
                            subject.subject_id, s.session_index
                        )));
                    }
                }
                last = Some((s.session_index, s.day_offset));
            }
        }
        Ok(())
    }
}

/// A fully loaded dataset; record order follows the manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub sampling_rate: u32,
    pub lead_labels: Vec<String>,
    pub recording_mode: RecordingMode,
    pub records: Vec<EcgRecord>,
}

impl Dataset {
    /// Subject ids in manifest order, deduplicated.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if out.last() != Some(&r.subject_id) && !out.contains(&r.subject_id) {
                out.push(r.subject_id.clone());
            }
        }
        out
    }
}

/// Loads and validates a dataset from its manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::ManifestInvalid {
            path: manifest_path.to_path_buf(),
            reason: e.to_string(),
        })?;
    manifest.validate(manifest_path)?;

    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    for subject in &manifest.subjects {
        for session in &subject.sessions {
            let path = base.join(&session.record_path);
            let samples = read_record_table(&path, manifest.lead_labels.len())?;
            let record = EcgRecord {
                subject_id: subject.subject_id.clone(),
                session_index: session.session_index,
                session_day_offset: session.day_offset,
                sampling_rate: manifest.sampling_rate,
                lead_labels: manifest.lead_labels.clone(),
                samples,
            };
            record.validate().map_err(|e| Error::RecordUnreadable {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            records.push(record);
        }
    }
    Ok(Dataset {
        name: manifest.name,
        sampling_rate: manifest.sampling_rate,
        lead_labels: manifest.lead_labels,
        recording_mode: manifest.recording_mode,
        records,
    })
}

/// Reads one record table: header row of lead labels, comma-separated mV
/// values, one column per lead.
fn read_record_table(path: &Path, expected_leads: usize) -> Result<Vec<Vec<f64>>> {
    let unreadable = |reason: String| Error::RecordUnreadable {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| unreadable("empty file".into()))?;
    let n_cols = header.split(',').count();
    if n_cols != expected_leads {
        return Err(Error::LeadMismatch {
            path: path.to_path_buf(),
            expected: expected_leads,
            actual: n_cols,
        });
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_cols];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            if col >= n_cols {
                return Err(Error::LeadMismatch {
                    path: path.to_path_buf(),
                    expected: n_cols,
                    actual: col + 1,
                });
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                unreadable(format!("line {}: bad number {:?}", lineno + 2, field))
            })?;
            columns[col].push(v);
            count = col + 1;
        }
        if count != n_cols {
            return Err(Error::LeadMismatch {
                path: path.to_path_buf(),
                expected: n_cols,
                actual: count,
            });
        }
    }
    if columns[0].is_empty() {
        return Err(unreadable("no samples".into()));
    }
    Ok(columns)
}

fn write_record_table(path: &Path, record: &EcgRecord) -> Result<()> {
    let mut out = String::new();
    out.push_str(&record.lead_labels.join(","));
    out.push('\n');
    let n = record.n_samples();
    for t in 0..n {
        for (lead, row) in record.samples.iter().enumerate() {
            if lead > 0 {
                out.push(',');
            }
            // Display for f64 round-trips exactly, keeping reruns
            // byte-identical.
            out.push_str(&format!("{}", row[t]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` under `dir` as `manifest.json` plus one CSV per record.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let records_dir = dir.join("records");
    fs::create_dir_all(&records_dir).map_err(|e| Error::io(&records_dir, e))?;

    let mut subjects: Vec<SubjectEntry> = Vec::new();
    for record in &dataset.records {
        let rel = format!(
            "records/{}_s{}.csv",
            record.subject_id, record.session_index
        );
        write_record_table(&dir.join(&rel), record)?;
        let entry = SessionEntry {
            session_index: record.session_index,
            day_offset: record.session_day_offset,
            record_path: rel,
        };
        match subjects.last_mut() {
            Some(s) if s.subject_id == record.subject_id => s.sessions.push(entry),
            _ => subjects.push(SubjectEntry {
                subject_id: record.subject_id.clone(),
                sessions: vec![entry],
            }),
        }
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        name: dataset.name.clone(),
        sampling_rate: dataset.sampling_rate,
        lead_labels: dataset.lead_labels.clone(),
        recording_mode: dataset.recording_mode,
        subjects,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use synth::{synthesize_dataset, SyntheticDatasetSpec};

    fn small_dataset() -> Dataset {
        let spec = SyntheticDatasetSpec {
            subjects: 2,
            sessions_per_subject: 2,
            leads: 2,
            duration_s: 8.0,
            sampling_rate: 500,
            seed: 4,
        };
        Dataset {
            name: "unit".into(),
            sampling_rate: 500,
            lead_labels: vec!["I".into(), "II".into()],
            recording_mode: RecordingMode::OnThePerson,
            records: synthesize_dataset(&spec)
                .unwrap()
                .into_iter()
                .map(|r| r.record)
                .collect(),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let manifest = save_dataset(dir.path(), &ds).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.records.len(), 4);
        assert_eq!(loaded.records[0].subject_id, "subj0000");
        assert_eq!(loaded.records[3].session_index, 2);
        for (a, b) in ds.records.iter().zip(&loaded.records) {
            assert_eq!(a.samples, b.samples, "samples round-trip bit-exact");
        }
    }

    #[test]
    fn missing_record_file_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let manifest = save_dataset(dir.path(), &ds).unwrap();
        fs::remove_file(dir.path().join("records/subj0001_s2.csv")).unwrap();
        match load_dataset(&manifest) {
            Err(Error::RecordUnreadable { path, .. }) => {
                assert!(path.to_string_lossy().contains("subj0001_s2"))
            }
            other => panic!("expected RecordUnreadable, got {other:?}"),
        }
    }

    #[test]
    fn lead_count_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let manifest_path = save_dataset(dir.path(), &ds).unwrap();
        // rewrite one record with a single column under a 2-lead manifest
        fs::write(
            dir.path().join("records/subj0000_s1.csv"),
            "I\n0.1\n0.2\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&manifest_path),
            Err(Error::LeadMismatch { expected: 2, actual: 1, .. })
        ));
    }

    #[test]
    fn manifest_session_order_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let manifest_path = save_dataset(dir.path(), &ds).unwrap();
        let text = fs::read_to_string(&manifest_path).unwrap();
        let mut m: DatasetManifest = serde_json::from_str(&text).unwrap();
        m.subjects[0].sessions.swap(0, 1);
        fs::write(&manifest_path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            load_dataset(&manifest_path),
            Err(Error::ManifestInvalid { .. })
        ));
    }
}
