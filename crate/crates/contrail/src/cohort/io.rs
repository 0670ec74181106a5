//! Cohort persistence: JSONL with one patient per line, plus the optional
//! feature-schema file mapping indices to names.

use super::{Cohort, PatientRecord, FEATURE_COUNT, VITAL_NAMES};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Load a JSONL cohort file. Malformed rows fail with their line number;
/// records violating an invariant are rejected by name.
pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut patients = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        record.validate().map_err(|e| match e {
            Error::Validation { id, msg } => Error::Validation {
                id,
                msg: format!("{msg} (line {})", i + 1),
            },
            other => other,
        })?;
        patients.push(record);
    }
    Ok(Cohort::new(patients))
}

/// Write a cohort as JSONL, one patient per line, in cohort order.
pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &cohort.patients {
        let line = serde_json::to_string(p).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Index-to-name mapping for the 63 longitudinal features.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        let mut names: Vec<String> = VITAL_NAMES.iter().map(|s| s.to_string()).collect();
        for i in names.len()..FEATURE_COUNT {
            names.push(format!("lab_{i:02}"));
        }
        FeatureSchema { names }
    }
}

impl FeatureSchema {
    pub fn name(&self, feature: usize) -> &str {
        &self.names[feature]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<usize, String> = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let mut schema = FeatureSchema::default();
        for (idx, name) in map {
            if idx >= FEATURE_COUNT {
                return Err(Error::config(format!(
                    "feature schema index {idx} out of range"
                )));
            }
            schema.names[idx] = name;
        }
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let map: BTreeMap<usize, &str> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.as_str()))
            .collect();
        let text = serde_json::to_string_pretty(&map).expect("schema serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Gender, Label, Measurement, Outcome, Race, StaticRaw, Task};

    pub(crate) fn sample_record(id: &str) -> PatientRecord {
        let mut outcomes = BTreeMap::new();
        outcomes.insert(
            Task::Mortality,
            Outcome {
                label: Label::Positive,
                event_time: Some(40.0),
            },
        );
        outcomes.insert(
            Task::Intubation,
            Outcome {
                label: Label::Negative,
                event_time: None,
            },
        );
        outcomes.insert(
            Task::IcuTransfer,
            Outcome {
                label: Label::Negative,
                event_time: None,
            },
        );
        PatientRecord {
            id: id.to_string(),
            admit: 0.0,
            end: 72.0,
            statics: StaticRaw {
                age: 61.0,
                gender: Gender::Female,
                race: Race::White,
                comorbidities: vec![0; 12],
            },
            timeline: vec![Measurement(1.5, 0, 88.0), Measurement(7.0, 10, 1.2)],
            outcomes,
        }
    }

    #[test]
    fn empty_file_gives_empty_cohort() {
        let dir = std::env::temp_dir().join("contrail_io_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let cohort = load_cohort(&path).unwrap();
        assert!(cohort.is_empty());
    }

    #[test]
    fn roundtrip_preserves_fields() {
        let dir = std::env::temp_dir().join("contrail_io_rt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("one.jsonl");
        let cohort = Cohort::new(vec![sample_record("p1")]);
        save_cohort(&cohort, &path).unwrap();
        let loaded = load_cohort(&path).unwrap();
        assert_eq!(loaded, cohort);
    }

    #[test]
    fn timestamp_before_admission_is_rejected_by_name() {
        let dir = std::env::temp_dir().join("contrail_io_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        let mut record = sample_record("p_bad");
        record.timeline.push(Measurement(-3.0, 2, 1.0));
        let line = serde_json::to_string(&record).unwrap();
        std::fs::write(&path, line).unwrap();
        let err = load_cohort(&path).unwrap_err();
        assert!(err.to_string().contains("p_bad"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let dir = std::env::temp_dir().join("contrail_io_malformed");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("malformed.jsonl");
        let good = serde_json::to_string(&sample_record("p1")).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        let err = load_cohort(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn default_schema_names_vitals_then_labs() {
        let schema = FeatureSchema::default();
        assert_eq!(schema.names.len(), FEATURE_COUNT);
        assert_eq!(schema.name(2), "pulse_oximetry");
        assert_eq!(schema.name(8), "lab_08");
    }
}
