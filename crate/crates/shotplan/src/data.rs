//! Task samples and datasets.
//!
//! A [`Sample`] is one task instance (instruction, input, gold label) plus
//! a pool of labeled pairs that may be rendered into demonstrations for it.
//! Datasets load from line-delimited JSON, one record per line.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {0:?}: demonstration pool contains the sample itself")]
    PoolContainsSelf(String),
    #[error("sample {sample:?}: duplicate pool entry id {entry:?}")]
    DuplicatePoolId { sample: String, entry: String },
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One labeled pair available as demonstration material for a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub input: String,
    pub label: String,
}

/// One task instance together with its demonstration pool.
///
/// `difficulty` is ground truth visible only to the simulated response
/// model; the controller never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub instruction: String,
    pub input: String,
    pub label: String,
    #[serde(default)]
    pub pool: Vec<PoolEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
}

impl Sample {
    /// The prompt body P for this sample: instruction followed by input.
    pub fn base_text(&self) -> String {
        if self.instruction.is_empty() {
            self.input.clone()
        } else {
            format!("{}\n{}", self.instruction, self.input)
        }
    }
}

/// Wire format for one dataset line. Pool entries in files are bare
/// input/label pairs; ids are assigned positionally at load time.
#[derive(Debug, Deserialize)]
struct SampleRecord {
    id: String,
    instruction: String,
    input: String,
    label: String,
    #[serde(default)]
    pool: Vec<PoolPairRecord>,
    #[serde(default)]
    difficulty: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct PoolPairRecord {
    input: String,
    label: String,
}

#[derive(Serialize)]
struct SampleRecordRef<'a> {
    id: &'a str,
    instruction: &'a str,
    input: &'a str,
    label: &'a str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pool: Vec<PoolPairRef<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    difficulty: Option<f64>,
}

#[derive(Serialize)]
struct PoolPairRef<'a> {
    input: &'a str,
    label: &'a str,
}

/// A validated collection of samples with a derived label set.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    label_set: Vec<String>,
}

impl Dataset {
    /// Validates ids, pool contents, and derives the sorted label set from
    /// sample and pool labels.
    pub fn new(samples: Vec<Sample>) -> Result<Self, DataError> {
        let mut ids = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for sample in &samples {
            if !ids.insert(sample.id.clone()) {
                return Err(DataError::DuplicateId(sample.id.clone()));
            }
            labels.insert(sample.label.clone());
            let mut pool_ids = BTreeSet::new();
            for entry in &sample.pool {
                if entry.input == sample.input && entry.label == sample.label {
                    return Err(DataError::PoolContainsSelf(sample.id.clone()));
                }
                if !pool_ids.insert(entry.id.clone()) {
                    return Err(DataError::DuplicatePoolId {
                        sample: sample.id.clone(),
                        entry: entry.id.clone(),
                    });
                }
                labels.insert(entry.label.clone());
            }
        }
        Ok(Dataset {
            samples,
            label_set: labels.into_iter().collect(),
        })
    }

    pub fn from_jsonl_reader<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut samples = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line)
                .map_err(|source| DataError::Malformed { line: idx + 1, source })?;
            let pool = record
                .pool
                .into_iter()
                .enumerate()
                .map(|(i, pair)| PoolEntry {
                    id: format!("{}#{}", record.id, i),
                    input: pair.input,
                    label: pair.label,
                })
                .collect();
            samples.push(Sample {
                id: record.id,
                instruction: record.instruction,
                input: record.input,
                label: record.label,
                pool,
                difficulty: record.difficulty,
            });
        }
        Dataset::new(samples)
    }

    pub fn from_jsonl_path<P: AsRef<Path>>(path: P) -> Result<Self, DataError> {
        Self::from_jsonl_reader(File::open(path)?)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Sorted, deduplicated labels observed across samples and pools.
    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Writes the dataset in the wire format `from_jsonl_reader` accepts.
    /// Positional pool ids are dropped; loading reassigns them identically.
    pub fn to_jsonl_writer<W: Write>(&self, mut writer: W) -> Result<(), DataError> {
        for sample in &self.samples {
            let record = SampleRecordRef {
                id: &sample.id,
                instruction: &sample.instruction,
                input: &sample.input,
                label: &sample.label,
                pool: sample
                    .pool
                    .iter()
                    .map(|p| PoolPairRef { input: &p.input, label: &p.label })
                    .collect(),
                difficulty: sample.difficulty,
            };
            let line = serde_json::to_string(&record).expect("sample serializes");
            writer.write_all(line.as_bytes())?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_path<P: AsRef<Path>>(&self, path: P) -> Result<(), DataError> {
        self.to_jsonl_writer(File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, input: &str, label: &str) -> Sample {
        Sample {
            id: id.into(),
            instruction: "classify".into(),
            input: input.into(),
            label: label.into(),
            pool: vec![],
            difficulty: None,
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Dataset::new(vec![sample("a", "x", "yes"), sample("a", "y", "no")]);
        assert!(matches!(err, Err(DataError::DuplicateId(_))));
    }

    #[test]
    fn pool_must_not_contain_the_sample() {
        let mut s = sample("a", "x", "yes");
        s.pool.push(PoolEntry { id: "a#0".into(), input: "x".into(), label: "yes".into() });
        assert!(matches!(
            Dataset::new(vec![s]),
            Err(DataError::PoolContainsSelf(_))
        ));
    }

    #[test]
    fn label_set_is_sorted_union_of_sample_and_pool_labels() {
        let mut s = sample("a", "x", "yes");
        s.pool.push(PoolEntry { id: "a#0".into(), input: "w".into(), label: "maybe".into() });
        let ds = Dataset::new(vec![s, sample("b", "y", "no")]).unwrap();
        assert_eq!(ds.label_set(), ["maybe", "no", "yes"]);
    }

    #[test]
    fn jsonl_round_trip_assigns_pool_ids() {
        let text = concat!(
            r#"{"id":"s1","instruction":"i","input":"x","label":"yes","pool":[{"input":"p","label":"no"}],"difficulty":0.25}"#,
            "\n",
            r#"{"id":"s2","instruction":"i","input":"y","label":"no"}"#,
            "\n"
        );
        let ds = Dataset::from_jsonl_reader(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.get("s1").unwrap().pool[0].id, "s1#0");
        assert_eq!(ds.get("s1").unwrap().difficulty, Some(0.25));
        assert_eq!(ds.get("s2").unwrap().difficulty, None);
    }

    #[test]
    fn write_then_read_round_trips_samples_exactly() {
        let mut s = sample("a", "x", "yes");
        s.pool.push(PoolEntry { id: "a#0".into(), input: "w".into(), label: "no".into() });
        s.difficulty = Some(0.4);
        let ds = Dataset::new(vec![s, sample("b", "y", "no")]).unwrap();
        let mut buf = Vec::new();
        ds.to_jsonl_writer(&mut buf).unwrap();
        let back = Dataset::from_jsonl_reader(buf.as_slice()).unwrap();
        assert_eq!(back.samples(), ds.samples());
        assert_eq!(back.label_set(), ds.label_set());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"s1\",\"instruction\":\"i\",\"input\":\"x\",\"label\":\"y\"}\nnot json\n";
        match Dataset::from_jsonl_reader(text.as_bytes()) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }
}
