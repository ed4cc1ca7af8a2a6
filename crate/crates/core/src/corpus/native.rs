//! Native JSON-lines corpus format.
//!
//! One object per line, fields in this order:
//! `id`, `query` (list of tokens), `answer` (optional list of tokens),
//! `sentences` (list of token lists), `label` (string), `rationales`
//! (list of sentence-index lists). Label ids are assigned by sorting the
//! distinct label strings unless an explicit label list is supplied.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Sentence, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeRecord {
    pub id: String,
    pub query: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Vec<String>>,
    pub sentences: Vec<Vec<String>>,
    pub label: String,
    #[serde(default)]
    pub rationales: Vec<Vec<usize>>,
}

fn to_tokens(raw: &[String], id: &str, what: &str) -> Result<Vec<Token>> {
    raw.iter()
        .map(|t| {
            Token::new(t).ok_or_else(|| Error::InvalidSample {
                id: id.to_owned(),
                reason: format!("invalid token {t:?} in {what}"),
            })
        })
        .collect()
}

impl NativeRecord {
    pub fn from_sample(sample: &Sample, label_names: &[String]) -> Self {
        let strs = |ts: &[Token]| ts.iter().map(|t| t.as_str().to_owned()).collect::<Vec<_>>();
        NativeRecord {
            id: sample.id.clone(),
            query: strs(&sample.query),
            answer: sample.answer.as_deref().map(strs),
            sentences: sample.document.iter().map(|s| strs(&s.tokens)).collect(),
            label: label_names[sample.label].clone(),
            rationales: sample
                .gold_rationales
                .iter()
                .map(|g| g.iter().copied().collect())
                .collect(),
        }
    }

    pub fn to_sample(&self, label_names: &[String]) -> Result<Sample> {
        let label = label_names
            .iter()
            .position(|l| *l == self.label)
            .ok_or_else(|| Error::UnknownLabel(self.label.clone()))?;
        let document = self
            .sentences
            .iter()
            .enumerate()
            .map(|(index, s)| {
                Ok(Sentence {
                    index,
                    tokens: to_tokens(s, &self.id, "sentence")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sample = Sample {
            id: self.id.clone(),
            query: to_tokens(&self.query, &self.id, "query")?,
            answer: self
                .answer
                .as_ref()
                .map(|a| to_tokens(a, &self.id, "answer"))
                .transpose()?,
            document,
            label,
            gold_rationales: self
                .rationales
                .iter()
                .map(|g| g.iter().copied().collect())
                .collect(),
        };
        sample.validate(label_names.len())?;
        Ok(sample)
    }
}

fn read_records(path: &Path) -> Result<Vec<NativeRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NativeRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), lineno + 1),
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Reads a native file, assigning label ids by sorted label string.
pub fn read_native(path: impl AsRef<Path>) -> Result<Dataset> {
    let records = read_records(path.as_ref())?;
    let labels: BTreeSet<&str> = records.iter().map(|r| r.label.as_str()).collect();
    let label_names: Vec<String> = labels.into_iter().map(str::to_owned).collect();
    build(records, label_names)
}

/// Reads a native file against a fixed label list (e.g. from a checkpoint).
pub fn read_native_with_labels(path: impl AsRef<Path>, label_names: &[String]) -> Result<Dataset> {
    let records = read_records(path.as_ref())?;
    build(records, label_names.to_vec())
}

fn build(records: Vec<NativeRecord>, label_names: Vec<String>) -> Result<Dataset> {
    let samples = records
        .iter()
        .map(|r| r.to_sample(&label_names))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, label_names)
}

pub fn write_native(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in &dataset.samples {
        let rec = NativeRecord::from_sample(s, &dataset.label_names);
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
