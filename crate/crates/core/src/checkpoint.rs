//! JSON checkpoint container.
//!
//! Fields, in file order: `format`, `version`, `encoder` (vocab_size, dim,
//! hidden, num_labels), `hops`, `tau`, `labels`, `vocabulary` (id order,
//! `<unk>` first), then `params` with the flat row-major tensors
//! `embedding`, `null_sentence`, `w1`, `b1`, `w2`, `b2`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Vocabulary, UNK};
use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "faithsel-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A dataset whose token occurrences are unknown to the checkpoint beyond
/// this fraction is rejected as built for a different vocabulary.
pub const MAX_UNKNOWN_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderConfig,
    pub hops: usize,
    pub tau: f64,
    pub labels: Vec<String>,
    pub vocabulary: Vec<String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        params: ModelParams,
        hops: usize,
        tau: f64,
        labels: Vec<String>,
        vocabulary: &Vocabulary,
    ) -> Result<Self> {
        let ckpt = Self {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            encoder: params.config,
            hops,
            tau,
            labels,
            vocabulary: vocabulary.tokens().to_vec(),
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "not a checkpoint (format '{}')",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.encoder != self.params.config {
            return Err(Error::Shape(
                "checkpoint header disagrees with parameter config".into(),
            ));
        }
        self.params.validate()?;
        if self.vocabulary.len() != self.encoder.vocab_size
            || self.vocabulary.first().map(String::as_str) != Some(UNK)
        {
            return Err(Error::VocabMismatch(format!(
                "checkpoint lists {} vocabulary entries for vocab_size {}",
                self.vocabulary.len(),
                self.encoder.vocab_size
            )));
        }
        if self.labels.len() != self.encoder.num_labels {
            return Err(Error::Shape(format!(
                "{} label names for {} labels",
                self.labels.len(),
                self.encoder.num_labels
            )));
        }
        if !(1..=2).contains(&self.hops) {
            return Err(Error::UnsupportedHops(self.hops));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("invalid tau {}", self.tau)));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens(self.vocabulary.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Re-encodes `dataset` with the checkpoint vocabulary after checking
    /// that it uses the checkpoint's labels and mostly known tokens.
    pub fn attach(&self, dataset: Dataset) -> Result<Dataset> {
        if dataset.label_names != self.labels {
            return Err(Error::VocabMismatch(format!(
                "dataset labels {:?} differ from checkpoint labels {:?}",
                dataset.label_names, self.labels
            )));
        }
        let vocabulary = self.vocabulary();
        let fraction = unknown_fraction(&dataset, &vocabulary);
        if fraction > MAX_UNKNOWN_FRACTION {
            return Err(Error::VocabMismatch(format!(
                "{:.1}% of dataset tokens are unknown to the checkpoint vocabulary",
                100.0 * fraction
            )));
        }
        Ok(dataset.with_vocabulary(vocabulary))
    }
}

/// Fraction of query and sentence token occurrences mapped to `<unk>`.
pub fn unknown_fraction(dataset: &Dataset, vocabulary: &Vocabulary) -> f64 {
    let mut total = 0usize;
    let mut unknown = 0usize;
    for s in &dataset.samples {
        let tokens = s
            .query
            .iter()
            .chain(s.document.iter().flat_map(|x| x.tokens.iter()));
        for t in tokens {
            total += 1;
            unknown += usize::from(vocabulary.id(t) == 0);
        }
    }
    if total == 0 {
        0.0
    } else {
        unknown as f64 / total as f64
    }
}
