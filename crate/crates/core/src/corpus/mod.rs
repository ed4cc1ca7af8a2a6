//! Data model for sentence-segmented classification samples.
//!
//! A [`Sample`] pairs a query with a document split into sentences. Gold
//! rationales are alternative sets of sentence indices; any one of them is
//! enough to justify the label.

mod eraser;
mod native;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eraser::import_eraser;
pub use native::{read_native, read_native_with_labels, write_native, NativeRecord};

/// One gold rationale: a set of sentence indices.
pub type Rationale = BTreeSet<usize>;

/// A lowercased, whitespace-free surface token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    /// Normalizes `raw` (lowercase). Returns `None` for empty or whitespace-bearing input.
    pub fn new(raw: &str) -> Option<Self> {
        if raw.is_empty() || raw.chars().any(char::is_whitespace) {
            return None;
        }
        Some(Token(raw.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercase and split on whitespace.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace().filter_map(Token::new).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub index: usize,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    /// Claim, or question followed by answer.
    pub query: Vec<Token>,
    /// Answer part alone, when the task has one (used by overlap features).
    pub answer: Option<Vec<Token>>,
    pub document: Vec<Sentence>,
    pub label: usize,
    pub gold_rationales: BTreeSet<Rationale>,
}

impl Sample {
    pub fn num_sentences(&self) -> usize {
        self.document.len()
    }

    /// Question tokens: the query minus its trailing answer part, if any.
    pub fn question(&self) -> &[Token] {
        match &self.answer {
            Some(a) if a.len() <= self.query.len() => &self.query[..self.query.len() - a.len()],
            _ => &self.query,
        }
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        let fail = |reason: String| Error::InvalidSample {
            id: self.id.clone(),
            reason,
        };
        if self.query.is_empty() {
            return Err(fail("empty query".into()));
        }
        if self.label >= num_labels {
            return Err(fail(format!(
                "label {} >= num_labels {num_labels}",
                self.label
            )));
        }
        for (i, s) in self.document.iter().enumerate() {
            if s.index != i {
                return Err(fail(format!(
                    "sentence at position {i} has index {}",
                    s.index
                )));
            }
            if s.tokens.is_empty() {
                return Err(fail(format!("sentence {i} is empty")));
            }
        }
        let n = self.document.len();
        for g in &self.gold_rationales {
            if let Some(&bad) = g.iter().find(|&&i| i >= n) {
                return Err(Error::SentenceOutOfRange {
                    record: self.id.clone(),
                    index: bad,
                    len: n,
                });
            }
        }
        Ok(())
    }
}

/// Split newline-separated text into sentences; blank lines are dropped.
pub fn segment_document(raw_text: &str) -> Vec<Sentence> {
    raw_text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(index, tokens)| Sentence { index, tokens })
        .collect()
}

pub const UNK: &str = "<unk>";

/// Dense token ids; id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary over every query and sentence token, in sorted order after `<unk>`.
    pub fn build(samples: &[Sample]) -> Self {
        let mut set = BTreeSet::new();
        for s in samples {
            set.extend(s.query.iter().map(Token::as_str));
            for sent in &s.document {
                set.extend(sent.tokens.iter().map(Token::as_str));
            }
        }
        Self::from_tokens(std::iter::once(UNK).chain(set).map(str::to_owned).collect())
    }

    /// `tokens[0]` must be `<unk>`.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &Token) -> u32 {
        self.index.get(token.as_str()).copied().unwrap_or(0)
    }

    pub fn encode_tokens(&self, tokens: &[Token]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode(&self, sample: &Sample) -> EncodedSample {
        EncodedSample {
            query: self.encode_tokens(&sample.query),
            sentences: sample
                .document
                .iter()
                .map(|s| self.encode_tokens(&s.tokens))
                .collect(),
        }
    }
}

/// Token ids of one sample, ready for an encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub query: Vec<u32>,
    pub sentences: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub label_names: Vec<String>,
    pub vocabulary: Vocabulary,
}

impl Dataset {
    /// Validates every sample and builds the vocabulary from `samples`.
    pub fn new(samples: Vec<Sample>, label_names: Vec<String>) -> Result<Self> {
        if label_names.is_empty() {
            return Err(Error::Config("at least one label is required".into()));
        }
        for s in &samples {
            s.validate(label_names.len())?;
        }
        let vocabulary = Vocabulary::build(&samples);
        Ok(Self {
            samples,
            label_names,
            vocabulary,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Replaces the vocabulary, e.g. with the one built on the training split.
    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = vocabulary;
        self
    }

    /// Keeps the samples at `indices` (in that order); the vocabulary is kept as is.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            label_names: self.label_names.clone(),
            vocabulary: self.vocabulary.clone(),
        }
    }

    pub fn encoded(&self) -> Vec<EncodedSample> {
        self.samples
            .iter()
            .map(|s| self.vocabulary.encode(s))
            .collect()
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == name)
    }
}

/// One rationale candidate: the sorted sentence indices paired with the query.
/// The empty candidate is the query-only input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Candidate(Vec<usize>);

impl Candidate {
    pub fn query_only() -> Self {
        Candidate(Vec::new())
    }

    pub fn single(i: usize) -> Self {
        Candidate(vec![i])
    }

    pub fn pair(a: usize, b: usize) -> Self {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        Candidate(vec![a, b])
    }

    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Candidate(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn is_query_only(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_set(&self) -> Rationale {
        self.0.iter().copied().collect()
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("{}");
        }
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub hops: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Candidate> {
        self.candidates.iter()
    }

    pub fn get(&self, i: usize) -> &Candidate {
        &self.candidates[i]
    }

    pub fn position(&self, candidate: &Candidate) -> Option<usize> {
        self.candidates.iter().position(|c| c == candidate)
    }

    /// Rationale-supervision targets: a candidate is positive iff it is a
    /// non-empty subset of some gold rationale. The query-only candidate is
    /// positive only if a gold rationale is explicitly empty.
    pub fn gold_mask(&self, gold: &BTreeSet<Rationale>) -> Vec<bool> {
        self.candidates
            .iter()
            .map(|c| {
                gold.iter().any(|g| {
                    if c.is_query_only() {
                        g.is_empty()
                    } else {
                        c.indices().iter().all(|i| g.contains(i))
                    }
                })
            })
            .collect()
    }
}

/// Candidates for a document of `n` sentences: the query-only candidate, then
/// singletons in document order, then (for `h = 2`) unordered pairs `{i, j}`,
/// `i < j`, in lexicographic order.
pub fn enumerate_candidates_n(n: usize, h: usize) -> Result<CandidateSet> {
    if !(1..=2).contains(&h) {
        return Err(Error::UnsupportedHops(h));
    }
    let mut candidates = Vec::with_capacity(
        n + 1
            + if h == 2 {
                n * n.saturating_sub(1) / 2
            } else {
                0
            },
    );
    candidates.push(Candidate::query_only());
    candidates.extend((0..n).map(Candidate::single));
    if h == 2 {
        for i in 0..n {
            for j in i + 1..n {
                candidates.push(Candidate::pair(i, j));
            }
        }
    }
    Ok(CandidateSet {
        hops: h,
        candidates,
    })
}

pub fn enumerate_candidates(sample: &Sample, h: usize) -> Result<CandidateSet> {
    enumerate_candidates_n(sample.num_sentences(), h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub annotated_samples: usize,
    pub mean_sentences: f64,
    pub rationales_per_sample: f64,
    /// Minimum gold-rationale cardinality -> number of samples.
    pub min_hops: BTreeMap<usize, usize>,
    pub label_counts: BTreeMap<String, usize>,
}

pub fn corpus_stats(dataset: &Dataset) -> CorpusStats {
    let n = dataset.samples.len();
    let mut min_hops = BTreeMap::new();
    let mut label_counts: BTreeMap<String, usize> =
        dataset.label_names.iter().map(|l| (l.clone(), 0)).collect();
    let mut rationales = 0usize;
    let mut sentences = 0usize;
    let mut annotated = 0usize;
    for s in &dataset.samples {
        rationales += s.gold_rationales.len();
        sentences += s.document.len();
        *label_counts
            .entry(dataset.label_names[s.label].clone())
            .or_default() += 1;
        if let Some(min) = s.gold_rationales.iter().map(BTreeSet::len).min() {
            annotated += 1;
            *min_hops.entry(min).or_default() += 1;
        }
    }
    let denom = n.max(1) as f64;
    CorpusStats {
        samples: n,
        annotated_samples: annotated,
        mean_sentences: sentences as f64 / denom,
        rationales_per_sample: rationales as f64 / denom,
        min_hops,
        label_counts,
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples\t{}", self.samples)?;
        writeln!(f, "annotated\t{}", self.annotated_samples)?;
        writeln!(f, "sentences/sample\t{:.2}", self.mean_sentences)?;
        writeln!(f, "rationales/sample\t{:.2}", self.rationales_per_sample)?;
        for (label, count) in &self.label_counts {
            writeln!(f, "label {label}\t{count}")?;
        }
        let total: usize = self.min_hops.values().sum();
        for (hops, count) in &self.min_hops {
            let name = match hops {
                0 => "Zero".to_string(),
                1 => "One".to_string(),
                2 => "Two".to_string(),
                k => format!("{k}"),
            };
            writeln!(
                f,
                "min hops {name}\t{count}\t{:.1}%",
                100.0 * *count as f64 / total.max(1) as f64
            )?;
        }
        Ok(())
    }
}
