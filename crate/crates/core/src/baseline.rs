//! Lexical-overlap baseline.
//!
//! Each sentence is scored `r = w_q * q_s + w_a * a_s`, where `q_s` and `a_s`
//! count the non-stopword question / answer types the sentence contains
//! (absolute) or the fraction of them (relative). The top sentence (shorter
//! wins ties, then lower index) yields the two features of a binary logistic
//! regression.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sample, Token};
use crate::error::{Error, Result};
use crate::metrics::target_metrics_from_labels;
use crate::stopwords::Stoplist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapFeatures {
    pub q_s: f64,
    pub a_s: f64,
    pub mode: OverlapMode,
}

impl OverlapFeatures {
    pub fn as_array(&self) -> [f64; 2] {
        [self.q_s, self.a_s]
    }
}

fn content_types<'a>(tokens: &'a [Token], stoplist: &Stoplist) -> HashSet<&'a str> {
    tokens
        .iter()
        .filter(|t| !stoplist.excludes(t))
        .map(Token::as_str)
        .collect()
}

fn overlap(reference: &HashSet<&str>, sentence: &HashSet<&str>, mode: OverlapMode) -> f64 {
    let hits = reference.iter().filter(|t| sentence.contains(*t)).count() as f64;
    match mode {
        OverlapMode::Absolute => hits,
        OverlapMode::Relative if reference.is_empty() => 0.0,
        OverlapMode::Relative => hits / reference.len() as f64,
    }
}

/// Type-level overlap of `sentence` with the non-stopword types of question and answer.
pub fn overlap_features(
    sentence: &[Token],
    question: &[Token],
    answer: &[Token],
    stoplist: &Stoplist,
    mode: OverlapMode,
) -> OverlapFeatures {
    let sent: HashSet<&str> = sentence.iter().map(Token::as_str).collect();
    OverlapFeatures {
        q_s: overlap(&content_types(question, stoplist), &sent, mode),
        a_s: overlap(&content_types(answer, stoplist), &sent, mode),
        mode,
    }
}

fn sample_answer(sample: &Sample) -> &[Token] {
    sample.answer.as_deref().unwrap_or(&[])
}

pub fn sentence_features(
    sample: &Sample,
    index: usize,
    stoplist: &Stoplist,
    mode: OverlapMode,
) -> OverlapFeatures {
    overlap_features(
        &sample.document[index].tokens,
        sample.question(),
        sample_answer(sample),
        stoplist,
        mode,
    )
}

/// Index of the sentence with the highest `w_q * q_s + w_a * a_s`.
pub fn select_sentence(
    sample: &Sample,
    w_q: f64,
    w_a: f64,
    mode: OverlapMode,
    stoplist: &Stoplist,
) -> Result<usize> {
    if sample.document.is_empty() {
        return Err(Error::Empty(format!("document of sample '{}'", sample.id)));
    }
    let scores: Vec<f64> = (0..sample.document.len())
        .map(|i| {
            let f = sentence_features(sample, i, stoplist, mode);
            w_q * f.q_s + w_a * f.a_s
        })
        .collect();
    let lengths: Vec<usize> = sample.document.iter().map(|s| s.tokens.len()).collect();
    Ok(select_by_score(&scores, &lengths))
}

/// Highest score, then fewest tokens, then lowest index.
pub fn select_by_score(scores: &[f64], lengths: &[usize]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && lengths[i] < lengths[best]) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coef: [f64; 2],
    pub bias: f64,
}

pub const LR_MAX_ITERATIONS: usize = 200;
pub const LR_GRADIENT_TOLERANCE: f64 = 1e-8;
const LR_LOSS_FLOOR: f64 = 1e-12;
const NEWTON_RIDGE: f64 = 1e-9;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn score(&self, x: [f64; 2]) -> f64 {
        self.coef[0] * x[0] + self.coef[1] * x[1] + self.bias
    }

    pub fn probability(&self, x: [f64; 2]) -> f64 {
        sigmoid(self.score(x))
    }

    pub fn predict(&self, x: [f64; 2]) -> usize {
        usize::from(self.score(x) >= 0.0)
    }

    /// Mean negative log-likelihood.
    pub fn loss(&self, features: &[[f64; 2]], labels: &[usize]) -> f64 {
        features
            .iter()
            .zip(labels)
            .map(|(&x, &y)| {
                let s = self.score(x);
                softplus(s) - if y == 1 { s } else { 0.0 }
            })
            .sum::<f64>()
            / features.len() as f64
    }
}

/// Distinct feature vectors with their per-class counts.
struct Grouped {
    points: Vec<([f64; 2], f64, f64)>,
    total: f64,
}

impl Grouped {
    fn new(features: &[[f64; 2]], labels: &[usize]) -> Self {
        let mut counts: BTreeMap<(u64, u64), ([f64; 2], f64, f64)> = BTreeMap::new();
        for (&x, &y) in features.iter().zip(labels) {
            let e = counts
                .entry((x[0].to_bits(), x[1].to_bits()))
                .or_insert((x, 0.0, 0.0));
            if y == 1 {
                e.2 += 1.0;
            } else {
                e.1 += 1.0;
            }
        }
        Self {
            points: counts.into_values().collect(),
            total: features.len() as f64,
        }
    }

    fn loss(&self, m: &LogisticModel) -> f64 {
        self.points
            .iter()
            .map(|&(x, n0, n1)| {
                let s = m.score(x);
                (n0 + n1) * softplus(s) - n1 * s
            })
            .sum::<f64>()
            / self.total
    }

    /// Gradient and Hessian over `(coef[0], coef[1], bias)`.
    fn derivatives(&self, m: &LogisticModel) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for &(x, n0, n1) in &self.points {
            let p = sigmoid(m.score(x));
            let v = [x[0], x[1], 1.0];
            let r = (n0 + n1) * p - n1;
            let c = (n0 + n1) * p * (1.0 - p);
            for i in 0..3 {
                g[i] += r * v[i];
                for j in 0..3 {
                    h[i][j] += c * v[i] * v[j];
                }
            }
        }
        let g = g.map(|v| v / self.total);
        let h = h.map(|row| row.map(|v| v / self.total));
        (g, h)
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits a binary logistic regression by damped Newton iterations from a zero
/// start, stopping when the gradient norm drops below 1e-8, the mean loss
/// below 1e-12 (separable data), no step decreases the loss, or after 200
/// iterations. Identical feature vectors are grouped first.
pub fn train_lr(features: &[[f64; 2]], labels: &[usize]) -> Result<LogisticModel> {
    if features.len() != labels.len() {
        return Err(Error::Shape("features and labels differ in length".into()));
    }
    if features.len() < 2 {
        return Err(Error::Empty(
            "logistic regression needs >= 2 samples".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_labels: 2,
        });
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::Config(
            "logistic regression needs both classes present".into(),
        ));
    }
    let data = Grouped::new(features, labels);
    let mut model = LogisticModel {
        coef: [0.0; 2],
        bias: 0.0,
    };
    let mut loss = data.loss(&model);
    for _ in 0..LR_MAX_ITERATIONS {
        let (g, mut h) = data.derivatives(&model);
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        if norm2.sqrt() < LR_GRADIENT_TOLERANCE || loss < LR_LOSS_FLOOR {
            break;
        }
        for (i, row) in h.iter_mut().enumerate() {
            row[i] += NEWTON_RIDGE;
        }
        let direction = match solve3(h, g) {
            Some(d) if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() > 0.0 => d,
            _ => g,
        };
        let slope: f64 = direction.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = LogisticModel {
                coef: [
                    model.coef[0] - step * direction[0],
                    model.coef[1] - step * direction[1],
                ],
                bias: model.bias - step * direction[2],
            };
            let trial_loss = data.loss(&trial);
            if trial_loss <= loss - 1e-4 * step * slope {
                accepted = Some((trial, trial_loss));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((m, l)) => {
                model = m;
                loss = l;
            }
            None => break,
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGrid {
    pub w_q: Vec<f64>,
    pub w_a: Vec<f64>,
    pub modes: Vec<OverlapMode>,
}

impl Default for BaselineGrid {
    /// `w_q, w_a` in `{0.0, 0.1, ..., 1.0}` under both modes.
    fn default() -> Self {
        let values: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        Self {
            w_q: values.clone(),
            w_a: values,
            modes: vec![OverlapMode::Absolute, OverlapMode::Relative],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrBaseline {
    pub w_q: f64,
    pub w_a: f64,
    pub mode: OverlapMode,
    pub model: LogisticModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSelection {
    pub id: String,
    pub sentence: usize,
    pub q_s: f64,
    pub a_s: f64,
    pub predicted: usize,
    pub gold: usize,
}

impl LrBaseline {
    pub fn features(
        &self,
        dataset: &Dataset,
        stoplist: &Stoplist,
    ) -> Result<Vec<(usize, [f64; 2])>> {
        split_features(dataset, self.w_q, self.w_a, self.mode, stoplist)
    }

    pub fn predict(
        &self,
        dataset: &Dataset,
        stoplist: &Stoplist,
    ) -> Result<Vec<BaselineSelection>> {
        Ok(self
            .features(dataset, stoplist)?
            .into_iter()
            .zip(&dataset.samples)
            .map(|((sentence, x), s)| BaselineSelection {
                id: s.id.clone(),
                sentence,
                q_s: x[0],
                a_s: x[1],
                predicted: self.model.predict(x),
                gold: s.label,
            })
            .collect())
    }

    /// `(f1a, accuracy)` on `dataset`.
    pub fn score(&self, dataset: &Dataset, stoplist: &Stoplist) -> Result<(f64, f64)> {
        let sel = self.predict(dataset, stoplist)?;
        let pred: Vec<usize> = sel.iter().map(|s| s.predicted).collect();
        let gold: Vec<usize> = sel.iter().map(|s| s.gold).collect();
        let m = target_metrics_from_labels(&pred, &gold, 2);
        Ok((m.f1a, m.accuracy))
    }
}

fn split_features(
    dataset: &Dataset,
    w_q: f64,
    w_a: f64,
    mode: OverlapMode,
    stoplist: &Stoplist,
) -> Result<Vec<(usize, [f64; 2])>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let i = select_sentence(s, w_q, w_a, mode, stoplist)?;
            Ok((i, sentence_features(s, i, stoplist, mode).as_array()))
        })
        .collect()
}

/// Per-sentence overlap features of every sample under one mode; they do not
/// depend on the selection weights, so one table serves a whole grid row.
struct FeatureTable {
    samples: Vec<(Vec<[f64; 2]>, Vec<usize>)>,
    labels: Vec<usize>,
}

impl FeatureTable {
    fn new(dataset: &Dataset, mode: OverlapMode, stoplist: &Stoplist) -> Result<Self> {
        let samples = dataset
            .samples
            .iter()
            .map(|s| {
                if s.document.is_empty() {
                    return Err(Error::Empty(format!("document of sample '{}'", s.id)));
                }
                let feats = (0..s.document.len())
                    .map(|i| sentence_features(s, i, stoplist, mode).as_array())
                    .collect();
                let lengths = s.document.iter().map(|x| x.tokens.len()).collect();
                Ok((feats, lengths))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            samples,
            labels: dataset.samples.iter().map(|s| s.label).collect(),
        })
    }

    /// Features of the sentence `select_sentence` picks in every sample.
    fn selected(&self, w_q: f64, w_a: f64) -> Vec<[f64; 2]> {
        self.samples
            .iter()
            .map(|(feats, lengths)| {
                let scores: Vec<f64> = feats.iter().map(|f| w_q * f[0] + w_a * f[1]).collect();
                feats[select_by_score(&scores, lengths)]
            })
            .collect()
    }
}

fn fit_on_table(table: &FeatureTable, w_q: f64, w_a: f64, mode: OverlapMode) -> Result<LrBaseline> {
    Ok(LrBaseline {
        w_q,
        w_a,
        mode,
        model: train_lr(&table.selected(w_q, w_a), &table.labels)?,
    })
}

fn table_f1a(model: &LrBaseline, table: &FeatureTable) -> f64 {
    let pred: Vec<usize> = table
        .selected(model.w_q, model.w_a)
        .into_iter()
        .map(|x| model.model.predict(x))
        .collect();
    target_metrics_from_labels(&pred, &table.labels, 2).f1a
}

fn require_binary(dataset: &Dataset) -> Result<()> {
    if dataset.num_labels() != 2 {
        return Err(Error::Config("the overlap baseline is binary".into()));
    }
    Ok(())
}

pub fn fit_baseline(
    train: &Dataset,
    w_q: f64,
    w_a: f64,
    mode: OverlapMode,
    stoplist: &Stoplist,
) -> Result<LrBaseline> {
    require_binary(train)?;
    fit_on_table(&FeatureTable::new(train, mode, stoplist)?, w_q, w_a, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: LrBaseline,
    pub val_f1a: f64,
}

/// Fits one model per grid point (mode, then `w_q`, then `w_a`) and keeps the
/// first one with the highest validation F1a.
pub fn grid_search(
    train: &Dataset,
    val: &Dataset,
    grid: &BaselineGrid,
    stoplist: &Stoplist,
) -> Result<GridResult> {
    require_binary(train)?;
    let mut best: Option<GridResult> = None;
    for &mode in &grid.modes {
        let train_table = FeatureTable::new(train, mode, stoplist)?;
        let val_table = FeatureTable::new(val, mode, stoplist)?;
        for &w_q in &grid.w_q {
            for &w_a in &grid.w_a {
                let model = fit_on_table(&train_table, w_q, w_a, mode)?;
                let f1a = table_f1a(&model, &val_table);
                if best.as_ref().is_none_or(|b| f1a > b.val_f1a) {
                    best = Some(GridResult {
                        best: model,
                        val_f1a: f1a,
                    });
                }
            }
        }
    }
    best.ok_or_else(|| Error::Config("empty baseline grid".into()))
}
