//! Prediction from candidate weights and the rationale/target metric suite.
//!
//! Rationale precision, recall and F1 are scored per sample against the
//! single most similar gold rationale (highest sentence-level F1) and
//! macro-averaged over annotated samples. Joint accuracies use every sample
//! as denominator. ERASER-style IOU F1 and token F1 expand sentences into
//! token spans.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Candidate, CandidateSet, EncodedSample, Rationale, Sample};
use crate::encoder::CandidateEncoder;
use crate::error::{Error, Result};
use crate::logits::{argmax, Logits};
use crate::objective::{confidences, weights};

/// Prediction for one sample: the selected candidate and the label read off its row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub predicted_label: usize,
    pub selected_index: usize,
    pub selected: Candidate,
    pub candidates: Vec<Candidate>,
    pub weights: Vec<f64>,
    pub logits: Logits,
}

impl PredictionRecord {
    pub fn selected_set(&self) -> Rationale {
        self.selected.to_set()
    }

    pub fn selected_weight(&self) -> f64 {
        self.weights[self.selected_index]
    }
}

/// Selected candidate = argmax of `w`, label = argmax of that row; lowest index on ties.
pub fn predict(z: &Logits, w: &[f64]) -> Result<(usize, usize)> {
    if z.rows() != w.len() || z.rows() == 0 {
        return Err(Error::Shape(format!(
            "{} weights for {} logit rows",
            w.len(),
            z.rows()
        )));
    }
    let cand = argmax(w).expect("non-empty");
    let label = argmax(z.row(cand)).ok_or_else(|| Error::Shape("zero labels".into()))?;
    Ok((label, cand))
}

pub fn predict_sample<E: CandidateEncoder>(
    encoder: &E,
    sample: &Sample,
    encoded: &EncodedSample,
    candidates: &CandidateSet,
    tau: f64,
) -> Result<PredictionRecord> {
    let z = encoder.logits(encoded, candidates)?;
    let w = weights(&confidences(&z), tau)?;
    let (label, idx) = predict(&z, &w)?;
    Ok(PredictionRecord {
        sample_id: sample.id.clone(),
        predicted_label: label,
        selected_index: idx,
        selected: candidates.get(idx).clone(),
        candidates: candidates.candidates.clone(),
        weights: w,
        logits: z,
    })
}

/// Sentence-level F1 between two index sets; 0 when either is empty.
pub fn set_f1(selected: &Rationale, gold: &Rationale) -> f64 {
    let (p, r) = set_pr(selected, gold);
    harmonic(p, r)
}

fn set_pr(selected: &Rationale, gold: &Rationale) -> (f64, f64) {
    let inter = selected.intersection(gold).count() as f64;
    let p = if selected.is_empty() {
        0.0
    } else {
        inter / selected.len() as f64
    };
    let r = if gold.is_empty() {
        0.0
    } else {
        inter / gold.len() as f64
    };
    (p, r)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// The gold rationale with the highest sentence F1 against `selected`; ties
/// go to the gold set with the smallest sorted index sequence.
pub fn best_gold_match<'a>(
    selected: &Rationale,
    golds: &'a BTreeSet<Rationale>,
) -> Result<&'a Rationale> {
    let mut best: Option<(&Rationale, f64)> = None;
    for g in golds {
        let f = set_f1(selected, g);
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((g, f));
        }
    }
    best.map(|(g, _)| g)
        .ok_or_else(|| Error::Empty("no gold rationales".into()))
}

pub(crate) fn paired<'a>(
    records: &'a [PredictionRecord],
    samples: &'a [Sample],
) -> Result<impl Iterator<Item = (&'a PredictionRecord, &'a Sample)>> {
    if records.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} records for {} samples",
            records.len(),
            samples.len()
        )));
    }
    if let Some((r, s)) = records
        .iter()
        .zip(samples)
        .find(|(r, s)| r.sample_id != s.id)
    {
        return Err(Error::Shape(format!(
            "record '{}' paired with sample '{}'",
            r.sample_id, s.id
        )));
    }
    Ok(records.iter().zip(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Macro-averaged rationale P/R/F1 over samples that carry gold rationales.
pub fn rationale_prf(records: &[PredictionRecord], samples: &[Sample]) -> Result<Prf> {
    let mut sum = Prf::default();
    let mut count = 0usize;
    for (r, s) in paired(records, samples)? {
        if s.gold_rationales.is_empty() {
            continue;
        }
        let sel = r.selected_set();
        let m = best_gold_match(&sel, &s.gold_rationales)?;
        let (p, rec) = set_pr(&sel, m);
        sum.precision += p;
        sum.recall += rec;
        sum.f1 += harmonic(p, rec);
        count += 1;
    }
    if count == 0 {
        return Ok(Prf::default());
    }
    let c = count as f64;
    Ok(Prf {
        precision: sum.precision / c,
        recall: sum.recall / c,
        f1: sum.f1 / c,
    })
}

/// `(acc_full, acc_part)`: correct label and the selection contains / touches some gold rationale.
pub fn joint_accuracy(records: &[PredictionRecord], samples: &[Sample]) -> Result<(f64, f64)> {
    let mut full = 0usize;
    let mut part = 0usize;
    for (r, s) in paired(records, samples)? {
        if r.predicted_label != s.label {
            continue;
        }
        let sel = r.selected_set();
        if s.gold_rationales
            .iter()
            .any(|g| !g.is_empty() && g.is_subset(&sel))
        {
            full += 1;
        }
        if s.gold_rationales.iter().any(|g| !g.is_disjoint(&sel)) {
            part += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    Ok((full as f64 / n, part as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub f1a: f64,
    pub accuracy: f64,
    pub class_precision: Vec<f64>,
    pub class_recall: Vec<f64>,
    pub class_f1: Vec<f64>,
}

/// Macro F1 over all `num_labels` classes and accuracy, from the confusion matrix.
pub fn target_metrics_from_labels(
    predicted: &[usize],
    gold: &[usize],
    num_labels: usize,
) -> TargetMetrics {
    let mut confusion = vec![vec![0usize; num_labels]; num_labels];
    for (&p, &g) in predicted.iter().zip(gold) {
        confusion[g][p] += 1;
    }
    let mut precision = Vec::with_capacity(num_labels);
    let mut recall = Vec::with_capacity(num_labels);
    let mut f1 = Vec::with_capacity(num_labels);
    for c in 0..num_labels {
        let tp = confusion[c][c] as f64;
        let predicted_c: usize = (0..num_labels).map(|g| confusion[g][c]).sum();
        let gold_c: usize = confusion[c].iter().sum();
        let p = if predicted_c == 0 {
            0.0
        } else {
            tp / predicted_c as f64
        };
        let r = if gold_c == 0 { 0.0 } else { tp / gold_c as f64 };
        precision.push(p);
        recall.push(r);
        f1.push(harmonic(p, r));
    }
    let correct: usize = (0..num_labels).map(|c| confusion[c][c]).sum();
    TargetMetrics {
        f1a: if num_labels == 0 {
            0.0
        } else {
            f1.iter().sum::<f64>() / num_labels as f64
        },
        accuracy: correct as f64 / predicted.len().max(1) as f64,
        class_precision: precision,
        class_recall: recall,
        class_f1: f1,
    }
}

pub fn target_metrics(
    records: &[PredictionRecord],
    samples: &[Sample],
    num_labels: usize,
) -> Result<TargetMetrics> {
    let (pred, gold): (Vec<usize>, Vec<usize>) = paired(records, samples)?
        .map(|(r, s)| (r.predicted_label, s.label))
        .unzip();
    Ok(target_metrics_from_labels(&pred, &gold, num_labels))
}

/// Half-open token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iou(&self, other: &Span) -> f64 {
        let inter = self
            .end
            .min(other.end)
            .saturating_sub(self.start.max(other.start));
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Token spans of a sentence set; runs of adjacent sentences merge into one span.
pub fn sentence_spans(sample: &Sample, sentences: &Rationale) -> Vec<Span> {
    let mut offsets = Vec::with_capacity(sample.document.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for s in &sample.document {
        acc += s.tokens.len();
        offsets.push(acc);
    }
    let mut spans: Vec<Span> = Vec::new();
    for &i in sentences {
        let span = Span {
            start: offsets[i],
            end: offsets[i + 1],
        };
        match spans.last_mut() {
            Some(last) if last.end == span.start => last.end = span.end,
            _ => spans.push(span),
        }
    }
    spans
}

/// Which gold rationales the ERASER-style metrics score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldScope {
    /// The single best-matching gold rationale.
    #[default]
    BestMatch,
    /// The union of every gold rationale.
    AllGold,
}

pub const IOU_THRESHOLD: f64 = 0.5;

/// Span-level IOU F1 and token-level F1, both micro-averaged over annotated samples.
///
/// A predicted span counts toward precision when its IOU with some gold span
/// is at least 0.5; a gold span counts toward recall when some predicted span
/// reaches that IOU with it.
pub fn eraser_metrics(
    records: &[PredictionRecord],
    samples: &[Sample],
    scope: GoldScope,
) -> Result<(f64, f64)> {
    let (mut pred_spans, mut gold_spans, mut pred_hits, mut gold_hits) = (0, 0, 0, 0);
    let (mut pred_tokens, mut gold_tokens, mut token_hits) = (0, 0, 0);
    for (r, s) in paired(records, samples)? {
        if s.gold_rationales.is_empty() {
            continue;
        }
        let sel = r.selected_set();
        let gold: Rationale = match scope {
            GoldScope::BestMatch => best_gold_match(&sel, &s.gold_rationales)?.clone(),
            GoldScope::AllGold => s.gold_rationales.iter().flatten().copied().collect(),
        };
        let ps = sentence_spans(s, &sel);
        let gs = sentence_spans(s, &gold);
        pred_spans += ps.len();
        gold_spans += gs.len();
        pred_hits += ps
            .iter()
            .filter(|p| gs.iter().any(|g| p.iou(g) >= IOU_THRESHOLD))
            .count();
        gold_hits += gs
            .iter()
            .filter(|g| ps.iter().any(|p| p.iou(g) >= IOU_THRESHOLD))
            .count();

        let len =
            |set: &Rationale| -> usize { set.iter().map(|&i| s.document[i].tokens.len()).sum() };
        pred_tokens += len(&sel);
        gold_tokens += len(&gold);
        token_hits += len(&sel.intersection(&gold).copied().collect());
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let iou_f1 = harmonic(ratio(pred_hits, pred_spans), ratio(gold_hits, gold_spans));
    let token_f1 = harmonic(
        ratio(token_hits, pred_tokens),
        ratio(token_hits, gold_tokens),
    );
    Ok((iou_f1, token_f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub f1a: f64,
    pub accuracy: f64,
    pub rationale_precision: f64,
    pub rationale_recall: f64,
    pub rationale_f1: f64,
    pub acc_full: f64,
    pub acc_part: f64,
    pub iou_f1: f64,
    pub token_f1: f64,
    pub class_recall: Vec<f64>,
}

pub fn evaluate(
    records: &[PredictionRecord],
    samples: &[Sample],
    num_labels: usize,
    scope: GoldScope,
) -> Result<MetricReport> {
    let target = target_metrics(records, samples, num_labels)?;
    let prf = rationale_prf(records, samples)?;
    let (acc_full, acc_part) = joint_accuracy(records, samples)?;
    let (iou_f1, token_f1) = eraser_metrics(records, samples, scope)?;
    Ok(MetricReport {
        samples: samples.len(),
        f1a: target.f1a,
        accuracy: target.accuracy,
        rationale_precision: prf.precision,
        rationale_recall: prf.recall,
        rationale_f1: prf.f1,
        acc_full,
        acc_part,
        iou_f1,
        token_f1,
        class_recall: target.class_recall,
    })
}
