//! Diagnostic exports over prediction records: globally normalized logits,
//! question/answer overlap of selected rationales, solvability splits, and the
//! stability of pair predictions under their constituent sentences.
//!
//! Every export is plain row data, written as CSV for downstream plotting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baseline::{overlap_features, OverlapMode};
use crate::corpus::{Sample, Token};
use crate::error::{Error, Result};
use crate::logits::argmax;
use crate::metrics::{evaluate, paired, GoldScope, MetricReport, PredictionRecord};
use crate::stopwords::Stoplist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    /// The selected candidate, with a correct label prediction.
    SelectedCorrect,
    /// The selected candidate, with an incorrect label prediction.
    SelectedIncorrect,
    /// A sentence candidate that was not selected.
    Unselected,
    /// The query-only candidate, when not selected.
    QueryOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub sample_id: String,
    pub candidate: String,
    pub category: Category,
    pub value: f64,
}

/// Each candidate's logit at its own argmax class, min-max normalized over
/// every candidate of every record.
pub fn normalized_logits(
    records: &[PredictionRecord],
    samples: &[Sample],
) -> Result<Vec<AnalysisRow>> {
    let mut raw = Vec::new();
    for (r, s) in paired(records, samples)? {
        for (i, cand) in r.candidates.iter().enumerate() {
            let row = r.logits.row(i);
            let value = row[argmax(row).ok_or_else(|| Error::Shape("zero labels".into()))?];
            let category = if i == r.selected_index {
                if r.predicted_label == s.label {
                    Category::SelectedCorrect
                } else {
                    Category::SelectedIncorrect
                }
            } else if cand.is_query_only() {
                Category::QueryOnly
            } else {
                Category::Unselected
            };
            raw.push(AnalysisRow {
                sample_id: r.sample_id.clone(),
                candidate: cand.to_string(),
                category,
                value,
            });
        }
    }
    let lo = raw.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let hi = raw
        .iter()
        .map(|r| r.value)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(
            "min-max normalization needs at least two distinct finite logits".into(),
        ));
    }
    for r in &mut raw {
        r.value = (r.value - lo) / (hi - lo);
    }
    Ok(raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub sample_id: String,
    pub q_overlap: f64,
    pub a_overlap: f64,
    pub predicted_label: usize,
    /// The query-only candidate was selected; both overlaps are reported as 0.
    pub query_only: bool,
}

/// Relative question/answer overlap of each selected rationale (token union for pairs).
pub fn overlap_distribution(
    records: &[PredictionRecord],
    samples: &[Sample],
    stoplist: &Stoplist,
) -> Result<Vec<OverlapRow>> {
    paired(records, samples)?
        .map(|(r, s)| {
            if r.selected.is_query_only() {
                return Ok(OverlapRow {
                    sample_id: r.sample_id.clone(),
                    q_overlap: 0.0,
                    a_overlap: 0.0,
                    predicted_label: r.predicted_label,
                    query_only: true,
                });
            }
            let mut tokens: Vec<Token> = Vec::new();
            for &i in r.selected.indices() {
                let sent = s.document.get(i).ok_or(Error::SentenceOutOfRange {
                    record: s.id.clone(),
                    index: i,
                    len: s.document.len(),
                })?;
                tokens.extend(sent.tokens.iter().cloned());
            }
            let f = overlap_features(
                &tokens,
                s.question(),
                s.answer.as_deref().unwrap_or(&[]),
                stoplist,
                OverlapMode::Relative,
            );
            Ok(OverlapRow {
                sample_id: r.sample_id.clone(),
                q_overlap: f.q_s,
                a_overlap: f.a_s,
                predicted_label: r.predicted_label,
                query_only: false,
            })
        })
        .collect()
}

/// Sample indices grouped by how many of the `k` models solved them
/// (index `g` holds the samples solved by exactly `g` models).
pub fn solvability_split(correctness: &[Vec<bool>], num_samples: usize) -> Result<Vec<Vec<usize>>> {
    if let Some(bad) = correctness.iter().find(|c| c.len() != num_samples) {
        return Err(Error::Shape(format!(
            "correctness vector of length {} for {num_samples} samples",
            bad.len()
        )));
    }
    let mut groups = vec![Vec::new(); correctness.len() + 1];
    for i in 0..num_samples {
        let solved = correctness.iter().filter(|c| c[i]).count();
        groups[solved].push(i);
    }
    Ok(groups)
}

/// Per-sample correctness of a record set.
pub fn correctness(records: &[PredictionRecord], samples: &[Sample]) -> Result<Vec<bool>> {
    Ok(paired(records, samples)?
        .map(|(r, s)| r.predicted_label == s.label)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvabilityGroup {
    pub solved_by: usize,
    pub models: usize,
    pub size: usize,
    pub report: Option<MetricReport>,
    /// Group F1a minus the F1a on the full split.
    pub delta_f1a: Option<f64>,
}

/// Splits by the `references`' correctness and evaluates `records` on each group.
pub fn solvability_report(
    references: &[Vec<PredictionRecord>],
    records: &[PredictionRecord],
    samples: &[Sample],
    num_labels: usize,
) -> Result<Vec<SolvabilityGroup>> {
    let correct: Vec<Vec<bool>> = references
        .iter()
        .map(|r| correctness(r, samples))
        .collect::<Result<_>>()?;
    let groups = solvability_split(&correct, samples.len())?;
    let full = evaluate(records, samples, num_labels, GoldScope::BestMatch)?;
    groups
        .into_iter()
        .enumerate()
        .map(|(g, idx)| {
            let report = if idx.is_empty() {
                None
            } else {
                let rs: Vec<PredictionRecord> = idx.iter().map(|&i| records[i].clone()).collect();
                let ss: Vec<Sample> = idx.iter().map(|&i| samples[i].clone()).collect();
                Some(evaluate(&rs, &ss, num_labels, GoldScope::BestMatch)?)
            };
            Ok(SolvabilityGroup {
                solved_by: g,
                models: references.len(),
                size: idx.len(),
                delta_f1a: report.as_ref().map(|r| r.f1a - full.f1a),
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceRole {
    /// The pair sentence the single-sentence model also selected.
    Shared,
    /// The other pair sentence.
    New,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub joint_label: usize,
    pub role: SentenceRole,
    pub unchanged: usize,
    pub total: usize,
}

impl StabilityCell {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.unchanged as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    /// One cell per (joint label, role), label-major.
    pub cells: Vec<StabilityCell>,
    pub evaluated: usize,
    pub skipped_not_pair: usize,
    pub skipped_no_shared: usize,
}

/// For samples where the pair model selected a pair sharing exactly one
/// sentence with the single-sentence model's selection, checks whether each
/// constituent sentence's own row predicts the same label as the pair.
pub fn pair_stability(
    pair_records: &[PredictionRecord],
    single_records: &[PredictionRecord],
    samples: &[Sample],
    num_labels: usize,
) -> Result<StabilityTable> {
    drop(paired(single_records, samples)?);
    let mut cells: Vec<StabilityCell> = (0..num_labels)
        .flat_map(|y| {
            [SentenceRole::Shared, SentenceRole::New].map(|role| StabilityCell {
                joint_label: y,
                role,
                unchanged: 0,
                total: 0,
            })
        })
        .collect();
    let mut table = StabilityTable {
        cells: Vec::new(),
        evaluated: 0,
        skipped_not_pair: 0,
        skipped_no_shared: 0,
    };
    for ((p, _), single) in paired(pair_records, samples)?.zip(single_records) {
        if p.selected.len() != 2 {
            table.skipped_not_pair += 1;
            continue;
        }
        let pair = p.selected.indices();
        let shared: Vec<usize> = single
            .selected
            .indices()
            .iter()
            .copied()
            .filter(|i| pair.contains(i))
            .collect();
        if shared.len() != 1 || single.selected.len() != 1 {
            table.skipped_no_shared += 1;
            continue;
        }
        let y = p.predicted_label;
        if y >= num_labels {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_labels,
            });
        }
        for &sentence in pair {
            let role = if sentence == shared[0] {
                SentenceRole::Shared
            } else {
                SentenceRole::New
            };
            let row = p
                .candidates
                .iter()
                .position(|c| c.indices() == [sentence])
                .ok_or_else(|| {
                    Error::Shape(format!(
                        "record '{}' lacks the single candidate {{{sentence}}}",
                        p.sample_id
                    ))
                })?;
            let alone =
                argmax(p.logits.row(row)).ok_or_else(|| Error::Shape("zero labels".into()))?;
            let cell = &mut cells[2 * y + role as usize];
            cell.total += 1;
            if alone == y {
                cell.unchanged += 1;
            }
        }
        table.evaluated += 1;
    }
    table.cells = cells;
    Ok(table)
}

/// Serializes rows as CSV with a header derived from their field names.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()
        .map_err(|e| Error::Config(format!("csv write failed: {e}")))?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv write failed: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SolvabilityCsvRow {
    solved_by: usize,
    models: usize,
    size: usize,
    f1a: Option<f64>,
    accuracy: Option<f64>,
    rationale_f1: Option<f64>,
    delta_f1a: Option<f64>,
}

pub fn write_solvability_csv(groups: &[SolvabilityGroup], out: impl Write) -> Result<()> {
    let rows: Vec<SolvabilityCsvRow> = groups
        .iter()
        .map(|g| SolvabilityCsvRow {
            solved_by: g.solved_by,
            models: g.models,
            size: g.size,
            f1a: g.report.as_ref().map(|r| r.f1a),
            accuracy: g.report.as_ref().map(|r| r.accuracy),
            rationale_f1: g.report.as_ref().map(|r| r.rationale_f1),
            delta_f1a: g.delta_f1a,
        })
        .collect();
    write_csv(&rows, out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StabilityCsvRow {
    joint_label: usize,
    role: SentenceRole,
    unchanged: usize,
    total: usize,
    fraction: f64,
}

pub fn write_stability_csv(table: &StabilityTable, out: impl Write) -> Result<()> {
    let rows: Vec<StabilityCsvRow> = table
        .cells
        .iter()
        .map(|c| StabilityCsvRow {
            joint_label: c.joint_label,
            role: c.role,
            unchanged: c.unchanged,
            total: c.total,
            fraction: c.fraction(),
        })
        .collect();
    write_csv(&rows, out)
}
