//! Import of ERASER-style annotation files.
//!
//! `docs_dir` holds one plain-text file per docid (one sentence per line,
//! tokens space-separated). The annotation file is JSON lines with
//! `annotation_id`, `query`, `classification` and `evidences`. Each top-level
//! evidence group is one alternative rationale; sentence ranges inside a group
//! are unioned. Span-only evidences (negative sentence indices, as in Movies)
//! are mapped to every sentence their token range intersects.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{segment_document, tokenize, Dataset, Rationale, Sample, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct Evidence {
    docid: String,
    #[serde(default = "neg_one")]
    start_sentence: i64,
    #[serde(default = "neg_one")]
    end_sentence: i64,
    #[serde(default = "neg_one")]
    start_token: i64,
    #[serde(default = "neg_one")]
    end_token: i64,
}

fn neg_one() -> i64 {
    -1
}

#[derive(Debug, Deserialize)]
struct Annotation {
    annotation_id: String,
    query: String,
    classification: String,
    #[serde(default)]
    evidences: Vec<Vec<Evidence>>,
    #[serde(default)]
    docids: Option<Vec<String>>,
}

/// Separator between question and answer in MultiRC queries.
const QA_SEPARATOR: &str = "||";

pub fn import_eraser(
    docs_dir: impl AsRef<Path>,
    annotations: impl AsRef<Path>,
    label_map: &BTreeMap<String, usize>,
) -> Result<Dataset> {
    let docs_dir = docs_dir.as_ref();
    let annotations = annotations.as_ref();
    let label_names = dense_labels(label_map)?;

    let file = File::open(annotations).map_err(|e| Error::io(annotations, e))?;
    let mut docs: HashMap<String, Vec<Sentence>> = HashMap::new();
    let mut samples = Vec::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(annotations, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: Annotation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", annotations.display(), lineno + 1),
            message: e.to_string(),
        })?;

        let docid = ann
            .docids
            .as_ref()
            .and_then(|d| d.first().cloned())
            .or_else(|| {
                ann.evidences
                    .iter()
                    .flatten()
                    .next()
                    .map(|e| e.docid.clone())
            })
            .ok_or_else(|| Error::InvalidSample {
                id: ann.annotation_id.clone(),
                reason: "no docid in record".into(),
            })?;
        if !docs.contains_key(&docid) {
            let path = docs_dir.join(&docid);
            let text = std::fs::read_to_string(&path)
                .map_err(|_| Error::MissingDocument(docid.clone()))?;
            docs.insert(docid.clone(), segment_document(&text));
        }
        let document = docs[&docid].clone();

        let label = *label_map
            .get(&ann.classification)
            .ok_or_else(|| Error::UnknownLabel(ann.classification.clone()))?;

        let mut gold_rationales = BTreeSet::new();
        for group in &ann.evidences {
            let mut set = Rationale::new();
            for ev in group.iter().filter(|e| e.docid == docid) {
                set.extend(evidence_sentences(ev, &document, &ann.annotation_id)?);
            }
            if !set.is_empty() {
                gold_rationales.insert(set);
            }
        }

        let (query, answer) = match ann.query.split_once(QA_SEPARATOR) {
            Some((q, a)) => {
                let answer = tokenize(a);
                let mut query = tokenize(q);
                query.extend(answer.iter().cloned());
                (query, Some(answer))
            }
            None => (tokenize(&ann.query), None),
        };

        samples.push(Sample {
            id: ann.annotation_id,
            query,
            answer,
            document,
            label,
            gold_rationales,
        });
    }
    Dataset::new(samples, label_names)
}

fn dense_labels(label_map: &BTreeMap<String, usize>) -> Result<Vec<String>> {
    let mut names = vec![None; label_map.len()];
    for (name, &id) in label_map {
        match names.get_mut(id) {
            Some(slot @ None) => *slot = Some(name.clone()),
            _ => {
                return Err(Error::Config(format!(
                    "label ids must be dense and unique, got {name} -> {id}"
                )))
            }
        }
    }
    Ok(names.into_iter().map(Option::unwrap).collect())
}

fn evidence_sentences(ev: &Evidence, document: &[Sentence], record: &str) -> Result<Vec<usize>> {
    let n = document.len();
    if ev.start_sentence >= 0 {
        let start = ev.start_sentence as usize;
        let end = (ev.end_sentence.max(ev.start_sentence + 1)) as usize;
        if end > n {
            return Err(Error::SentenceOutOfRange {
                record: record.to_owned(),
                index: end - 1,
                len: n,
            });
        }
        return Ok((start..end).collect());
    }
    if ev.start_token < 0 || ev.end_token <= ev.start_token {
        return Err(Error::InvalidSample {
            id: record.to_owned(),
            reason: "evidence has neither a sentence nor a token range".into(),
        });
    }
    let (st, et) = (ev.start_token as usize, ev.end_token as usize);
    let mut hits = Vec::new();
    let mut offset = 0usize;
    for s in document {
        let end = offset + s.tokens.len();
        if st < end && et > offset {
            hits.push(s.index);
        }
        offset = end;
    }
    if et > offset {
        return Err(Error::SentenceOutOfRange {
            record: record.to_owned(),
            index: n,
            len: n,
        });
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> BTreeMap<String, usize> {
        [("False".to_string(), 0), ("True".to_string(), 1)]
            .into_iter()
            .collect()
    }

    fn setup(doc: &str, ann: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("docs")).unwrap();
        std::fs::write(dir.path().join("docs/d"), doc).unwrap();
        let ap = dir.path().join("ann.jsonl");
        std::fs::write(&ap, ann).unwrap();
        (dir, ap)
    }

    const DOC: &str = "s0 a\ns1 b\ns2 c\ns3 d\ns4 e\ns5 f\ns6 g\ns7 h\n";

    fn ev(start: usize, end: usize) -> String {
        format!(r#"{{"docid":"d","start_sentence":{start},"end_sentence":{end}}}"#)
    }

    #[test]
    fn single_range() {
        let ann = format!(
            r#"{{"annotation_id":"r1","query":"claim here","classification":"True","evidences":[[{}]]}}"#,
            ev(3, 4)
        );
        let (dir, ap) = setup(DOC, &ann);
        let d = import_eraser(dir.path().join("docs"), ap, &labels()).unwrap();
        let s = &d.samples[0];
        assert_eq!(
            s.gold_rationales,
            [[3].into_iter().collect()].into_iter().collect()
        );
        assert_eq!(s.label, 1);
        assert!(s.answer.is_none());
    }

    #[test]
    fn alternative_groups_and_joint_ranges() {
        let ann = format!(
            "{}\n{}\n",
            format!(
                r#"{{"annotation_id":"alt","query":"c","classification":"True","evidences":[[{}],[{}]]}}"#,
                ev(3, 4),
                ev(7, 8)
            ),
            format!(
                r#"{{"annotation_id":"joint","query":"what is x ? || y","classification":"False","evidences":[[{}]]}}"#,
                ev(5, 7)
            )
        );
        let (dir, ap) = setup(DOC, &ann);
        let d = import_eraser(dir.path().join("docs"), ap, &labels()).unwrap();
        let alt: Vec<Vec<usize>> = d.samples[0]
            .gold_rationales
            .iter()
            .map(|g| g.iter().copied().collect())
            .collect();
        assert_eq!(alt, vec![vec![3], vec![7]]);
        let joint: Vec<Vec<usize>> = d.samples[1]
            .gold_rationales
            .iter()
            .map(|g| g.iter().copied().collect())
            .collect();
        assert_eq!(joint, vec![vec![5, 6]]);
        let s = &d.samples[1];
        assert_eq!(s.answer.as_ref().unwrap().len(), 1);
        assert_eq!(s.query.len(), 5);
        assert_eq!(s.question().len(), 4);
    }

    #[test]
    fn token_span_maps_to_intersecting_sentences() {
        // Sentences have 2 tokens each; tokens [3, 6) touch sentences 1 and 2.
        let ann = r#"{"annotation_id":"m","query":"q","classification":"True","evidences":[[{"docid":"d","start_sentence":-1,"end_sentence":-1,"start_token":3,"end_token":6}]]}"#;
        let (dir, ap) = setup(DOC, ann);
        let d = import_eraser(dir.path().join("docs"), ap, &labels()).unwrap();
        let g: Vec<usize> = d.samples[0]
            .gold_rationales
            .iter()
            .next()
            .unwrap()
            .iter()
            .copied()
            .collect();
        assert_eq!(g, vec![1, 2]);
    }

    #[test]
    fn missing_document_names_docid() {
        let ann = r#"{"annotation_id":"r","query":"q","classification":"True","evidences":[[{"docid":"nope","start_sentence":0,"end_sentence":1}]]}"#;
        let (dir, ap) = setup(DOC, ann);
        let err = import_eraser(dir.path().join("docs"), ap, &labels()).unwrap_err();
        assert!(matches!(err, Error::MissingDocument(ref d) if d == "nope"));
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn unknown_classification() {
        let ann = format!(
            r#"{{"annotation_id":"r","query":"q","classification":"Maybe","evidences":[[{}]]}}"#,
            ev(0, 1)
        );
        let (dir, ap) = setup(DOC, &ann);
        let err = import_eraser(dir.path().join("docs"), ap, &labels()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel(_)));
    }

    #[test]
    fn out_of_range_names_record() {
        let ann = format!(
            r#"{{"annotation_id":"rec9","query":"q","classification":"True","evidences":[[{}]]}}"#,
            ev(8, 10)
        );
        let (dir, ap) = setup(DOC, &ann);
        let err = import_eraser(dir.path().join("docs"), ap, &labels()).unwrap_err();
        assert!(matches!(err, Error::SentenceOutOfRange { ref record, .. } if record == "rec9"));
    }
}
