use std::collections::BTreeSet;

use faithsel::corpus::{Candidate, Rationale, Sample, Sentence, Token};
use faithsel::logits::Logits;
use faithsel::metrics::{evaluate, GoldScope, MetricReport, PredictionRecord};
use faithsel::rng::SplitMix64;

pub const MAX_SENTENCES: usize = 6;

pub struct MetricInstance {
    pub samples: Vec<Sample>,
    pub records: Vec<PredictionRecord>,
    pub num_labels: usize,
}

fn random_subset(rng: &mut SplitMix64, n: usize, max_len: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut all);
    let k = rng.below(max_len.min(n) + 1);
    all.truncate(k);
    all.sort_unstable();
    all
}

pub fn random_instance(seed: u64) -> MetricInstance {
    let mut rng = SplitMix64::stream(seed, 501);
    let num_labels = 2 + rng.below(3);
    let count = 1 + rng.below(8);
    let mut samples = Vec::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    for k in 0..count {
        let n = 1 + rng.below(MAX_SENTENCES);
        let document = (0..n)
            .map(|index| Sentence {
                index,
                tokens: (0..1 + rng.below(5))
                    .map(|j| Token::new(&format!("w{j}")).unwrap())
                    .collect(),
            })
            .collect();
        let mut gold_rationales = BTreeSet::new();
        if !rng.chance(0.15) {
            for _ in 0..1 + rng.below(3) {
                let mut g = random_subset(&mut rng, n, 3);
                if g.is_empty() {
                    g.push(rng.below(n));
                }
                gold_rationales.insert(g.into_iter().collect::<Rationale>());
            }
        }
        let id = format!("s{k}");
        samples.push(Sample {
            id: id.clone(),
            query: vec![Token::new("q").unwrap()],
            answer: None,
            document,
            label: rng.below(num_labels),
            gold_rationales,
        });
        let selected = Candidate::from_indices(random_subset(&mut rng, n, 3));
        records.push(PredictionRecord {
            sample_id: id,
            predicted_label: rng.below(num_labels),
            selected_index: 0,
            selected: selected.clone(),
            candidates: vec![selected],
            weights: vec![1.0],
            logits: Logits::zeros(1, num_labels),
        });
    }
    MetricInstance {
        samples,
        records,
        num_labels,
    }
}

fn membership(set: &Rationale, n: usize) -> Vec<bool> {
    (0..n).map(|i| set.contains(&i)).collect()
}

fn count_both(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x && **y).count()
}

fn count(a: &[bool]) -> usize {
    a.iter().filter(|x| **x).count()
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn sentence_pr(selected: &[bool], gold: &[bool]) -> (f64, f64) {
    let hit = count_both(selected, gold);
    (ratio(hit, count(selected)), ratio(hit, count(gold)))
}

fn best_match(selected: &Rationale, sample: &Sample) -> Rationale {
    let n = sample.document.len();
    let sel = membership(selected, n);
    let mut golds: Vec<&Rationale> = sample.gold_rationales.iter().collect();
    golds.sort_by_key(|g| g.iter().copied().collect::<Vec<_>>());
    let mut best = golds[0];
    let mut best_f1 = -1.0;
    for g in golds {
        let (p, r) = sentence_pr(&sel, &membership(g, n));
        let f = f1(p, r);
        if f > best_f1 {
            best_f1 = f;
            best = g;
        }
    }
    best.clone()
}

fn token_mask(sample: &Sample, sentences: &Rationale) -> Vec<bool> {
    sample
        .document
        .iter()
        .flat_map(|s| std::iter::repeat_n(sentences.contains(&s.index), s.tokens.len()))
        .collect()
}

fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().chain(std::iter::once(&false)).enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn interval_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inside = |x: usize, iv: (usize, usize)| iv.0 <= x && x < iv.1;
    let hi = a.1.max(b.1);
    let inter = (0..hi).filter(|&x| inside(x, a) && inside(x, b)).count();
    let union = (0..hi).filter(|&x| inside(x, a) || inside(x, b)).count();
    ratio(inter, union)
}

pub fn oracle_report(inst: &MetricInstance, scope: GoldScope) -> MetricReport {
    let t = inst.num_labels;
    let total = inst.samples.len();

    let mut tp = vec![0usize; t];
    let mut predicted = vec![0usize; t];
    let mut gold = vec![0usize; t];
    for (r, s) in inst.records.iter().zip(&inst.samples) {
        predicted[r.predicted_label] += 1;
        gold[s.label] += 1;
        if r.predicted_label == s.label {
            tp[s.label] += 1;
        }
    }
    let class_recall: Vec<f64> = (0..t).map(|c| ratio(tp[c], gold[c])).collect();
    let class_f1: Vec<f64> = (0..t)
        .map(|c| f1(ratio(tp[c], predicted[c]), class_recall[c]))
        .collect();
    let f1a = class_f1.iter().sum::<f64>() / t as f64;
    let accuracy = ratio(tp.iter().sum(), total);

    let (mut sp, mut sr, mut sf, mut annotated) = (0.0, 0.0, 0.0, 0usize);
    let (mut full, mut part) = (0usize, 0usize);
    let (mut pred_spans, mut gold_spans, mut pred_hits, mut gold_hits) = (0, 0, 0, 0);
    let (mut pred_tokens, mut gold_tokens, mut token_hits) = (0, 0, 0);
    for (r, s) in inst.records.iter().zip(&inst.samples) {
        let n = s.document.len();
        let selected: Rationale = r.selected.indices().iter().copied().collect();
        let sel = membership(&selected, n);
        if r.predicted_label == s.label {
            let golds: Vec<Vec<bool>> =
                s.gold_rationales.iter().map(|g| membership(g, n)).collect();
            if golds
                .iter()
                .any(|g| count(g) > 0 && count_both(g, &sel) == count(g))
            {
                full += 1;
            }
            if golds.iter().any(|g| count_both(g, &sel) > 0) {
                part += 1;
            }
        }
        if s.gold_rationales.is_empty() {
            continue;
        }
        annotated += 1;
        let matched = best_match(&selected, s);
        let (p, rc) = sentence_pr(&sel, &membership(&matched, n));
        sp += p;
        sr += rc;
        sf += f1(p, rc);

        let reference: Rationale = match scope {
            GoldScope::BestMatch => matched,
            GoldScope::AllGold => s.gold_rationales.iter().flatten().copied().collect(),
        };
        let pm = token_mask(s, &selected);
        let gm = token_mask(s, &reference);
        let ps = runs(&pm);
        let gs = runs(&gm);
        pred_spans += ps.len();
        gold_spans += gs.len();
        pred_hits += ps
            .iter()
            .filter(|&&a| gs.iter().any(|&b| interval_iou(a, b) >= 0.5))
            .count();
        gold_hits += gs
            .iter()
            .filter(|&&b| ps.iter().any(|&a| interval_iou(a, b) >= 0.5))
            .count();
        pred_tokens += count(&pm);
        gold_tokens += count(&gm);
        token_hits += count_both(&pm, &gm);
    }
    let macro_avg = |x: f64| {
        if annotated == 0 {
            0.0
        } else {
            x / annotated as f64
        }
    };
    MetricReport {
        samples: total,
        f1a,
        accuracy,
        rationale_precision: macro_avg(sp),
        rationale_recall: macro_avg(sr),
        rationale_f1: macro_avg(sf),
        acc_full: ratio(full, total),
        acc_part: ratio(part, total),
        iou_f1: f1(ratio(pred_hits, pred_spans), ratio(gold_hits, gold_spans)),
        token_f1: f1(
            ratio(token_hits, pred_tokens),
            ratio(token_hits, gold_tokens),
        ),
        class_recall,
    }
}

/// Number of instances (out of `count`, seeded from `first_seed`) whose
/// library report differs from the oracle in any field, with the first
/// mismatch described.
pub fn compare(first_seed: u64, count: u64) -> (usize, Option<String>) {
    let mut failures = 0;
    let mut first = None;
    for seed in first_seed..first_seed + count {
        let inst = random_instance(seed);
        for scope in [GoldScope::BestMatch, GoldScope::AllGold] {
            let got = evaluate(&inst.records, &inst.samples, inst.num_labels, scope).unwrap();
            let want = oracle_report(&inst, scope);
            if got != want {
                failures += 1;
                first.get_or_insert_with(|| {
                    format!("seed {seed} {scope:?}: got {got:?}, oracle {want:?}")
                });
            }
        }
    }
    (failures, first)
}
