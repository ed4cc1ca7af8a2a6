mod common;

use std::collections::BTreeSet;

use faithsel::analysis::{normalized_logits, solvability_split};
use faithsel::baseline::{select_sentence, OverlapMode};
use faithsel::corpus::{
    enumerate_candidates_n, read_native, write_native, CandidateSet, Rationale, Sample, Sentence,
    Token,
};
use faithsel::encoder::{aggregate_pair, CandidateEncoder};
use faithsel::metrics::{evaluate, rationale_prf, GoldScope, MetricReport};
use faithsel::objective::{total_loss_and_grad, ObjectiveConfig};
use faithsel::rng::SplitMix64;
use faithsel::stopwords::{Stoplist, ENGLISH};
use faithsel::synthgen::{generate, Family, SynthConfig};
use faithsel::trainer::predict_dataset;
use proptest::prelude::*;

const FAMILIES: [Family; 3] = [Family::SingleEvidence, Family::TwoHop, Family::Discussion];

proptest! {
    #[test]
    fn candidate_counts_and_layout(n in 0usize..12, hops in 1usize..=2) {
        let c = enumerate_candidates_n(n, hops).unwrap();
        let expected = n + 1 + if hops == 2 { n * n.saturating_sub(1) / 2 } else { 0 };
        prop_assert_eq!(c.len(), expected);
        prop_assert!(c.get(0).is_query_only());
        prop_assert!(c.iter().skip(1).all(|x| !x.is_query_only()));
        prop_assert!(c.iter().all(|x| x.len() <= hops && x.indices().iter().all(|&i| i < n)));
        let distinct: BTreeSet<_> = c.iter().collect();
        prop_assert_eq!(distinct.len(), c.len());
    }

    #[test]
    fn aggregate_pair_is_symmetric(
        pair in (1usize..10).prop_flat_map(|k| (
            prop::collection::vec(-3.0f64..3.0, k),
            prop::collection::vec(-3.0f64..3.0, k),
        ))
    ) {
        let (a, b) = pair;
        prop_assert_eq!(aggregate_pair(&a, &b).unwrap(), aggregate_pair(&b, &a).unwrap());
    }

    #[test]
    fn lambda_zero_makes_supervision_irrelevant(seed in 0u64..500, tau in 0.1f64..5.0) {
        let inst = common::random_instance(seed, 4, 4);
        let z = inst.params.logits(&inst.sample.encoded, &inst.sample.candidates).unwrap();
        let base = ObjectiveConfig { tau, lambda_rationale: 0.0, ..ObjectiveConfig::default() };
        let sup = ObjectiveConfig { supervised: true, ..base };
        let a = total_loss_and_grad(&z, inst.sample.label, &inst.sample.gold_mask, &base).unwrap();
        let b = total_loss_and_grad(&z, inst.sample.label, &inst.sample.gold_mask, &sup).unwrap();
        prop_assert_eq!(a.total, b.total);
        prop_assert_eq!(a.dl_dz, b.dl_dz);
        prop_assert!(a.total >= 0.0);
        let with_bce = ObjectiveConfig { lambda_rationale: 1.5, ..sup };
        let c = total_loss_and_grad(&z, inst.sample.label, &inst.sample.gold_mask, &with_bce).unwrap();
        prop_assert!(c.total >= 0.0);
    }

    #[test]
    fn solvability_split_is_a_partition(
        table in (1usize..30, 1usize..5).prop_flat_map(|(n, k)| (
            Just(n),
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), k),
        ))
    ) {
        let (n, correctness) = table;
        let groups = solvability_split(&correctness, n).unwrap();
        prop_assert_eq!(groups.len(), correctness.len() + 1);
        let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                prop_assert_eq!(correctness.iter().filter(|c| c[i]).count(), g);
            }
        }
    }
}

#[test]
fn encoder_rows_follow_candidate_order() {
    for seed in 0..30 {
        let inst = common::random_instance(seed, 5, 4);
        let cands = &inst.sample.candidates;
        let z = inst.params.logits(&inst.sample.encoded, cands).unwrap();
        let mut order: Vec<usize> = (0..cands.len()).collect();
        SplitMix64::new(seed).shuffle(&mut order);
        let permuted = CandidateSet {
            hops: cands.hops,
            candidates: order.iter().map(|&i| cands.get(i).clone()).collect(),
        };
        let zp = inst.params.logits(&inst.sample.encoded, &permuted).unwrap();
        for (row, &i) in order.iter().enumerate() {
            assert_eq!(zp.row(row), z.row(i));
        }
    }
}

#[test]
fn native_format_round_trips_every_family() {
    let dir = tempfile::tempdir().unwrap();
    for family in FAMILIES {
        let d = generate(&SynthConfig::reference(family, 50, 3)).unwrap();
        let path = dir.path().join(format!("{family:?}.jsonl"));
        write_native(&d, &path).unwrap();
        let back = read_native(&path).unwrap();
        assert_eq!(back, d);
        let again = dir.path().join("again.jsonl");
        write_native(&back, &again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }
}

#[test]
fn generators_are_pure_functions_of_their_config() {
    for family in FAMILIES {
        let c = SynthConfig::reference(family, 40, 17);
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = SynthConfig { seed: 18, ..c };
        assert_ne!(generate(&c).unwrap(), generate(&other).unwrap());
    }
}

fn permute<T: Clone>(items: &[T], order: &[usize]) -> Vec<T> {
    order.iter().map(|&i| items[i].clone()).collect()
}

fn close(a: &MetricReport, b: &MetricReport) -> bool {
    let scalars = |r: &MetricReport| {
        vec![
            r.f1a,
            r.accuracy,
            r.rationale_precision,
            r.rationale_recall,
            r.rationale_f1,
            r.acc_full,
            r.acc_part,
            r.iou_f1,
            r.token_f1,
        ]
        .into_iter()
        .chain(r.class_recall.iter().copied())
        .collect::<Vec<_>>()
    };
    a.samples == b.samples
        && scalars(a)
            .iter()
            .zip(scalars(b))
            .all(|(x, y)| (x - y).abs() <= 1e-12)
}

#[test]
fn metrics_are_permutation_invariant_over_samples() {
    for seed in 0..200 {
        let inst = common::oracle::random_instance(seed);
        let mut order: Vec<usize> = (0..inst.samples.len()).collect();
        SplitMix64::new(seed).shuffle(&mut order);
        let samples = permute(&inst.samples, &order);
        let records = permute(&inst.records, &order);
        for scope in [GoldScope::BestMatch, GoldScope::AllGold] {
            let a = evaluate(&inst.records, &inst.samples, inst.num_labels, scope).unwrap();
            let b = evaluate(&records, &samples, inst.num_labels, scope).unwrap();
            assert!(close(&a, &b), "seed {seed}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn rationale_f1_extremes() {
    for seed in 0..300 {
        let inst = common::oracle::random_instance(seed);
        for (r, s) in inst.records.iter().zip(&inst.samples) {
            if s.gold_rationales.is_empty() {
                continue;
            }
            let prf = rationale_prf(std::slice::from_ref(r), std::slice::from_ref(s)).unwrap();
            let sel = r.selected_set();
            assert_eq!(prf.f1 == 1.0, s.gold_rationales.contains(&sel));
            assert_eq!(
                prf.f1 == 0.0,
                s.gold_rationales.iter().all(|g| g.is_disjoint(&sel))
            );
        }
    }
}

#[test]
fn normalized_logits_span_the_unit_interval() {
    let d = generate(&SynthConfig::reference(Family::TwoHop, 30, 5)).unwrap();
    for seed in 0..5 {
        let params = faithsel::encoder::ModelParams::init(
            faithsel::encoder::EncoderConfig {
                vocab_size: d.vocabulary.len(),
                dim: 6,
                hidden: 5,
                num_labels: d.num_labels(),
            },
            seed,
        );
        let records = predict_dataset(&params, &d, 2, 1.0).unwrap();
        let rows = normalized_logits(&records, &d.samples).unwrap();
        assert_eq!(
            rows.len(),
            records.iter().map(|r| r.candidates.len()).sum::<usize>()
        );
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.value)));
        assert!(rows.iter().any(|r| r.value == 0.0));
        assert!(rows.iter().any(|r| r.value == 1.0));
    }
}

const WORDS: &[&str] = &[
    "the", "river", "bank", "of", "a", "flood", "city", "wall", "is", "red", "storm", "north",
];

fn words(rng: &mut SplitMix64, len: usize) -> Vec<Token> {
    (0..len)
        .map(|_| Token::new(WORDS[rng.below(WORDS.len())]).unwrap())
        .collect()
}

fn qa_sample(rng: &mut SplitMix64, question: &[Token], answer: Vec<Token>) -> Sample {
    let n = 2 + rng.below(5);
    Sample {
        id: "x".into(),
        query: question
            .iter()
            .cloned()
            .chain(answer.iter().cloned())
            .collect(),
        answer: Some(answer),
        document: (0..n)
            .map(|index| Sentence {
                index,
                tokens: {
                    let len = 1 + rng.below(6);
                    words(rng, len)
                },
            })
            .collect(),
        label: 0,
        gold_rationales: BTreeSet::<Rationale>::new(),
    }
}

#[test]
fn sentence_selection_ignores_weight_scale() {
    let stoplist = Stoplist::new(ENGLISH.iter().copied());
    let mut rng = SplitMix64::new(41);
    for _ in 0..300 {
        let q = {
            let len = 1 + rng.below(4);
            words(&mut rng, len)
        };
        let a = {
            let len = 1 + rng.below(3);
            words(&mut rng, len)
        };
        let s = qa_sample(&mut rng, &q, a);
        let w_q = rng.uniform(0.0, 1.0);
        let w_a = rng.uniform(0.0, 1.0);
        for mode in [OverlapMode::Absolute, OverlapMode::Relative] {
            let base = select_sentence(&s, w_q, w_a, mode, &stoplist).unwrap();
            for alpha in [0.25, 2.0, 10.0] {
                let scaled = select_sentence(&s, alpha * w_q, alpha * w_a, mode, &stoplist);
                assert_eq!(scaled.unwrap(), base);
            }
        }
    }
}

#[test]
fn question_only_selection_ignores_answers() {
    let stoplist = Stoplist::new(ENGLISH.iter().copied());
    let mut rng = SplitMix64::new(42);
    for _ in 0..300 {
        let q = {
            let len = 1 + rng.below(4);
            words(&mut rng, len)
        };
        let first = words(&mut rng, 2);
        let base = qa_sample(&mut rng, &q, first);
        for mode in [OverlapMode::Absolute, OverlapMode::Relative] {
            let chosen = select_sentence(&base, 0.7, 0.0, mode, &stoplist).unwrap();
            for _ in 0..5 {
                let answer = {
                    let len = 1 + rng.below(3);
                    words(&mut rng, len)
                };
                let swapped = Sample {
                    query: q.iter().cloned().chain(answer.iter().cloned()).collect(),
                    answer: Some(answer),
                    ..base.clone()
                };
                assert_eq!(
                    select_sentence(&swapped, 0.7, 0.0, mode, &stoplist).unwrap(),
                    chosen
                );
            }
        }
    }
}
