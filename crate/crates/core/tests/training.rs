mod common;

use faithsel::corpus::{Candidate, CandidateSet, Dataset};
use faithsel::encoder::{CandidateEncoder, EncoderConfig, ModelParams};
use faithsel::logits::Logits;
use faithsel::objective::ObjectiveConfig;
use faithsel::synthgen::{generate, Family, SynthConfig};
use faithsel::trainer::{
    batch_gradient, prepare, sample_gradient, train, Optimizer, OptimizerKind, PreparedSample,
    TrainConfig, TrainHistory,
};

fn prepared_pool(count: usize) -> Vec<(ModelParams, PreparedSample)> {
    (0..)
        .map(|seed| common::random_instance(seed, 6, 5))
        .filter(|inst| inst.params.config.num_labels == 3)
        .take(count)
        .map(|inst| (inst.params, inst.sample))
        .collect()
}

fn max_abs_diff(a: &ModelParams, b: &ModelParams) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn assert_ordering(history: &TrainHistory) {
    for e in &history.evaluations {
        let m = e.metrics.as_ref().expect("validation metrics");
        assert!(
            m.acc_full <= m.acc_part && m.acc_part <= m.accuracy,
            "step {}: {m:?}",
            e.step
        );
    }
}

fn single_evidence(n: usize, seed: u64) -> Dataset {
    generate(&SynthConfig::reference(Family::SingleEvidence, n, seed)).unwrap()
}

fn init_for(d: &Dataset, dim: usize, hidden: usize, seed: u64) -> ModelParams {
    ModelParams::init(
        EncoderConfig {
            vocab_size: d.vocabulary.len(),
            dim,
            hidden,
            num_labels: d.num_labels(),
        },
        seed,
    )
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let pool = prepared_pool(4);
    let (params, _) = &pool[0];
    for optimizer in [OptimizerKind::SgdMomentum, OptimizerKind::AdaptiveMoments] {
        let config = TrainConfig {
            learning_rate: 0.0,
            optimizer,
            ..TrainConfig::default()
        };
        let mut opt = Optimizer::new(&config, params.config);
        let mut p = params.clone();
        for (_, sample) in pool.iter().cycle().take(25) {
            let (_, g) = sample_gradient(&p, sample, &ObjectiveConfig::default()).unwrap();
            let dense = g.to_dense(p.config);
            opt.step(&mut p, &dense);
        }
        assert_eq!(&p, params);
    }
}

#[test]
fn batch_gradient_is_mean_of_single_sample_gradients() {
    let pool = prepared_pool(6);
    for pair in pool.chunks(2) {
        let params = &pair[0].0;
        let (a, b) = (&pair[0].1, &pair[1].1);
        let objective = ObjectiveConfig {
            tau: 0.5,
            supervised: true,
            ..ObjectiveConfig::default()
        };
        let (la, ga) = batch_gradient(params, &[a], &objective).unwrap();
        let (lb, gb) = batch_gradient(params, &[b], &objective).unwrap();
        let (lab, gab) = batch_gradient(params, &[a, b], &objective).unwrap();
        assert!((lab - (la + lb) / 2.0).abs() <= 1e-12);
        let mut mean = ga.clone();
        for ((m, x), y) in mean
            .tensors_mut()
            .into_iter()
            .zip(ga.tensors())
            .zip(gb.tensors())
        {
            for ((m, x), y) in m.iter_mut().zip(x).zip(y) {
                *m = (x + y) / 2.0;
            }
        }
        assert!(max_abs_diff(&mean, &gab) <= 1e-12);
    }
}

fn plain_cross_entropy(z: &Logits, y: usize) -> (f64, Logits) {
    let row = z.row(0);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    let loss = max + sum.ln() - row[y];
    let mut grad = Logits::zeros(1, z.cols());
    for (c, v) in row.iter().enumerate() {
        let p = (v - max).exp() / sum;
        grad.set(0, c, p - f64::from(u8::from(c == y)));
    }
    (loss, grad)
}

#[test]
fn single_candidate_training_reduces_to_plain_cross_entropy() {
    let mut pool = prepared_pool(5);
    for (_, s) in &mut pool {
        s.candidates = CandidateSet {
            hops: 1,
            candidates: vec![Candidate::query_only()],
        };
        s.gold_mask = vec![false];
    }
    let lr = 0.05;
    let config = TrainConfig {
        learning_rate: lr,
        optimizer: OptimizerKind::SgdMomentum,
        momentum: 0.0,
        ..TrainConfig::default()
    };
    let objective = ObjectiveConfig::default();
    let mut subject = pool[0].0.clone();
    let mut reference = pool[0].0.clone();
    let mut opt = Optimizer::new(&config, subject.config);
    let batch: Vec<&PreparedSample> = pool.iter().map(|(_, s)| s).collect();
    for step in 0..10 {
        let (loss, grad) = batch_gradient(&subject, &batch, &objective).unwrap();
        opt.step(&mut subject, &grad);

        let mut ref_loss = 0.0;
        let mut ref_grad = ModelParams::zeros(reference.config);
        for s in &batch {
            let (z, cache) = reference.forward(&s.encoded, &s.candidates).unwrap();
            let (l, dz) = plain_cross_entropy(&z, s.label);
            ref_loss += l / batch.len() as f64;
            reference
                .backward(&cache, &dz)
                .unwrap()
                .accumulate_into(&mut ref_grad, 1.0 / batch.len() as f64);
        }
        for (p, g) in reference.tensors_mut().into_iter().zip(ref_grad.tensors()) {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        }
        assert!(
            (loss - ref_loss).abs() <= 1e-6,
            "step {step}: {loss} vs {ref_loss}"
        );
    }
    assert!(max_abs_diff(&subject, &reference) <= 1e-6);
}

#[test]
fn one_sgd_step_matches_hand_computed_update() {
    let mut inst = common::random_instance(3, 4, 3);
    let n = inst.sample.encoded.sentences.len();
    inst.sample.encoded.sentences.truncate(2);
    if n < 2 {
        inst.sample.encoded.sentences.push(vec![1, 2]);
    }
    inst.sample.candidates = faithsel::corpus::enumerate_candidates_n(2, 1).unwrap();
    inst.sample.gold_mask = vec![false; inst.sample.candidates.len()];
    let params = inst.params;
    let lr = 0.1;
    let objective = ObjectiveConfig::default();
    let step = 1e-5;
    let mut expected = params.clone();
    let mut probe = params.clone();
    for k in 0..6 {
        for i in 0..params.tensors()[k].len() {
            let orig = params.tensors()[k][i];
            probe.tensors_mut()[k][i] = orig + step;
            let plus = common::total_loss(&probe, &inst.sample, &objective);
            probe.tensors_mut()[k][i] = orig - step;
            let minus = common::total_loss(&probe, &inst.sample, &objective);
            probe.tensors_mut()[k][i] = orig;
            expected.tensors_mut()[k][i] = orig - lr * (plus - minus) / (2.0 * step);
        }
    }
    let config = TrainConfig {
        learning_rate: lr,
        optimizer: OptimizerKind::SgdMomentum,
        ..TrainConfig::default()
    };
    let mut opt = Optimizer::new(&config, params.config);
    let mut updated = params.clone();
    let (_, grad) = batch_gradient(&params, &[&inst.sample], &objective).unwrap();
    opt.step(&mut updated, &grad);
    assert!(max_abs_diff(&updated, &expected) <= 1e-9);
    assert!(max_abs_diff(&updated, &params) > 0.0);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let t = single_evidence(200, 4);
    let v = single_evidence(60, 5);
    let config = TrainConfig {
        epochs: 3,
        eval_every: 4,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&t, &v, init_for(&t, 8, 8, 9), &config).unwrap())
    };
    let (p1, h1) = run(1);
    let (p2, h2) = run(1);
    let (p4, h4) = run(4);
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(h1.to_csv(), h4.to_csv());
    assert_eq!(h1.step_losses, h4.step_losses);
    assert_eq!(p1, p2);
    assert_eq!(p1, p4);
    assert_ordering(&h1);
}

#[test]
fn smoothed_first_epoch_loss_is_non_increasing() {
    let t = single_evidence(2000, 1);
    let v = single_evidence(100, 2);
    let config = TrainConfig {
        epochs: 1,
        samples_per_step: 16,
        ..TrainConfig::default()
    };
    let (_, history) = train(&t, &v, init_for(&t, 16, 16, 1), &config).unwrap();
    let losses = &history.step_losses;
    assert_eq!(losses.len(), 125);
    let window = 20;
    let means: Vec<f64> = losses
        .chunks_exact(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    let violations = means.windows(2).filter(|p| p[1] > p[0]).count();
    let allowed = (0.05 * (means.len() - 1) as f64).floor() as usize;
    assert!(
        violations <= allowed,
        "{violations} of {} windows increase",
        means.len() - 1
    );
    assert_ordering(&history);
}

#[test]
fn history_steps_are_monotone_and_best_is_recorded() {
    let t = single_evidence(120, 6);
    let v = single_evidence(40, 7);
    let config = TrainConfig {
        epochs: 4,
        samples_per_step: 16,
        eval_every: 3,
        hops: 2,
        objective: ObjectiveConfig {
            supervised: true,
            ..ObjectiveConfig::default()
        },
        ..TrainConfig::default()
    };
    let (_, h) = train(&t, &v, init_for(&t, 8, 8, 2), &config).unwrap();
    assert!(h.evaluations.windows(2).all(|w| w[0].step < w[1].step));
    assert_eq!(h.evaluations.last().unwrap().step, h.step_losses.len());
    let best = h.best_step.unwrap();
    assert!(h.evaluations.iter().any(|e| e.step == best));
    assert_ordering(&h);
}

#[test]
fn early_stopping_halts_after_patience() {
    let t = single_evidence(100, 8);
    let v = single_evidence(30, 9);
    let config = TrainConfig {
        epochs: 50,
        early_stop_patience: Some(2),
        ..TrainConfig::default()
    };
    let (_, h) = train(&t, &v, init_for(&t, 8, 8, 3), &config).unwrap();
    assert!(h.evaluations.len() < 50);
    let best_index = h
        .evaluations
        .iter()
        .position(|e| Some(e.step) == h.best_step)
        .unwrap();
    assert_eq!(h.evaluations.len() - 1 - best_index, 2);
    assert_ordering(&h);
}

#[test]
fn prepared_samples_share_one_candidate_set_per_sample() {
    let d = single_evidence(20, 10);
    for hops in [1, 2] {
        for (p, s) in prepare(&d, hops).unwrap().iter().zip(&d.samples) {
            let n = s.num_sentences();
            let expected = 1 + n + if hops == 2 { n * (n - 1) / 2 } else { 0 };
            assert_eq!(p.candidates.len(), expected);
            assert_eq!(p.gold_mask.len(), expected);
        }
    }
}
