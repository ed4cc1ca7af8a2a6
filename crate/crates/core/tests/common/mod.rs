#![allow(dead_code)]
pub mod oracle;

use std::collections::BTreeSet;

use faithsel::corpus::{enumerate_candidates_n, Candidate, EncodedSample, Rationale};
use faithsel::encoder::{CandidateEncoder, EncoderConfig, ModelParams};
use faithsel::objective::{total_loss_and_grad, ObjectiveConfig};
use faithsel::rng::SplitMix64;
use faithsel::trainer::PreparedSample;

pub const VOCAB: usize = 12;

/// A random small sample with a random gold rationale and randomly
/// perturbed parameters.
pub struct Instance {
    pub params: ModelParams,
    pub sample: PreparedSample,
    pub hops: usize,
}

/// Smallest distance of an instance from the points where the loss is not
/// differentiable: ties between the two largest logits of a row, and ties
/// between the hidden units of two sentences that form a pair.
pub fn kink_margin(params: &ModelParams, sample: &PreparedSample) -> f64 {
    let (z, cache) = params.forward(&sample.encoded, &sample.candidates).unwrap();
    let mut margin = f64::INFINITY;
    for row in z.iter_rows() {
        let mut sorted = row.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        margin = margin.min(sorted[0] - sorted[1]);
    }
    for c in sample.candidates.iter() {
        if let [a, b] = c.indices() {
            let row = |k: usize| sample.candidates.position(&Candidate::single(k)).unwrap();
            let (ha, hb) = (cache.representation(row(*a)), cache.representation(row(*b)));
            for (x, y) in ha.iter().zip(hb) {
                margin = margin.min((x - y).abs());
            }
        }
    }
    margin
}

pub const KINK_MARGIN: f64 = 1e-2;
/// Added to the default initialization so biases are non-zero too.
pub const PERTURBATION: f64 = 0.2;

/// First draw for `seed` whose kink margin is at least [`KINK_MARGIN`].
pub fn random_instance(seed: u64, dim: usize, hidden: usize) -> Instance {
    (0u64..)
        .map(|attempt| draw_instance(seed, attempt, dim, hidden))
        .find(|inst| kink_margin(&inst.params, &inst.sample) >= KINK_MARGIN)
        .unwrap()
}

fn draw_instance(seed: u64, attempt: u64, dim: usize, hidden: usize) -> Instance {
    let mut rng = SplitMix64::stream(seed, 77 + attempt);
    let t = 2 + rng.below(2);
    let n = 1 + rng.below(5);
    let hops = 1 + rng.below(2);
    let tokens = |len: usize, rng: &mut SplitMix64| -> Vec<u32> {
        (0..len).map(|_| rng.below(VOCAB) as u32).collect()
    };
    let query = tokens(1 + rng.below(3), &mut rng);
    let sentences = (0..n).map(|_| tokens(1 + rng.below(4), &mut rng)).collect();
    let candidates = enumerate_candidates_n(n, hops).unwrap();
    let mut gold: Rationale = BTreeSet::new();
    gold.insert(rng.below(n));
    if hops == 2 && n >= 2 && rng.chance(0.5) {
        gold.insert(rng.below(n));
    }
    let golds: BTreeSet<Rationale> = [gold].into_iter().collect();
    let config = EncoderConfig {
        vocab_size: VOCAB,
        dim,
        hidden,
        num_labels: t,
    };
    let mut params = ModelParams::init(config, seed.wrapping_mul(31).wrapping_add(attempt));
    for tensor in params.tensors_mut() {
        for x in tensor.iter_mut() {
            *x += rng.uniform(-PERTURBATION, PERTURBATION);
        }
    }
    Instance {
        params,
        sample: PreparedSample {
            encoded: EncodedSample { query, sentences },
            gold_mask: candidates.gold_mask(&golds),
            candidates,
            label: rng.below(t),
        },
        hops,
    }
}

pub fn total_loss(
    params: &ModelParams,
    sample: &PreparedSample,
    objective: &ObjectiveConfig,
) -> f64 {
    let z = params.logits(&sample.encoded, &sample.candidates).unwrap();
    total_loss_and_grad(&z, sample.label, &sample.gold_mask, objective)
        .unwrap()
        .total
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter, with `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(
    params: &ModelParams,
    sample: &PreparedSample,
    objective: &ObjectiveConfig,
    step: f64,
    floor: f64,
) -> f64 {
    let (_, grads) = faithsel::trainer::sample_gradient(params, sample, objective).unwrap();
    let analytic = grads.to_dense(params.config);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for k in 0..6 {
        let len = probe.tensors()[k].len();
        for i in 0..len {
            let orig = probe.tensors()[k][i];
            probe.tensors_mut()[k][i] = orig + step;
            let plus = total_loss(&probe, sample, objective);
            probe.tensors_mut()[k][i] = orig - step;
            let minus = total_loss(&probe, sample, objective);
            probe.tensors_mut()[k][i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.tensors()[k][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}
