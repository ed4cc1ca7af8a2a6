//! Minibatch training of the reference encoder.
//!
//! Every candidate of a sample is scored in the same step, so the candidate
//! softmax is always taken per sample. Per-sample gradients may be computed
//! in parallel; they are summed in batch order, which keeps runs
//! bit-identical for a fixed seed regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_candidates, CandidateSet, Dataset, EncodedSample};
use crate::encoder::{CandidateEncoder, EncoderConfig, Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, predict_sample, GoldScope, MetricReport, PredictionRecord};
use crate::objective::{total_loss_and_grad, ObjectiveConfig};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    AdaptiveMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_step: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub hops: usize,
    pub objective: ObjectiveConfig,
    /// Evaluate every this many steps; 0 evaluates at the end of each epoch.
    pub eval_every: usize,
    pub early_stop_patience: Option<usize>,
    /// Return the best-validation parameters instead of the final ones.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            samples_per_step: 32,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::AdaptiveMoments,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 1,
            hops: 1,
            objective: ObjectiveConfig::default(),
            eval_every: 0,
            early_stop_patience: None,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.samples_per_step == 0 {
            return Err(Error::Config("samples_per_step must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if !(1..=2).contains(&self.hops) {
            return Err(Error::UnsupportedHops(self.hops));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    /// Mean training loss over the steps since the previous evaluation.
    pub train_loss: f64,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub evaluations: Vec<EvalRecord>,
    pub step_losses: Vec<f64>,
    pub best_step: Option<usize>,
}

pub const HISTORY_HEADER: &str =
    "step,loss,f1a,acc,rationale_p,rationale_r,rationale_f1,acc_full,acc_part";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for e in &self.evaluations {
            let m = e.metrics.as_ref();
            let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.step,
                e.train_loss,
                f(m.map(|m| m.f1a)),
                f(m.map(|m| m.accuracy)),
                f(m.map(|m| m.rationale_precision)),
                f(m.map(|m| m.rationale_recall)),
                f(m.map(|m| m.rationale_f1)),
                f(m.map(|m| m.acc_full)),
                f(m.map(|m| m.acc_part)),
            ));
        }
        out
    }
}

/// Parameter-update rules over the six parameter tensors.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
        momentum: f64,
        velocity: ModelParams,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step: i32,
        first: ModelParams,
        second: ModelParams,
    },
}

impl Optimizer {
    pub fn new(config: &TrainConfig, shape: EncoderConfig) -> Self {
        match config.optimizer {
            OptimizerKind::SgdMomentum => Optimizer::Sgd {
                lr: config.learning_rate,
                momentum: config.momentum,
                velocity: ModelParams::zeros(shape),
            },
            OptimizerKind::AdaptiveMoments => Optimizer::Adam {
                lr: config.learning_rate,
                beta1: config.beta1,
                beta2: config.beta2,
                epsilon: config.epsilon,
                step: 0,
                first: ModelParams::zeros(shape),
                second: ModelParams::zeros(shape),
            },
        }
    }

    /// Applies one update given the dense mean gradient.
    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        match self {
            Optimizer::Sgd {
                lr,
                momentum,
                velocity,
            } => {
                for ((p, g), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(velocity.tensors_mut())
                {
                    for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *v = *momentum * *v + g;
                        *p -= *lr * *v;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
                step,
                first,
                second,
            } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(first.tensors_mut())
                    .zip(second.tensors_mut())
                {
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *m = *beta1 * *m + (1.0 - *beta1) * g;
                        *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= *lr * m_hat / (v_hat.sqrt() + *epsilon);
                    }
                }
            }
        }
    }
}

/// A training sample with its candidates and supervision mask precomputed.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub encoded: EncodedSample,
    pub candidates: CandidateSet,
    pub gold_mask: Vec<bool>,
    pub label: usize,
}

pub fn prepare(dataset: &Dataset, hops: usize) -> Result<Vec<PreparedSample>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let candidates = enumerate_candidates(s, hops)?;
            Ok(PreparedSample {
                encoded: dataset.vocabulary.encode(s),
                gold_mask: candidates.gold_mask(&s.gold_rationales),
                candidates,
                label: s.label,
            })
        })
        .collect()
}

/// Loss and parameter gradient of one sample.
pub fn sample_gradient(
    params: &ModelParams,
    sample: &PreparedSample,
    objective: &ObjectiveConfig,
) -> Result<(f64, Gradients)> {
    let (z, cache) = params.forward(&sample.encoded, &sample.candidates)?;
    let loss = total_loss_and_grad(&z, sample.label, &sample.gold_mask, objective)?;
    let grads = params.backward(&cache, &loss.dl_dz)?;
    Ok((loss.total, grads))
}

/// Mean loss and mean dense gradient over `batch`, summed in batch order.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[&PreparedSample],
    objective: &ObjectiveConfig,
) -> Result<(f64, ModelParams)> {
    let per_sample: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|s| sample_gradient(params, s, objective))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut dense = ModelParams::zeros(params.config);
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        g.accumulate_into(&mut dense, scale);
    }
    Ok((loss * scale, dense))
}

/// Predictions for every sample of `dataset`, encoded with `dataset`'s vocabulary.
pub fn predict_dataset<E: CandidateEncoder + Sync>(
    encoder: &E,
    dataset: &Dataset,
    hops: usize,
    tau: f64,
) -> Result<Vec<PredictionRecord>> {
    dataset
        .samples
        .par_iter()
        .map(|s| {
            let c = enumerate_candidates(s, hops)?;
            predict_sample(encoder, s, &dataset.vocabulary.encode(s), &c, tau)
        })
        .collect()
}

fn better(candidate: &MetricReport, best: Option<&MetricReport>) -> bool {
    match best {
        None => true,
        Some(b) => {
            candidate.f1a > b.f1a
                || (candidate.f1a == b.f1a && candidate.rationale_f1 > b.rationale_f1)
        }
    }
}

/// Trains `params_init` on `train_set`, evaluating on `val_set` (encoded
/// with the training vocabulary).
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    params_init: ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    params_init.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if val_set.num_labels() != train_set.num_labels() {
        return Err(Error::Config(format!(
            "train has {} labels, validation has {}",
            train_set.num_labels(),
            val_set.num_labels()
        )));
    }
    if params_init.config.num_labels != train_set.num_labels()
        || params_init.config.vocab_size != train_set.vocabulary.len()
    {
        return Err(Error::VocabMismatch(format!(
            "parameters expect vocab {} / {} labels, training set has {} / {}",
            params_init.config.vocab_size,
            params_init.config.num_labels,
            train_set.vocabulary.len(),
            train_set.num_labels()
        )));
    }

    let prepared = prepare(train_set, config.hops)?;
    let val = val_set
        .clone()
        .with_vocabulary(train_set.vocabulary.clone());

    let mut params = params_init;
    let mut optimizer = Optimizer::new(config, params.config);
    let mut history = TrainHistory::default();
    let mut best: Option<(ModelParams, MetricReport)> = None;
    let mut since_improvement = 0usize;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut shuffle_rng = SplitMix64::stream(config.seed, 1);
    let mut step = 0usize;
    let mut loss_since_eval = Vec::new();

    'epochs: for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let chunks: Vec<&[usize]> = order.chunks(config.samples_per_step).collect();
        for (k, chunk) in chunks.iter().enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (loss, grad) = batch_gradient(&params, &batch, &config.objective)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NonFinite { step, loss });
            }
            optimizer.step(&mut params, &grad);
            history.step_losses.push(loss);
            loss_since_eval.push(loss);

            let epoch_end = k + 1 == chunks.len();
            let due = if config.eval_every == 0 {
                epoch_end
            } else {
                step.is_multiple_of(config.eval_every) || (epoch_end && epoch + 1 == config.epochs)
            };
            if !due {
                continue;
            }
            let train_loss = loss_since_eval.iter().sum::<f64>() / loss_since_eval.len() as f64;
            loss_since_eval.clear();
            let metrics = if val.is_empty() {
                None
            } else {
                let records = predict_dataset(&params, &val, config.hops, config.objective.tau)?;
                Some(evaluate(
                    &records,
                    &val.samples,
                    val.num_labels(),
                    GoldScope::BestMatch,
                )?)
            };
            if let Some(m) = &metrics {
                if better(m, best.as_ref().map(|(_, b)| b)) {
                    best = Some((params.clone(), m.clone()));
                    history.best_step = Some(step);
                    since_improvement = 0;
                } else {
                    since_improvement += 1;
                }
            }
            history.evaluations.push(EvalRecord {
                step,
                epoch: epoch + 1,
                train_loss,
                metrics,
            });
            if let Some(patience) = config.early_stop_patience {
                if since_improvement >= patience {
                    break 'epochs;
                }
            }
        }
    }

    match best {
        Some((p, _)) if config.keep_best => Ok((p, history)),
        _ => Ok((params, history)),
    }
}

/// Seeded, label-stratified sample of `round(fraction * N)` samples without
/// replacement. Per-label quotas use largest remainders (lower label first
/// on ties); the result is shuffled.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = dataset.len();
    let target = (fraction * n as f64).round() as usize;
    if target == 0 {
        return Err(Error::Empty(format!(
            "fraction {fraction} of {n} samples selects nothing"
        )));
    }
    let t = dataset.num_labels();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); t];
    for (i, s) in dataset.samples.iter().enumerate() {
        groups[s.label].push(i);
    }
    let exact: Vec<f64> = groups.iter().map(|g| fraction * g.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = target.saturating_sub(quota.iter().sum());
    let mut by_remainder: Vec<usize> = (0..t).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &c in by_remainder.iter().cycle().take(t * 2) {
        if remaining == 0 {
            break;
        }
        if quota[c] < groups[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = SplitMix64::stream(seed, 2);
    let mut picked = Vec::with_capacity(target);
    for (g, &q) in groups.iter_mut().zip(&quota) {
        rng.shuffle(g);
        picked.extend_from_slice(&g[..q]);
    }
    rng.shuffle(&mut picked);
    Ok(dataset.select(&picked))
}
