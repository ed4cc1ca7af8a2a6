//! Confidence-weighted multi-candidate loss.
//!
//! Each candidate row of `z` is scored with its own cross-entropy `l_i`. The
//! row maximum is the candidate's confidence `c_i`; a temperature softmax of
//! the confidences gives weights `w` and the target loss is `sum_i w_i l_i`.
//! With rationale supervision, adapted confidences `c*` (the gold class logit
//! on gold candidates, the row maximum elsewhere) feed a sigmoid
//! binary cross-entropy against the gold mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{argmax, Logits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub tau: f64,
    pub lambda_rationale: f64,
    pub supervised: bool,
    /// Treat `w` as a constant in the backward pass (ablation only).
    pub stop_grad_weights: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            lambda_rationale: 1.0,
            supervised: false,
            stop_grad_weights: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda_rationale >= 0.0 && self.lambda_rationale.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_rationale must be non-negative, got {}",
                self.lambda_rationale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub losses: Vec<f64>,
    pub confidences: Vec<f64>,
    pub weights: Vec<f64>,
    pub target_loss: f64,
    pub rationale_loss: f64,
    pub total: f64,
    pub dl_dz: Logits,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-row cross-entropy `-log softmax(z_i)[y]`.
pub fn candidate_losses(z: &Logits, y: usize) -> Result<Vec<f64>> {
    if y >= z.cols() {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_labels: z.cols(),
        });
    }
    Ok(z.iter_rows().map(|r| log_sum_exp(r) - r[y]).collect())
}

/// Row maxima and the class index each came from (lowest index on ties).
pub fn confidences_with_argmax(z: &Logits) -> (Vec<f64>, Vec<usize>) {
    z.iter_rows()
        .map(|r| {
            let a = argmax(r).expect("logit rows are non-empty");
            (r[a], a)
        })
        .unzip()
}

pub fn confidences(z: &Logits) -> Vec<f64> {
    confidences_with_argmax(z).0
}

/// Temperature softmax over candidate confidences.
pub fn weights(c: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let scaled: Vec<f64> = c.iter().map(|v| v / tau).collect();
    Ok(softmax(&scaled))
}

pub fn weighted_loss(w: &[f64], l: &[f64]) -> Result<f64> {
    if w.len() != l.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} losses",
            w.len(),
            l.len()
        )));
    }
    Ok(w.iter().zip(l).map(|(a, b)| a * b).sum())
}

/// Adapted confidences: the gold-class logit on gold rows, the row maximum elsewhere.
pub fn supervised_confidences(z: &Logits, y: usize, gold_mask: &[bool]) -> Result<Vec<f64>> {
    check_mask(z, y, gold_mask)?;
    Ok(z.iter_rows()
        .zip(gold_mask)
        .map(|(r, &g)| {
            if g {
                r[y]
            } else {
                r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect())
}

fn check_mask(z: &Logits, y: usize, gold_mask: &[bool]) -> Result<()> {
    if y >= z.cols() {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_labels: z.cols(),
        });
    }
    if gold_mask.len() != z.rows() {
        return Err(Error::Shape(format!(
            "gold mask of length {} for {} candidates",
            gold_mask.len(),
            z.rows()
        )));
    }
    Ok(())
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid binary cross-entropy of `c_star` against the gold mask.
pub fn rationale_bce(c_star: &[f64], gold_mask: &[bool]) -> Result<f64> {
    if c_star.len() != gold_mask.len() {
        return Err(Error::Shape(format!(
            "{} confidences for a mask of {}",
            c_star.len(),
            gold_mask.len()
        )));
    }
    if c_star.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = c_star
        .iter()
        .zip(gold_mask)
        .map(|(&x, &m)| softplus(x) - if m { x } else { 0.0 })
        .sum();
    Ok(sum / c_star.len() as f64)
}

/// Full objective for one sample and its gradient with respect to `z`.
///
/// The gradient has three parts: the per-row cross-entropy scaled by `w_i`;
/// the weight softmax routed through each row's argmax class (omitted when
/// `stop_grad_weights` is set); and, when supervised, the BCE routed through
/// `c*` (gold rows to class `y`, other rows to their argmax class).
pub fn total_loss_and_grad(
    z: &Logits,
    y: usize,
    gold_mask: &[bool],
    config: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    config.validate()?;
    check_mask(z, y, gold_mask)?;
    let n = z.rows();
    let t = z.cols();

    let losses = candidate_losses(z, y)?;
    let (conf, arg) = confidences_with_argmax(z);
    let w = weights(&conf, config.tau)?;
    let target_loss = weighted_loss(&w, &losses)?;

    let mut dl_dz = Logits::zeros(n, t);
    for i in 0..n {
        let row = z.row(i);
        let p = softmax(row);
        let g = dl_dz.row_mut(i);
        for c in 0..t {
            g[c] = w[i] * (p[c] - if c == y { 1.0 } else { 0.0 });
        }
        if !config.stop_grad_weights {
            // dL/dc_i = w_i (l_i - L) / tau
            g[arg[i]] += w[i] * (losses[i] - target_loss) / config.tau;
        }
    }

    let mut rationale_loss = 0.0;
    if config.supervised {
        let c_star = supervised_confidences(z, y, gold_mask)?;
        rationale_loss = rationale_bce(&c_star, gold_mask)?;
        let scale = config.lambda_rationale / n as f64;
        for i in 0..n {
            let target = if gold_mask[i] { 1.0 } else { 0.0 };
            let col = if gold_mask[i] { y } else { arg[i] };
            let cur = dl_dz.get(i, col);
            dl_dz.set(i, col, cur + scale * (sigmoid(c_star[i]) - target));
        }
    }

    let total = target_loss
        + if config.supervised {
            config.lambda_rationale * rationale_loss
        } else {
            0.0
        };

    Ok(LossBreakdown {
        losses,
        confidences: conf,
        weights: w,
        target_loss,
        rationale_loss,
        total,
        dl_dz,
    })
}
