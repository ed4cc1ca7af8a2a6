//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Unknown or repeated keys are errors. [`RunConfig::echo`] writes every key
//! in [`KEYS`] order, and parsing an echo reproduces the same configuration.
//!
//! | key | meaning |
//! |-----|---------|
//! | `seed` | seed for initialization and batch order |
//! | `dim`, `hidden` | encoder embedding and hidden sizes |
//! | `epochs`, `samples_per_step`, `learning_rate` | optimization loop |
//! | `optimizer` | `adaptive_moments` or `sgd_momentum` |
//! | `momentum`, `beta1`, `beta2`, `epsilon` | optimizer constants |
//! | `hops` | maximum sentences per candidate (1 or 2) |
//! | `tau`, `lambda_rationale`, `supervised`, `stop_grad_weights` | objective |
//! | `eval_every` | steps between evaluations, 0 for once per epoch |
//! | `early_stop_patience` | evaluations without improvement, or `none` |
//! | `keep_best` | return the best-validation parameters |
//! | `gold_scope` | `best_match` or `all_gold` for IOU/token F1 |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::GoldScope;
use crate::trainer::{OptimizerKind, TrainConfig};

pub const KEYS: &[&str] = &[
    "seed",
    "dim",
    "hidden",
    "epochs",
    "samples_per_step",
    "learning_rate",
    "optimizer",
    "momentum",
    "beta1",
    "beta2",
    "epsilon",
    "hops",
    "tau",
    "lambda_rationale",
    "supervised",
    "stop_grad_weights",
    "eval_every",
    "early_stop_patience",
    "keep_best",
    "gold_scope",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dim: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    pub gold_scope: GoldScope,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            hidden: 16,
            train: TrainConfig::default(),
            gold_scope: GoldScope::BestMatch,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value '{value}' for {key} (expected true or false)"
        ))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "samples_per_step" => t.samples_per_step = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "optimizer" => {
                t.optimizer = match value {
                    "adaptive_moments" => OptimizerKind::AdaptiveMoments,
                    "sgd_momentum" => OptimizerKind::SgdMomentum,
                    _ => {
                        return Err(Error::Config(format!(
                        "unknown optimizer '{value}' (expected adaptive_moments or sgd_momentum)"
                    )))
                    }
                }
            }
            "momentum" => t.momentum = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "hops" => t.hops = parse(key, value)?,
            "tau" => t.objective.tau = parse(key, value)?,
            "lambda_rationale" => t.objective.lambda_rationale = parse(key, value)?,
            "supervised" => t.objective.supervised = parse_bool(key, value)?,
            "stop_grad_weights" => t.objective.stop_grad_weights = parse_bool(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "early_stop_patience" => {
                t.early_stop_patience = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "keep_best" => t.keep_best = parse_bool(key, value)?,
            "gold_scope" => {
                self.gold_scope = match value {
                    "best_match" => GoldScope::BestMatch,
                    "all_gold" => GoldScope::AllGold,
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown gold_scope '{value}' (expected best_match or all_gold)"
                        )))
                    }
                }
            }
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "seed" => t.seed.to_string(),
            "dim" => self.dim.to_string(),
            "hidden" => self.hidden.to_string(),
            "epochs" => t.epochs.to_string(),
            "samples_per_step" => t.samples_per_step.to_string(),
            "learning_rate" => format!("{:?}", t.learning_rate),
            "optimizer" => match t.optimizer {
                OptimizerKind::AdaptiveMoments => "adaptive_moments".into(),
                OptimizerKind::SgdMomentum => "sgd_momentum".into(),
            },
            "momentum" => format!("{:?}", t.momentum),
            "beta1" => format!("{:?}", t.beta1),
            "beta2" => format!("{:?}", t.beta2),
            "epsilon" => format!("{:?}", t.epsilon),
            "hops" => t.hops.to_string(),
            "tau" => format!("{:?}", t.objective.tau),
            "lambda_rationale" => format!("{:?}", t.objective.lambda_rationale),
            "supervised" => t.objective.supervised.to_string(),
            "stop_grad_weights" => t.objective.stop_grad_weights.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "early_stop_patience" => t
                .early_stop_patience
                .map_or_else(|| "none".into(), |p| p.to_string()),
            "keep_best" => t.keep_best.to_string(),
            "gold_scope" => match self.gold_scope {
                GoldScope::BestMatch => "best_match".into(),
                GoldScope::AllGold => "all_gold".into(),
            },
            _ => unreachable!("key list and getters out of sync"),
        }
    }

    /// Applies `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("config line {}", n + 1),
                message: format!("expected key = value, got '{line}'"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_owned()) {
                return Err(Error::Parse {
                    location: format!("config line {}", n + 1),
                    message: format!("repeated key '{key}'"),
                });
            }
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("dim and hidden must be >= 1".into()));
        }
        self.train.validate()
    }

    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key)).expect("writing to a string");
        }
        out
    }
}
