//! Train-and-evaluate runs and learning curves over training-set fractions.

use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::Dataset;
use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, PredictionRecord};
use crate::trainer::{predict_dataset, subsample, train, TrainHistory};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    /// Predictions of the returned parameters on the validation split.
    pub records: Vec<PredictionRecord>,
    pub report: MetricReport,
}

/// Initializes an encoder from `config.train.seed`, trains it, and evaluates
/// the returned parameters on `val` (encoded with the training vocabulary).
pub fn run(train_set: &Dataset, val: &Dataset, config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let encoder = EncoderConfig {
        vocab_size: train_set.vocabulary.len(),
        dim: config.dim,
        hidden: config.hidden,
        num_labels: train_set.num_labels(),
    };
    let init = ModelParams::init(encoder, config.train.seed);
    let (params, history) = train(train_set, val, init, &config.train)?;
    let val = val.clone().with_vocabulary(train_set.vocabulary.clone());
    let records = predict_dataset(&params, &val, config.train.hops, config.train.objective.tau)?;
    let report = evaluate(&records, &val.samples, val.num_labels(), config.gold_scope)?;
    Ok(RunOutcome {
        params,
        history,
        records,
        report,
    })
}

/// One learning-curve point; `seed` is `None` on per-fraction mean rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub fraction: f64,
    pub seed: Option<u64>,
    pub f1a: f64,
    pub accuracy: f64,
    pub rationale_f1: f64,
}

/// For every fraction and seed: subsample the training set with that seed
/// (the full set as is for fraction 1), train with that seed, and evaluate.
/// Each fraction's rows are followed by their mean row.
pub fn learning_curve(
    train_set: &Dataset,
    val: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
    config: &RunConfig,
) -> Result<Vec<CurveRow>> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "learning curve needs at least one fraction and one seed".into(),
        ));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
    }
    let mut rows = Vec::with_capacity(fractions.len() * (seeds.len() + 1));
    for &fraction in fractions {
        let mut group = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let subset = if fraction == 1.0 {
                train_set.clone()
            } else {
                subsample(train_set, fraction, seed)?
            };
            let mut c = config.clone();
            c.train.seed = seed;
            let outcome = run(&subset, val, &c)?;
            group.push(CurveRow {
                fraction,
                seed: Some(seed),
                f1a: outcome.report.f1a,
                accuracy: outcome.report.accuracy,
                rationale_f1: outcome.report.rationale_f1,
            });
        }
        let mean = |f: fn(&CurveRow) -> f64| group.iter().map(f).sum::<f64>() / group.len() as f64;
        let mean_row = CurveRow {
            fraction,
            seed: None,
            f1a: mean(|r| r.f1a),
            accuracy: mean(|r| r.accuracy),
            rationale_f1: mean(|r| r.rationale_f1),
        };
        rows.extend(group);
        rows.push(mean_row);
    }
    Ok(rows)
}

pub const CURVE_HEADER: &str = "fraction,seed,f1a,acc,rationale_f1";

/// CSV with `mean` in the seed column of mean rows.
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        let seed = r.seed.map_or_else(|| "mean".to_owned(), |s| s.to_string());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.fraction, seed, r.f1a, r.accuracy, r.rationale_f1
        ));
    }
    out
}
