//! Candidate encoders.
//!
//! Any model that maps every `(query, candidate)` pair of a sample to one row
//! of label logits can drive selection and evaluation through
//! [`CandidateEncoder`]. [`ModelParams`] is the reference encoder used for
//! training:
//!
//! ```text
//! q     = mean of query token embeddings
//! v_s   = mean of sentence-token embeddings, or `null_sentence` for the query-only input
//! h_s   = tanh([q ; v_s] W1 + b1)
//! h     = h_s for a singleton, max(h_a, h_b) elementwise for a pair {a, b}
//! z     = h W2 + b2
//! ```
//!
//! Matrices are row-major: `embedding[v * d + k]`, `w1[i * d_h + j]` with
//! `i < 2d` (query half first), `w2[j * t + c]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateSet, EncodedSample};
use crate::error::{Error, Result};
use crate::logits::Logits;
use crate::rng::SplitMix64;

/// Contract shared by every encoder: one logit row per candidate, no
/// interaction between candidates.
pub trait CandidateEncoder {
    type Cache;

    fn num_labels(&self) -> usize;

    fn forward(
        &self,
        sample: &EncodedSample,
        candidates: &CandidateSet,
    ) -> Result<(Logits, Self::Cache)>;

    fn logits(&self, sample: &EncodedSample, candidates: &CandidateSet) -> Result<Logits> {
        self.forward(sample, candidates).map(|(z, _)| z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Hidden dimension `d_h`.
    pub hidden: usize,
    pub num_labels: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.dim == 0 || self.hidden == 0 || self.num_labels == 0 {
            return Err(Error::Config(format!("degenerate encoder config {self:?}")));
        }
        Ok(())
    }
}

/// Trainable parameters of the reference encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub embedding: Vec<f64>,
    pub null_sentence: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub const INIT_SCALE: f64 = 0.1;

impl ModelParams {
    pub fn zeros(config: EncoderConfig) -> Self {
        let EncoderConfig {
            vocab_size: v,
            dim: d,
            hidden: dh,
            num_labels: t,
        } = config;
        Self {
            config,
            embedding: vec![0.0; v * d],
            null_sentence: vec![0.0; d],
            w1: vec![0.0; 2 * d * dh],
            b1: vec![0.0; dh],
            w2: vec![0.0; dh * t],
            b2: vec![0.0; t],
        }
    }

    /// Embeddings, null sentence and weights uniform in `[-0.1, 0.1]`, drawn
    /// in that order from `SplitMix64::new(seed)`; biases zero.
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = SplitMix64::new(seed);
        for buf in [&mut p.embedding, &mut p.null_sentence, &mut p.w1, &mut p.w2] {
            for x in buf.iter_mut() {
                *x = rng.uniform(-INIT_SCALE, INIT_SCALE);
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let z = Self::zeros(self.config);
        for (name, (a, b)) in Self::NAMES
            .iter()
            .zip(self.tensors().iter().zip(z.tensors()))
        {
            if a.len() != b.len() {
                return Err(Error::Shape(format!(
                    "{name} has {} values, config implies {}",
                    a.len(),
                    b.len()
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::Shape(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub const NAMES: [&'static str; 6] = ["embedding", "null_sentence", "w1", "b1", "w2", "b2"];

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.embedding,
            &self.null_sentence,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.embedding,
            &mut self.null_sentence,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn embedding_row(&self, id: u32) -> &[f64] {
        let d = self.config.dim;
        &self.embedding[id as usize * d..(id as usize + 1) * d]
    }

    fn mean_embedding(&self, ids: &[u32]) -> Vec<f64> {
        let d = self.config.dim;
        let mut out = vec![0.0; d];
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            for (o, e) in out.iter_mut().zip(self.embedding_row(id)) {
                *o += e;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            Some(id) => Err(Error::Shape(format!(
                "token id {id} outside vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Accumulates `x` (length `rows`) times the row block of `w1` starting at `row0`.
    fn w1_block_times(&self, x: &[f64], row0: usize, out: &mut [f64]) {
        let dh = self.config.hidden;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w1[(row0 + i) * dh..(row0 + i + 1) * dh];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Elementwise maximum of two penultimate vectors. Ties take the first operand.
pub fn aggregate_pair(h_a: &[f64], h_b: &[f64]) -> Result<Vec<f64>> {
    if h_a.len() != h_b.len() {
        return Err(Error::Shape(format!(
            "aggregate_pair lengths {} and {}",
            h_a.len(),
            h_b.len()
        )));
    }
    Ok(h_a
        .iter()
        .zip(h_b)
        .map(|(&a, &b)| if a >= b { a } else { b })
        .collect())
}

/// Per-candidate source of the penultimate representation.
#[derive(Debug, Clone)]
enum Route {
    /// Unit index (0 = null sentence, 1 + i = sentence i).
    Unit(usize),
    /// Pair of units; `from_first[k]` is true where coordinate `k` came from the first.
    Pair {
        a: usize,
        b: usize,
        from_first: Vec<bool>,
    },
}

/// Activations saved by the reference forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    query: Vec<u32>,
    sentences: Vec<Vec<u32>>,
    query_mean: Vec<f64>,
    /// Per unit: mean input vector and tanh output.
    unit_inputs: Vec<Vec<f64>>,
    unit_hidden: Vec<Vec<f64>>,
    unit_used: Vec<bool>,
    routes: Vec<Route>,
    reps: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn num_candidates(&self) -> usize {
        self.routes.len()
    }

    /// Penultimate representation of candidate `i`.
    pub fn representation(&self, i: usize) -> &[f64] {
        &self.reps[i]
    }
}

impl CandidateEncoder for ModelParams {
    type Cache = ForwardCache;

    fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    fn forward(
        &self,
        sample: &EncodedSample,
        candidates: &CandidateSet,
    ) -> Result<(Logits, ForwardCache)> {
        let EncoderConfig {
            dim: d,
            hidden: dh,
            num_labels: t,
            ..
        } = self.config;
        self.validate_shapes()?;
        self.check_ids(&sample.query)?;
        for s in &sample.sentences {
            self.check_ids(s)?;
        }
        let n = sample.sentences.len();

        let mut unit_used = vec![false; n + 1];
        let mut routes = Vec::with_capacity(candidates.len());
        for c in candidates.iter() {
            let idx = c.indices();
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::Shape(format!(
                    "candidate refers to sentence {bad} of {n}"
                )));
            }
            let route = match idx {
                [] => Route::Unit(0),
                [i] => Route::Unit(i + 1),
                [a, b] => Route::Pair {
                    a: a + 1,
                    b: b + 1,
                    from_first: Vec::new(),
                },
                _ => {
                    return Err(Error::Shape(format!(
                        "candidate of size {} not supported",
                        idx.len()
                    )))
                }
            };
            match &route {
                Route::Unit(u) => unit_used[*u] = true,
                Route::Pair { a, b, .. } => {
                    unit_used[*a] = true;
                    unit_used[*b] = true;
                }
            }
            routes.push(route);
        }

        let query_mean = self.mean_embedding(&sample.query);
        let mut query_part = self.b1.clone();
        self.w1_block_times(&query_mean, 0, &mut query_part);

        let mut unit_inputs = Vec::with_capacity(n + 1);
        let mut unit_hidden = Vec::with_capacity(n + 1);
        for u in 0..=n {
            if !unit_used[u] {
                unit_inputs.push(Vec::new());
                unit_hidden.push(Vec::new());
                continue;
            }
            let v = if u == 0 {
                self.null_sentence.clone()
            } else {
                self.mean_embedding(&sample.sentences[u - 1])
            };
            let mut pre = query_part.clone();
            self.w1_block_times(&v, d, &mut pre);
            unit_hidden.push(pre.iter().map(|x| x.tanh()).collect());
            unit_inputs.push(v);
        }

        let mut z = Logits::zeros(routes.len(), t);
        let mut reps = Vec::with_capacity(routes.len());
        for (i, route) in routes.iter_mut().enumerate() {
            let h = match route {
                Route::Unit(u) => unit_hidden[*u].clone(),
                Route::Pair { a, b, from_first } => {
                    let (ha, hb) = (&unit_hidden[*a], &unit_hidden[*b]);
                    *from_first = ha.iter().zip(hb).map(|(x, y)| x >= y).collect();
                    aggregate_pair(ha, hb)?
                }
            };
            let row = z.row_mut(i);
            row.copy_from_slice(&self.b2);
            for (j, &hj) in h.iter().enumerate().take(dh) {
                for (r, w) in row.iter_mut().zip(&self.w2[j * t..(j + 1) * t]) {
                    *r += hj * w;
                }
            }
            reps.push(h);
        }

        Ok((
            z,
            ForwardCache {
                query: sample.query.clone(),
                sentences: sample.sentences.clone(),
                query_mean,
                unit_inputs,
                unit_hidden,
                unit_used,
                routes,
                reps,
            },
        ))
    }
}

/// Gradient of a scalar loss with respect to [`ModelParams`]; embedding rows
/// are stored sparsely by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: BTreeMap<u32, Vec<f64>>,
    pub null_sentence: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros(config: EncoderConfig) -> Self {
        let z = ModelParams::zeros(config);
        Self {
            embedding: BTreeMap::new(),
            null_sentence: z.null_sentence,
            w1: z.w1,
            b1: z.b1,
            w2: z.w2,
            b2: z.b2,
        }
    }

    /// `dense += scale * self`, with `dense` shaped like the parameters.
    pub fn accumulate_into(&self, dense: &mut ModelParams, scale: f64) {
        let d = dense.config.dim;
        for (&id, row) in &self.embedding {
            let dst = &mut dense.embedding[id as usize * d..(id as usize + 1) * d];
            for (o, g) in dst.iter_mut().zip(row) {
                *o += scale * g;
            }
        }
        for (dst, src) in [
            (&mut dense.null_sentence, &self.null_sentence),
            (&mut dense.w1, &self.w1),
            (&mut dense.b1, &self.b1),
            (&mut dense.w2, &self.w2),
            (&mut dense.b2, &self.b2),
        ] {
            for (o, g) in dst.iter_mut().zip(src) {
                *o += scale * g;
            }
        }
    }

    pub fn to_dense(&self, config: EncoderConfig) -> ModelParams {
        let mut dense = ModelParams::zeros(config);
        self.accumulate_into(&mut dense, 1.0);
        dense
    }
}

impl ModelParams {
    fn validate_shapes(&self) -> Result<()> {
        let EncoderConfig {
            vocab_size: v,
            dim: d,
            hidden: dh,
            num_labels: t,
        } = self.config;
        let ok = self.embedding.len() == v * d
            && self.null_sentence.len() == d
            && self.w1.len() == 2 * d * dh
            && self.b1.len() == dh
            && self.w2.len() == dh * t
            && self.b2.len() == t;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter shapes do not match config {:?}",
                self.config
            )))
        }
    }

    /// Gradient of the loss with respect to every parameter, given `dl_dz`
    /// and the cache of the forward pass that produced `z`.
    pub fn backward(&self, cache: &ForwardCache, dl_dz: &Logits) -> Result<Gradients> {
        let EncoderConfig {
            dim: d,
            hidden: dh,
            num_labels: t,
            ..
        } = self.config;
        if dl_dz.rows() != cache.routes.len() || dl_dz.cols() != t {
            return Err(Error::Shape(format!(
                "dL/dz is {}x{}, cache expects {}x{t}",
                dl_dz.rows(),
                dl_dz.cols(),
                cache.routes.len()
            )));
        }
        if cache.query_mean.len() != d
            || cache
                .unit_hidden
                .iter()
                .any(|h| !h.is_empty() && h.len() != dh)
        {
            return Err(Error::Shape("cache does not match parameters".into()));
        }
        let mut g = Gradients::zeros(self.config);

        // Head and routing of dL/dh back to units.
        let mut unit_grad = vec![vec![0.0; dh]; cache.unit_hidden.len()];
        for (i, route) in cache.routes.iter().enumerate() {
            let dz = dl_dz.row(i);
            let h = &cache.reps[i];
            for (b, &v) in g.b2.iter_mut().zip(dz) {
                *b += v;
            }
            let mut dh_vec = vec![0.0; dh];
            for j in 0..dh {
                let w_row = &self.w2[j * t..(j + 1) * t];
                let g_row = &mut g.w2[j * t..(j + 1) * t];
                let mut acc = 0.0;
                for c in 0..t {
                    g_row[c] += h[j] * dz[c];
                    acc += w_row[c] * dz[c];
                }
                dh_vec[j] = acc;
            }
            match route {
                Route::Unit(u) => {
                    for (o, v) in unit_grad[*u].iter_mut().zip(&dh_vec) {
                        *o += v;
                    }
                }
                Route::Pair { a, b, from_first } => {
                    for (k, &v) in dh_vec.iter().enumerate() {
                        let target = if from_first[k] { *a } else { *b };
                        unit_grad[target][k] += v;
                    }
                }
            }
        }

        // Hidden layer.
        let mut d_query = vec![0.0; d];
        for (u, dh_u) in unit_grad.iter().enumerate() {
            if !cache.unit_used[u] {
                continue;
            }
            let h = &cache.unit_hidden[u];
            let dpre: Vec<f64> = dh_u.iter().zip(h).map(|(g, h)| g * (1.0 - h * h)).collect();
            for (b, v) in g.b1.iter_mut().zip(&dpre) {
                *b += v;
            }
            let v_in = &cache.unit_inputs[u];
            let mut dv = vec![0.0; d];
            for k in 0..d {
                let q_row = k * dh;
                let s_row = (d + k) * dh;
                let (qk, vk) = (cache.query_mean[k], v_in[k]);
                let mut acc_q = 0.0;
                let mut acc_v = 0.0;
                for j in 0..dh {
                    g.w1[q_row + j] += qk * dpre[j];
                    g.w1[s_row + j] += vk * dpre[j];
                    acc_q += self.w1[q_row + j] * dpre[j];
                    acc_v += self.w1[s_row + j] * dpre[j];
                }
                d_query[k] += acc_q;
                dv[k] = acc_v;
            }
            if u == 0 {
                for (o, v) in g.null_sentence.iter_mut().zip(&dv) {
                    *o += v;
                }
            } else {
                spread_mean(&mut g.embedding, &cache.sentences[u - 1], &dv);
            }
        }
        spread_mean(&mut g.embedding, &cache.query, &d_query);
        Ok(g)
    }
}

/// Distributes the gradient of a mean-pooled vector evenly over its tokens.
fn spread_mean(rows: &mut BTreeMap<u32, Vec<f64>>, ids: &[u32], grad: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let inv = 1.0 / ids.len() as f64;
    for &id in ids {
        let row = rows.entry(id).or_insert_with(|| vec![0.0; grad.len()]);
        for (o, g) in row.iter_mut().zip(grad) {
            *o += inv * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::enumerate_candidates_n;

    fn cfg(v: usize, d: usize, dh: usize, t: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: v,
            dim: d,
            hidden: dh,
            num_labels: t,
        }
    }

    fn sample() -> EncodedSample {
        EncodedSample {
            query: vec![1, 2],
            sentences: vec![vec![3, 4, 5], vec![3, 4, 5], vec![6, 1]],
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = ModelParams::zeros(cfg(8, 4, 3, 2));
        let c = enumerate_candidates_n(3, 2).unwrap();
        let (z, _) = p.forward(&sample(), &c).unwrap();
        assert_eq!(z.rows(), 7);
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_sentences_identical_rows() {
        let p = ModelParams::init(cfg(8, 4, 3, 2), 5);
        let c = enumerate_candidates_n(3, 1).unwrap();
        let (z, _) = p.forward(&sample(), &c).unwrap();
        assert_eq!(z.row(1), z.row(2));
        assert_ne!(z.row(1), z.row(3));
    }

    #[test]
    fn aggregate_pair_examples() {
        assert_eq!(
            aggregate_pair(&[1.0, -2.0], &[0.0, 3.0]).unwrap(),
            vec![1.0, 3.0]
        );
        let x = [0.3, -0.1, 2.0];
        assert_eq!(aggregate_pair(&x, &x).unwrap(), x.to_vec());
        assert!(aggregate_pair(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregate_pair_commutes() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..100 {
            let a: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
            assert_eq!(
                aggregate_pair(&a, &b).unwrap(),
                aggregate_pair(&b, &a).unwrap()
            );
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = ModelParams::init(cfg(8, 4, 3, 2), 1);
        let c = enumerate_candidates_n(3, 2).unwrap();
        let (z, cache) = p.forward(&sample(), &c).unwrap();
        let g = p
            .backward(&cache, &Logits::zeros(z.rows(), z.cols()))
            .unwrap();
        let dense = g.to_dense(p.config);
        assert!(dense.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn b2_gradient_is_column_sum() {
        let p = ModelParams::init(cfg(8, 4, 3, 3), 2);
        let c = enumerate_candidates_n(3, 2).unwrap();
        let (z, cache) = p.forward(&sample(), &c).unwrap();
        let mut rng = SplitMix64::new(4);
        let dz = z.map(|_| rng.uniform(-1.0, 1.0));
        let g = p.backward(&cache, &dz).unwrap();
        for c in 0..3 {
            let col: f64 = (0..dz.rows()).map(|i| dz.get(i, c)).sum();
            assert!((g.b2[c] - col).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let p = ModelParams::init(cfg(8, 4, 3, 2), 2);
        let c = enumerate_candidates_n(3, 1).unwrap();
        let (_, cache) = p.forward(&sample(), &c).unwrap();
        assert!(matches!(
            p.backward(&cache, &Logits::zeros(7, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = ModelParams::init(cfg(8, 4, 3, 2), 2);
        p.b2.push(0.0);
        let c = enumerate_candidates_n(3, 1).unwrap();
        assert!(p.forward(&sample(), &c).is_err());
        let p = ModelParams::init(cfg(4, 4, 3, 2), 2);
        assert!(p.forward(&sample(), &c).is_err(), "token id beyond vocab");
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = ModelParams::init(cfg(10, 4, 3, 2), 9);
        let b = ModelParams::init(cfg(10, 4, 3, 2), 9);
        assert_eq!(a, b);
        assert!(a.w1.iter().all(|w| w.abs() <= INIT_SCALE));
        assert!(a.b1.iter().chain(&a.b2).all(|&b| b == 0.0));
    }
}
