//! Seeded synthetic corpora.
//!
//! Token `k` of the synthetic vocabulary is spelled `w{k}`. The lowest ids
//! are reserved for signal tokens (labels, entities, bridges, sentiment,
//! verdicts); everything above is filler. Distractor sentences draw filler
//! tokens i.i.d. uniformly, so they carry no label information.
//!
//! * `single_evidence`: the query names an entity; exactly one sentence
//!   contains that entity and a label token.
//! * `two_hop`: a bridge sentence holds the query entity and a bridge token;
//!   a second sentence holds the same bridge token and the label token. A
//!   decoy sentence pairs another bridge token with a different label token,
//!   so no single sentence reveals the label.
//! * `discussion`: every document mixes sentences in favour of both labels
//!   (sharing one token pattern per polarity across the corpus) and exactly
//!   one verdict sentence, a marker plus negated sentiment, decides the label.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Rationale, Sample, Sentence, Token};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SingleEvidence,
    TwoHop,
    Discussion,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_evidence" => Ok(Family::SingleEvidence),
            "two_hop" => Ok(Family::TwoHop),
            "discussion" => Ok(Family::Discussion),
            _ => Err(Error::Config(format!("unknown synthetic family '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub vocab_size: usize,
    pub sentences_per_doc: usize,
    pub query_len: usize,
    pub sentence_len: usize,
    pub num_labels: usize,
    pub seed: u64,
    pub family: Family,
}

impl SynthConfig {
    /// 2000 samples, vocabulary 200, 8 sentences of 8 tokens, binary labels.
    pub fn reference(family: Family, num_samples: usize, seed: u64) -> Self {
        Self {
            num_samples,
            vocab_size: if family == Family::Discussion {
                40
            } else {
                200
            },
            sentences_per_doc: 8,
            query_len: 4,
            sentence_len: 8,
            num_labels: 2,
            seed,
            family,
        }
    }

    fn validate(&self, expected: Family) -> Result<()> {
        if self.family != expected {
            return Err(Error::Config(format!(
                "config family {:?} passed to the {expected:?} generator",
                self.family
            )));
        }
        let counts = [
            self.num_samples,
            self.vocab_size,
            self.sentences_per_doc,
            self.query_len,
            self.sentence_len,
            self.num_labels,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("all synthetic counts must be >= 1".into()));
        }
        if self.vocab_size <= self.num_labels {
            return Err(Error::Config("vocab_size must exceed num_labels".into()));
        }
        Ok(())
    }
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    match config.family {
        Family::SingleEvidence => gen_single_evidence(config),
        Family::TwoHop => gen_two_hop(config),
        Family::Discussion => gen_discussion(config),
    }
}

fn tok(id: usize) -> Token {
    Token::new(&format!("w{id}")).expect("synthetic token")
}

/// Consecutive id ranges handed out from the bottom of the vocabulary.
struct Layout {
    next: usize,
}

impl Layout {
    fn take(&mut self, n: usize) -> Vec<usize> {
        let r = (self.next..self.next + n).collect();
        self.next += n;
        r
    }
}

struct Filler {
    lo: usize,
    hi: usize,
}

impl Filler {
    fn new(lo: usize, vocab_size: usize, config: &SynthConfig) -> Result<Self> {
        if lo + 2 > vocab_size {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {:?} ({} signal tokens, need at least 2 filler tokens)",
                config.vocab_size, config.family, lo
            )));
        }
        Ok(Self { lo, hi: vocab_size })
    }

    fn draw(&self, rng: &mut SplitMix64) -> usize {
        self.lo + rng.below(self.hi - self.lo)
    }

    /// `len` tokens: the given signal ids followed by filler, then shuffled.
    fn sentence(&self, rng: &mut SplitMix64, signal: &[usize], len: usize) -> Vec<Token> {
        let mut ids: Vec<usize> = signal.to_vec();
        while ids.len() < len.max(signal.len()) {
            ids.push(self.draw(rng));
        }
        rng.shuffle(&mut ids);
        ids.into_iter().map(tok).collect()
    }
}

fn balanced_labels(rng: &mut SplitMix64, n: usize, t: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % t).collect();
    rng.shuffle(&mut labels);
    labels
}

fn label_names(t: usize, binary: [&str; 2]) -> Vec<String> {
    if t == 2 {
        return binary.iter().map(|s| s.to_string()).collect();
    }
    let width = (t - 1).to_string().len();
    (0..t).map(|c| format!("{c:0width$}")).collect()
}

fn finish(samples: Vec<Sample>, names: Vec<String>) -> Result<Dataset> {
    Dataset::new(samples, names)
}

fn document(sentences: Vec<Vec<Token>>) -> Vec<Sentence> {
    sentences
        .into_iter()
        .enumerate()
        .map(|(index, tokens)| Sentence { index, tokens })
        .collect()
}

fn single(i: usize) -> Rationale {
    [i].into_iter().collect()
}

fn entity_count(config: &SynthConfig, reserved: usize) -> usize {
    ((config.vocab_size.saturating_sub(reserved)) / 10).clamp(1, 8)
}

pub fn gen_single_evidence(config: &SynthConfig) -> Result<Dataset> {
    config.validate(Family::SingleEvidence)?;
    if config.sentence_len < 2 {
        return Err(Error::Config(
            "single_evidence needs sentence_len >= 2".into(),
        ));
    }
    let t = config.num_labels;
    let mut layout = Layout { next: 0 };
    let label_tokens = layout.take(t);
    let entities = layout.take(entity_count(config, t));
    let filler = Filler::new(layout.next, config.vocab_size, config)?;

    let mut rng = SplitMix64::stream(config.seed, 100);
    let labels = balanced_labels(&mut rng, config.num_samples, t);
    let mut samples = Vec::with_capacity(config.num_samples);
    for (i, &y) in labels.iter().enumerate() {
        let e = entities[rng.below(entities.len())];
        let query = filler.sentence(&mut rng, &[e], config.query_len);
        let pos = rng.below(config.sentences_per_doc);
        let sentences = (0..config.sentences_per_doc)
            .map(|k| {
                if k == pos {
                    filler.sentence(&mut rng, &[e, label_tokens[y]], config.sentence_len)
                } else {
                    filler.sentence(&mut rng, &[], config.sentence_len)
                }
            })
            .collect();
        samples.push(Sample {
            id: format!("single-{i:05}"),
            query,
            answer: None,
            document: document(sentences),
            label: y,
            gold_rationales: [single(pos)].into_iter().collect(),
        });
    }
    finish(samples, label_names(t, ["0", "1"]))
}

/// Bridge tokens available to the two-hop generator.
pub const BRIDGE_TOKENS: usize = 4;

pub fn gen_two_hop(config: &SynthConfig) -> Result<Dataset> {
    config.validate(Family::TwoHop)?;
    if config.sentences_per_doc < 3 || config.sentence_len < 2 || config.num_labels < 2 {
        return Err(Error::Config(
            "two_hop needs >= 3 sentences of >= 2 tokens and >= 2 labels".into(),
        ));
    }
    let t = config.num_labels;
    let mut layout = Layout { next: 0 };
    let label_tokens = layout.take(t);
    let bridges = layout.take(BRIDGE_TOKENS);
    let entities = layout.take(entity_count(config, t + BRIDGE_TOKENS));
    let filler = Filler::new(layout.next, config.vocab_size, config)?;

    let mut rng = SplitMix64::stream(config.seed, 200);
    let labels = balanced_labels(&mut rng, config.num_samples, t);
    let mut samples = Vec::with_capacity(config.num_samples);
    for (i, &y) in labels.iter().enumerate() {
        let e = entities[rng.below(entities.len())];
        let query = filler.sentence(&mut rng, &[e], config.query_len);
        let b = rng.below(BRIDGE_TOKENS);
        let b_decoy = (b + 1 + rng.below(BRIDGE_TOKENS - 1)) % BRIDGE_TOKENS;
        let y_decoy = (y + 1 + rng.below(t - 1)) % t;

        let mut positions: Vec<usize> = (0..config.sentences_per_doc).collect();
        rng.shuffle(&mut positions);
        let (p_bridge, p_hop, p_decoy) = (positions[0], positions[1], positions[2]);
        let sentences = (0..config.sentences_per_doc)
            .map(|k| {
                let signal: Vec<usize> = if k == p_bridge {
                    vec![e, bridges[b]]
                } else if k == p_hop {
                    vec![bridges[b], label_tokens[y]]
                } else if k == p_decoy {
                    vec![bridges[b_decoy], label_tokens[y_decoy]]
                } else {
                    Vec::new()
                };
                filler.sentence(&mut rng, &signal, config.sentence_len)
            })
            .collect();
        samples.push(Sample {
            id: format!("twohop-{i:05}"),
            query,
            answer: None,
            document: document(sentences),
            label: y,
            gold_rationales: [[p_bridge, p_hop].into_iter().collect()]
                .into_iter()
                .collect(),
        });
    }
    finish(samples, label_names(t, ["False", "True"]))
}

/// Sentiment tokens per polarity; opinion sentences draw from these.
pub const SENTIMENT_TOKENS: usize = 4;

pub const NEG: usize = 0;
pub const POS: usize = 1;

/// Probability that a POS document also voices negative opinions. NEG
/// documents always voice positive ones.
pub const POS_DOC_OPPOSED: f64 = 0.6;

/// Sentiment tokens in a verdict sentence, next to its marker.
pub const VERDICT_SENTIMENT: usize = 1;

/// Discussion documents mix dense opinion sentences of both polarities with
/// one sparse verdict sentence. The verdict is the marker token plus a single
/// sentiment token of the *opposite* polarity ("not good") and alone decides
/// the label. Every NEG document voices positive opinions, but only some POS
/// documents voice negative ones, so "negative opinions present" is a strong
/// but one-sided shortcut.
pub fn gen_discussion(config: &SynthConfig) -> Result<Dataset> {
    config.validate(Family::Discussion)?;
    if config.num_labels != 2 {
        return Err(Error::Config("discussion corpora are binary".into()));
    }
    if config.sentences_per_doc < 4 || config.sentence_len < 3 {
        return Err(Error::Config(
            "discussion needs >= 4 sentences of >= 3 tokens".into(),
        ));
    }
    let mut layout = Layout { next: 0 };
    let marker = layout.take(1)[0];
    let sentiment = [layout.take(SENTIMENT_TOKENS), layout.take(SENTIMENT_TOKENS)];
    let filler = Filler::new(layout.next, config.vocab_size, config)?;
    let density = config.sentence_len / 2;
    let opinion_slots = config.sentences_per_doc - 1;

    let mut rng = SplitMix64::stream(config.seed, 300);
    let labels = balanced_labels(&mut rng, config.num_samples, 2);
    let mut samples = Vec::with_capacity(config.num_samples);
    for (i, &y) in labels.iter().enumerate() {
        let query = filler.sentence(&mut rng, &[], config.query_len);
        // Opinion groups have one or two sentences; only POS documents may
        // lack an opposing group.
        let opposed = y == NEG || rng.chance(POS_DOC_OPPOSED);
        let k_other = if opposed {
            (1 + rng.below(2)).min(opinion_slots - 1)
        } else {
            0
        };
        let k_gold = (1 + rng.below(2)).min(opinion_slots - k_other);
        let mut kinds: Vec<Option<usize>> = Vec::with_capacity(config.sentences_per_doc);
        kinds.extend(std::iter::repeat_n(Some(y), k_gold));
        kinds.extend(std::iter::repeat_n(Some(1 - y), k_other));
        kinds.resize(opinion_slots, None);
        rng.shuffle(&mut kinds);
        let verdict_pos = rng.below(config.sentences_per_doc);
        kinds.insert(verdict_pos, None);

        let sentences = kinds
            .iter()
            .enumerate()
            .map(|(k, kind)| {
                let polarity = if k == verdict_pos { Some(1 - y) } else { *kind };
                let mut signal: Vec<usize> = Vec::new();
                if k == verdict_pos {
                    signal.push(marker);
                }
                if let Some(p) = polarity {
                    let n = if k == verdict_pos {
                        VERDICT_SENTIMENT
                    } else {
                        density
                    };
                    for _ in 0..n {
                        signal.push(sentiment[p][rng.below(SENTIMENT_TOKENS)]);
                    }
                }
                filler.sentence(&mut rng, &signal, config.sentence_len)
            })
            .collect();
        samples.push(Sample {
            id: format!("discussion-{i:05}"),
            query,
            answer: None,
            document: document(sentences),
            label: y,
            gold_rationales: [single(verdict_pos)].into_iter().collect(),
        });
    }
    finish(samples, label_names(2, ["NEG", "POS"]))
}

/// Token ids that carry signal for a family (everything below the filler range).
pub fn signal_token_count(config: &SynthConfig) -> usize {
    let t = config.num_labels;
    match config.family {
        Family::SingleEvidence => t + entity_count(config, t),
        Family::TwoHop => t + BRIDGE_TOKENS + entity_count(config, t + BRIDGE_TOKENS),
        Family::Discussion => 1 + 2 * SENTIMENT_TOKENS,
    }
}

/// True when `token` is one of the family's signal tokens.
pub fn is_signal(config: &SynthConfig, token: &Token) -> bool {
    token
        .as_str()
        .strip_prefix('w')
        .and_then(|n| n.parse::<usize>().ok())
        .is_some_and(|id| id < signal_token_count(config))
}

/// Marker token of discussion verdict sentences.
pub fn discussion_marker() -> Token {
    tok(0)
}

/// Sentiment tokens of the discussion family for `polarity`.
pub fn discussion_sentiment(polarity: usize) -> Vec<Token> {
    (0..SENTIMENT_TOKENS)
        .map(|k| tok(1 + polarity * SENTIMENT_TOKENS + k))
        .collect()
}

/// Label token of the single-evidence and two-hop families.
pub fn label_token(label: usize) -> Token {
    tok(label)
}
