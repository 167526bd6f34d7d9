//! Text representation: the `[CLS] x1 w_t [SEP] x2 w_t [SEP] ...` input
//! sequence, token encoders, and mean pooling into one row per sentence.

use std::ops::Range;
use std::time::Duration;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::conversation::{Target, Utterance};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Maps token sequences to one D-vector per token.
pub trait Encoder: Send + Sync {
    /// Stored in checkpoints; a mismatch makes a checkpoint incompatible.
    fn identity(&self) -> String;
    fn dim(&self) -> usize;
    /// Longest token sequence accepted by [`Encoder::embed`].
    fn max_tokens(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<String>;
    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>, ModelError>;

    /// Encoders whose token vectors are rows of a lookup table expose it here
    /// so the table can be fine-tuned.
    fn lookup_table(&self) -> Option<&Array2<f64>> {
        None
    }

    /// Table rows for `tokens`, when [`Encoder::lookup_table`] is available.
    fn token_ids(&self, _tokens: &[String]) -> Option<Vec<usize>> {
        None
    }
}

/// Whitespace split with punctuation peeled off into separate tokens.
pub fn basic_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() || ch == '\'' || ch == '-' {
                cur.push(ch);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic hash-bucket embedding: every (lowercased) token hashes to a
/// row of a seeded random table. Offline stand-in for a pretrained encoder.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    max_tokens: usize,
    seed: u64,
    table: Array2<f64>,
}

impl HashEncoder {
    pub const DEFAULT_BUCKETS: usize = 4096;

    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_buckets(dim, Self::DEFAULT_BUCKETS, seed)
    }

    pub fn with_buckets(dim: usize, buckets: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 3f64.sqrt();
        let table = Array2::from_shape_simple_fn((buckets, dim), || rng.gen_range(-a..a));
        HashEncoder {
            dim,
            max_tokens: 512,
            seed,
            table,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(&token.to_lowercase()) % self.table.nrows() as u64) as usize
    }
}

impl Encoder for HashEncoder {
    fn identity(&self) -> String {
        format!(
            "hash-embedding(d={},buckets={},seed={})",
            self.dim,
            self.table.nrows(),
            self.seed
        )
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        basic_tokenize(text)
    }

    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>, ModelError> {
        if tokens.len() > self.max_tokens {
            return Err(ModelError::Encoder(format!(
                "{} tokens exceed the window of {}",
                tokens.len(),
                self.max_tokens
            )));
        }
        let ids: Vec<usize> = tokens.iter().map(|t| self.bucket(t)).collect();
        Ok(self.table.select(Axis(0), &ids))
    }

    fn lookup_table(&self) -> Option<&Array2<f64>> {
        Some(&self.table)
    }

    fn token_ids(&self, tokens: &[String]) -> Option<Vec<usize>> {
        Some(tokens.iter().map(|t| self.bucket(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Adapter for a pretrained bidirectional transformer served over HTTP.
///
/// The service receives `{"model", "tokens"}` and answers
/// `{"embeddings": [[f64; dim]; tokens.len()]}`, one contextual vector per
/// input token (word-piece vectors averaged back to words server-side).
pub struct HttpEncoder {
    endpoint: String,
    model: String,
    dim: usize,
    max_tokens: usize,
    agent: ureq::Agent,
}

impl HttpEncoder {
    pub fn new(endpoint: &str, model: &str, dim: usize, max_tokens: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpEncoder {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            dim,
            max_tokens,
            agent,
        }
    }
}

impl Encoder for HttpEncoder {
    fn identity(&self) -> String {
        format!("http-encoder({},{},d={})", self.endpoint, self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        basic_tokenize(text)
    }

    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>, ModelError> {
        let body = EmbedRequest {
            model: &self.model,
            tokens,
        };
        let mut resp = self
            .agent
            .post(&format!("{}/embed", self.endpoint))
            .send_json(&body)
            .map_err(|e| ModelError::Encoder(e.to_string()))?;
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ModelError::Encoder(format!("malformed response: {e}")))?;
        if parsed.embeddings.len() != tokens.len() || parsed.embeddings.iter().any(|r| r.len() != self.dim) {
            return Err(ModelError::Encoder(format!(
                "expected {}x{} embeddings",
                tokens.len(),
                self.dim
            )));
        }
        let flat: Vec<f64> = parsed.embeddings.into_iter().flatten().collect();
        Array2::from_shape_vec((tokens.len(), self.dim), flat).map_err(|e| ModelError::Encoder(e.to_string()))
    }
}

/// Encoder input for one chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSequence {
    pub tokens: Vec<String>,
    /// Token range of each retained sentence plus its appended target,
    /// separators excluded.
    pub segment_spans: Vec<Range<usize>>,
    /// Chain positions (0-based) that survived truncation, ascending.
    pub kept: Vec<usize>,
}

/// Builds `[CLS] x1 w_t [SEP] x2 w_t [SEP] ... xn w_t [SEP]`. When the
/// sequence exceeds the encoder window, whole utterances are dropped from the
/// front of the history (never the post or the target utterance).
pub fn build_input_sequence(
    chain: &[Utterance],
    target: &Target,
    encoder: &dyn Encoder,
) -> Result<InputSequence, ModelError> {
    if chain.is_empty() {
        return Err(ModelError::Input("empty chain".into()));
    }
    let target_tokens = encoder.tokenize(&target.target_text);
    if target_tokens.is_empty() {
        return Err(ModelError::Input("empty target text".into()));
    }
    let sentences: Vec<Vec<String>> = chain.iter().map(|u| encoder.tokenize(&u.text)).collect();
    let seg_len = |k: usize| sentences[k].len() + target_tokens.len() + 1;

    let n = chain.len();
    let mut kept: Vec<usize> = (0..n).collect();
    let mut total: usize = 1 + kept.iter().map(|&k| seg_len(k)).sum::<usize>();
    while total > encoder.max_tokens() && kept.len() > 2 {
        let dropped = kept.remove(1);
        total -= seg_len(dropped);
    }
    if total > encoder.max_tokens() {
        return Err(ModelError::SequenceOverflow {
            tokens: total,
            window: encoder.max_tokens(),
        });
    }

    let mut tokens = Vec::with_capacity(total);
    let mut spans = Vec::with_capacity(kept.len());
    tokens.push(CLS.to_string());
    for &k in &kept {
        let start = tokens.len();
        tokens.extend(sentences[k].iter().cloned());
        tokens.extend(target_tokens.iter().cloned());
        spans.push(start..tokens.len());
        tokens.push(SEP.to_string());
    }
    Ok(InputSequence {
        tokens,
        segment_spans: spans,
        kept,
    })
}

/// Mean of each segment's token rows.
pub fn pool_segments(token_embeddings: &Array2<f64>, spans: &[Range<usize>]) -> Array2<f64> {
    let d = token_embeddings.ncols();
    let mut h = Array2::zeros((spans.len(), d));
    for (k, span) in spans.iter().enumerate() {
        let mut acc = Array1::<f64>::zeros(d);
        for t in span.clone() {
            acc += &token_embeddings.row(t);
        }
        acc /= span.len() as f64;
        h.row_mut(k).assign(&acc);
    }
    h
}

/// Sentence matrix H: one mean-pooled row per segment.
pub fn encode(seq: &InputSequence, encoder: &dyn Encoder) -> Result<Array2<f64>, ModelError> {
    let e = encoder.embed(&seq.tokens)?;
    if e.nrows() != seq.tokens.len() || e.ncols() != encoder.dim() {
        return Err(ModelError::Encoder("encoder returned a mis-shaped matrix".into()));
    }
    let h = pool_segments(&e, &seq.segment_spans);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Encoder("non-finite sentence vector".into()));
    }
    Ok(h)
}
