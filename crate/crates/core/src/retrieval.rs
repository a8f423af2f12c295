//! Embedding-based fuzzy-match retrieval over a translation memory.
//!
//! The built-in [`TrigramEmbedder`] hashes character trigrams of the normalized,
//! lowercased text into a fixed number of buckets and L2-normalizes the counts.
//! Search is an exhaustive cosine scan over a flat row-major vector buffer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tm::{normalize, PairId, SegmentPair, TranslationMemory};

pub const DEFAULT_DIMENSION: usize = 1024;

/// Seed mixed into the FNV-1a offset basis for trigram hashing.
pub const TRIGRAM_HASH_SEED: u64 = 0x5eed_a11c_e0ff_1ce5;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

// Boundary markers are control characters so they cannot collide with text.
const START_MARK: char = '\u{2}';
const END_MARK: char = '\u{3}';

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("cannot build an index over an empty translation memory")]
    EmptyMemory,
    #[error("query must not be empty")]
    EmptyQuery,
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("vector dimension {got} does not match index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("index has no local embedder; query with a precomputed vector")]
    NoEmbedder,
    #[error("embedding service: {0}")]
    Remote(String),
}

pub type Result<T, E = RetrievalError> = std::result::Result<T, E>;

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalizes `values`. An all-zero vector stays zero.
    pub fn normalized(mut values: Vec<f32>) -> Self {
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// 64-bit FNV-1a over the UTF-8 bytes of `s`, starting from the offset basis xor `seed`.
pub fn fnv1a64(s: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET_BASIS ^ seed;
    for &b in s.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Character trigrams of the normalized, lowercased text, wrapped in boundary markers.
pub fn char_trigrams(text: &str) -> Vec<String> {
    let prepared = normalize(text).to_lowercase();
    let chars: Vec<char> = std::iter::once(START_MARK)
        .chain(prepared.chars())
        .chain(std::iter::once(END_MARK))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl TrigramEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed: TRIGRAM_HASH_SEED }
    }

    pub fn bucket(&self, trigram: &str) -> usize {
        (fnv1a64(trigram, self.seed) % self.dimension as u64) as usize
    }
}

impl Embedder for TrigramEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if normalize(text).is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let mut counts = vec![0f32; self.dimension];
        for tri in char_trigrams(text) {
            counts[self.bucket(&tri)] += 1.0;
        }
        Ok(EmbeddingVector::normalized(counts))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub exclude_exact_self: bool,
    pub min_similarity: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { top_k: 5, exclude_exact_self: false, min_similarity: None }
    }
}

impl RetrievalConfig {
    pub fn top_k(top_k: usize) -> Self {
        Self { top_k, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyMatch {
    pub pair: SegmentPair,
    pub score: f64,
}

/// Immutable search index. Updates produce a new index.
#[derive(Clone)]
pub struct Index {
    dimension: usize,
    pairs: Vec<SegmentPair>,
    // row-major, one row per pair
    vectors: Vec<f32>,
    embedder: Option<Arc<dyn Embedder>>,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("dimension", &self.dimension)
            .field("len", &self.pairs.len())
            .finish()
    }
}

impl Index {
    pub fn build(tm: &TranslationMemory) -> Result<Self> {
        Self::build_with(tm, Arc::new(TrigramEmbedder::default()))
    }

    pub fn build_with(tm: &TranslationMemory, embedder: Arc<dyn Embedder>) -> Result<Self> {
        if tm.is_empty() {
            return Err(RetrievalError::EmptyMemory);
        }
        let dimension = embedder.dimension();
        let mut vectors = Vec::with_capacity(tm.len() * dimension);
        for pair in tm.pairs() {
            let v = embedder.embed(&pair.source)?;
            vectors.extend_from_slice(v.as_slice());
        }
        Ok(Self { dimension, pairs: tm.pairs().to_vec(), vectors, embedder: Some(embedder) })
    }

    /// Builds an index from vectors computed elsewhere (e.g. by a remote embedder).
    /// Queries must then go through [`Index::retrieve_vector`] unless `embedder` is given.
    pub fn from_vectors(
        pairs: Vec<SegmentPair>,
        vectors: Vec<EmbeddingVector>,
        embedder: Option<Arc<dyn Embedder>>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(RetrievalError::EmptyMemory);
        }
        assert_eq!(pairs.len(), vectors.len(), "one vector per pair");
        let dimension = vectors[0].dimension();
        let mut flat = Vec::with_capacity(pairs.len() * dimension);
        for v in &vectors {
            if v.dimension() != dimension {
                return Err(RetrievalError::Dimension { expected: dimension, got: v.dimension() });
            }
            flat.extend_from_slice(v.as_slice());
        }
        Ok(Self { dimension, pairs, vectors: flat, embedder })
    }

    /// Returns a new index with `pair` appended.
    pub fn with_pair(&self, pair: SegmentPair) -> Result<Self> {
        let embedder = self.embedder.as_ref().ok_or(RetrievalError::NoEmbedder)?;
        let v = embedder.embed(&pair.source)?;
        let mut next = self.clone();
        next.vectors.extend_from_slice(v.as_slice());
        next.pairs.push(pair);
        Ok(next)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn pairs(&self) -> &[SegmentPair] {
        &self.pairs
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dimension..(row + 1) * self.dimension]
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.embedder.as_ref().ok_or(RetrievalError::NoEmbedder)?.embed(text)
    }

    /// Top-k fuzzy matches for `query`, best first. Ties keep insertion order.
    ///
    /// With `exclude_exact_self`, the pair whose id is `self_id` is skipped when
    /// its normalized source equals the normalized query.
    pub fn retrieve(&self, query: &str, cfg: &RetrievalConfig, self_id: Option<PairId>) -> Result<Vec<FuzzyMatch>> {
        if normalize(query).is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let qv = self.embed(query)?;
        let exclude = if cfg.exclude_exact_self {
            self_id.and_then(|id| {
                let nq = normalize(query);
                self.pairs
                    .iter()
                    .position(|p| p.id == id && normalize(&p.source) == nq)
            })
        } else {
            None
        };
        self.rank(&qv, cfg, exclude)
    }

    pub fn retrieve_vector(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<FuzzyMatch>> {
        self.rank(query, cfg, None)
    }

    /// Similarity of `query` to every stored pair, in insertion order.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        if query.dimension() != self.dimension {
            return Err(RetrievalError::Dimension { expected: self.dimension, got: query.dimension() });
        }
        let q = query.as_slice();
        // zero terms add nothing, so summing only the query's non-zero buckets
        // in index order gives the same value as the dense dot product
        let nonzero: Vec<(usize, f64)> =
            q.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, &x)| (i, f64::from(x))).collect();
        if nonzero.len() * 2 > q.len() {
            return Ok(self.vectors.chunks_exact(self.dimension).map(|row| dot(q, row).clamp(0.0, 1.0)).collect());
        }
        Ok(self
            .vectors
            .chunks_exact(self.dimension)
            .map(|row| nonzero.iter().map(|&(i, x)| x * f64::from(row[i])).sum::<f64>().clamp(0.0, 1.0))
            .collect())
    }

    fn rank(&self, query: &EmbeddingVector, cfg: &RetrievalConfig, exclude: Option<usize>) -> Result<Vec<FuzzyMatch>> {
        if cfg.top_k == 0 {
            return Err(RetrievalError::ZeroTopK);
        }
        if cfg.top_k > 10 {
            log::warn!("top_k={} is above the usual range of 1..=10", cfg.top_k);
        }
        let scores = self.scores(query)?;
        let floor = cfg.min_similarity.unwrap_or(f64::NEG_INFINITY);
        let mut ranked: Vec<(f64, usize)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(row, s)| Some(row) != exclude && s >= floor)
            .map(|(row, s)| (s, row))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        let k = cfg.top_k.min(ranked.len());
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k, order);
            ranked.truncate(k);
        }
        ranked.sort_unstable_by(order);
        Ok(ranked
            .into_iter()
            .map(|(score, row)| FuzzyMatch { pair: self.pairs[row].clone(), score })
            .collect())
    }
}

/// Histogram bucket edges, highest first. The top bucket is closed at 1.0.
pub const BUCKETS: [(f64, f64, &str); 6] = [
    (0.9, 1.0, "[0.9,1.0]"),
    (0.8, 0.9, "[0.8,0.9)"),
    (0.7, 0.8, "[0.7,0.8)"),
    (0.6, 0.7, "[0.6,0.7)"),
    (0.5, 0.6, "[0.5,0.6)"),
    (0.0, 0.5, "[0,0.5)"),
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketHistogram {
    /// Counts aligned with [`BUCKETS`].
    pub counts: [usize; 6],
}

impl BucketHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn labelled(&self) -> impl Iterator<Item = (&'static str, usize)> + '_ {
        BUCKETS.iter().zip(self.counts).map(|(b, c)| (b.2, c))
    }
}

pub fn bucket_of(score: f64) -> usize {
    BUCKETS
        .iter()
        .position(|&(lo, _, _)| score >= lo)
        .unwrap_or(BUCKETS.len() - 1)
}

pub fn bucket_stats<'a>(scores: impl IntoIterator<Item = &'a f64>) -> BucketHistogram {
    let mut h = BucketHistogram::default();
    for &s in scores {
        h.counts[bucket_of(s)] += 1;
    }
    h
}

pub fn match_bucket_stats(matches: &[FuzzyMatch]) -> BucketHistogram {
    bucket_stats(matches.iter().map(|m| &m.score))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for an external embedding service speaking `{"texts": [...]}` ->
/// `{"vectors": [[...], ...]}`. The dimension is fixed by the first response.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: reqwest::Client,
    endpoint: String,
    dimension: usize,
}

impl RemoteEmbedder {
    pub async fn connect(endpoint: impl Into<String>) -> Result<Self> {
        let endpoint = endpoint.into();
        let client = reqwest::Client::new();
        let probe = Self::post(&client, &endpoint, &["dimension probe".to_string()]).await?;
        let dimension = probe
            .first()
            .map(Vec::len)
            .filter(|&d| d > 0)
            .ok_or_else(|| RetrievalError::Remote("handshake returned no vector".into()))?;
        Ok(Self { client, endpoint, dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| normalize(t).is_empty()) {
            return Err(RetrievalError::EmptyText);
        }
        let raw = Self::post(&self.client, &self.endpoint, texts).await?;
        if raw.len() != texts.len() {
            return Err(RetrievalError::Remote(format!(
                "expected {} vectors, got {}",
                texts.len(),
                raw.len()
            )));
        }
        raw.into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    Err(RetrievalError::Dimension { expected: self.dimension, got: v.len() })
                } else {
                    Ok(EmbeddingVector::normalized(v))
                }
            })
            .collect()
    }

    async fn post(client: &reqwest::Client, endpoint: &str, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let resp = client
            .post(endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .await
            .map_err(|e| RetrievalError::Remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RetrievalError::Remote(format!("status {}", resp.status())));
        }
        let body: EmbedResponse = resp.json().await.map_err(|e| RetrievalError::Remote(e.to_string()))?;
        Ok(body.vectors)
    }
}
