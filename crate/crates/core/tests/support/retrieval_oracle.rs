//! Independent trigram embedder and exhaustive cosine scan.

#![allow(dead_code)]

#[path = "synth.rs"]
mod synth;

use adaptmt::retrieval::{Index, RetrievalConfig};
use adaptmt::tm::{LanguagePair, Origin, TranslationMemory};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SEED: u64 = 0x5eed_a11c_e0ff_1ce5;
const DIM: usize = 1024;
pub const SCORE_TOLERANCE: f64 = 1e-9;

/// Counts per hashed bucket, L2-normalized, stored as f32.
pub fn oracle_embed(text: &str) -> Vec<f32> {
    let prepared = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let mut chars = vec!['\u{2}'];
    chars.extend(prepared.chars());
    chars.push('\u{3}');
    let mut counts = vec![0f64; DIM];
    for w in chars.windows(3) {
        let tri: String = w.iter().collect();
        let mut h = FNV_OFFSET ^ SEED;
        for b in tri.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        counts[(h % DIM as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    counts.iter().map(|c| (c / norm) as f32).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>()
}

/// (score, row) for the best `k` rows: score descending, then row ascending.
pub fn exhaustive_top_k(vectors: &[Vec<f32>], query: &[f32], k: usize) -> Vec<(f64, usize)> {
    let mut scan: Vec<(f64, usize)> =
        vectors.iter().enumerate().map(|(row, v)| (cosine(query, v).clamp(0.0, 1.0), row)).collect();
    scan.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scan.truncate(k);
    scan
}

pub fn synthetic_index(n: usize, seed: u64) -> (TranslationMemory, Index) {
    let mut tm = TranslationMemory::new("oracle", LanguagePair::new("en", "fr").unwrap());
    for (s, t) in synth::corpus(n, seed) {
        tm.insert(&s, &t, Origin::Approved).unwrap();
    }
    assert_eq!(tm.len(), n);
    let index = Index::build(&tm).unwrap();
    (tm, index)
}

/// Compares `retrieve(top_k)` with the exhaustive scan on `n_queries` queries.
/// Returns the number of tied adjacent scores seen in the oracle rankings.
pub fn check_top_k(n_pairs: usize, n_queries: usize, k: usize) -> Result<usize, String> {
    let (tm, index) = synthetic_index(n_pairs, 42);
    let vectors: Vec<Vec<f32>> = tm.pairs().iter().map(|p| oracle_embed(&p.source)).collect();
    let corpus: Vec<(String, String)> = tm.pairs().iter().map(|p| (p.source.clone(), p.target.clone())).collect();
    let cfg = RetrievalConfig::top_k(k);
    let mut ties = 0;
    for q in synth::queries(&corpus, n_queries, 7) {
        let scan = exhaustive_top_k(&vectors, &oracle_embed(&q), k);
        let got = index.retrieve(&q, &cfg, None).map_err(|e| e.to_string())?;
        if got.len() != scan.len() {
            return Err(format!("query {q:?}: {} results, oracle has {}", got.len(), scan.len()));
        }
        for (rank, (m, (score, row))) in got.iter().zip(&scan).enumerate() {
            if m.pair.id != tm.pairs()[*row].id {
                return Err(format!("query {q:?} rank {rank}: id {} vs oracle {}", m.pair.id, tm.pairs()[*row].id));
            }
            if (m.score - score).abs() > SCORE_TOLERANCE {
                return Err(format!("query {q:?} rank {rank}: score {} vs oracle {score}", m.score));
            }
        }
        ties += scan.windows(2).filter(|w| w[0].0 == w[1].0).count();
    }
    Ok(ties)
}
