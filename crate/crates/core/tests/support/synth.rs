//! Deterministic synthetic corpora.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: &[&str] = &[
    "patient", "fever", "cough", "virus", "vaccine", "hospital", "doctor", "nurse", "mask", "hands", "soap",
    "water", "test", "result", "symptom", "days", "week", "room", "child", "health", "care", "public",
    "travel", "border", "school", "city", "report", "case", "death", "risk", "the", "a", "of", "and", "with",
    "in", "on", "is", "has", "was", "will", "should", "can", "new", "high", "severe", "mild", "early", "late",
];

pub fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<&'static str> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect()
}

/// Deterministic stand-in translation of `source`.
pub fn pseudo_translate(source: &str) -> String {
    source
        .split_whitespace()
        .rev()
        .map(|w| format!("{}x", w.to_uppercase()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` distinct (source, target) pairs. About one in twenty repeats an
/// earlier source with a different target, which produces score ties.
pub fn corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<(String, String)> = Vec::with_capacity(n);
    while out.len() < n {
        if !out.is_empty() && rng.random_bool(0.05) {
            let i = rng.random_range(0..out.len());
            let source = out[i].0.clone();
            let target = format!("{} v{}", pseudo_translate(&source), out.len());
            if seen.insert((source.clone(), target.clone())) {
                out.push((source, target));
            }
            continue;
        }
        let source = sentence(&mut rng, 4, 14).join(" ");
        let target = pseudo_translate(&source);
        if seen.insert((source.clone(), target.clone())) {
            out.push((source, target));
        }
    }
    out
}

/// Queries: stored sources, perturbed stored sources and fresh sentences.
pub fn queries(corpus: &[(String, String)], n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| match i % 3 {
            0 => corpus[rng.random_range(0..corpus.len())].0.clone(),
            1 => {
                let mut words: Vec<&str> = corpus[rng.random_range(0..corpus.len())].0.split(' ').collect();
                let j = rng.random_range(0..words.len());
                words[j] = VOCAB.choose(&mut rng).unwrap();
                words.join(" ")
            }
            _ => sentence(&mut rng, 3, 12).join(" "),
        })
        .collect()
}

/// Like [`corpus`] but every source occurs once.
pub fn distinct_corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let source = sentence(&mut rng, 4, 14).join(" ");
        if seen.insert(source.clone()) {
            let target = pseudo_translate(&source);
            out.push((source, target));
        }
    }
    out
}
