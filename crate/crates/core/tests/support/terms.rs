//! Planted term observations and a brute-force glossary oracle.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pair extracted (src, tgt) terms for a 200-pair corpus.
///
/// Planted cases:
/// - `fever` has targets `fièvre` (7, one of them as `Fever`) and `fiebre` (2): highest frequency wins.
/// - `mask` has `masque` and `cache`, 2 each: the smaller target wins.
/// - `quarantine` appears once: below the minimum frequency.
/// - `the`, `of the` are stopwords only; `the virus` is kept.
/// - a 6-word source exceeds the n-gram limit; empty sides are dropped.
pub fn planted_observations() -> Vec<Vec<(String, String)>> {
    let mut per_pair: Vec<Vec<(String, String)>> = vec![Vec::new(); 200];
    let mut put = |pair: usize, src: &str, tgt: &str| per_pair[pair % 200].push((src.to_string(), tgt.to_string()));
    for i in 0..6 {
        put(i, "fever", "fièvre");
    }
    put(6, "Fever", "fièvre");
    put(7, "fever", "fiebre");
    put(8, "fever", "fiebre");
    put(10, "mask", "masque");
    put(11, "mask", "masque");
    put(12, "mask", "cache");
    put(13, "mask", "cache");
    put(14, "quarantine", "quarantaine");
    for i in 15..20 {
        put(i, "the", "le");
    }
    for i in 20..23 {
        put(i, "of the", "de la");
    }
    for i in 23..26 {
        put(i, "the virus", "le virus");
    }
    for i in 26..29 {
        put(i, "wash your hands with soap often", "lavez-vous souvent les mains au savon");
    }
    for i in 29..31 {
        put(i, "hand hygiene", "");
    }
    for i in 31..34 {
        put(i, "public health emergency of concern", "urgence de santé publique de portée");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2023);
    let words = ["test", "result", "nurse", "ward", "dose", "trial", "swab", "contact", "strain", "outbreak"];
    let targets = ["essai", "résultat", "infirmière", "service", "dose", "étude", "écouvillon", "contact", "souche", "épidémie"];
    for pair in 34..200 {
        for _ in 0..rng.random_range(1..=4) {
            let a = rng.random_range(0..words.len());
            let b = rng.random_range(0..words.len());
            let (src, tgt) = if rng.random_bool(0.7) {
                (words[a].to_string(), targets[a].to_string())
            } else {
                (format!("{} {}", words[a], words[b]), format!("{} {}", targets[a], targets[b]))
            };
            // occasional conflicting target
            let tgt = if rng.random_bool(0.1) { format!("{tgt}s") } else { tgt };
            per_pair[pair].push((src, tgt));
        }
    }
    per_pair
}

pub struct OracleEntry {
    pub src: String,
    pub tgt: String,
    pub freq: u32,
    pub ngram_len: usize,
}

fn most_frequent_form(forms: &[String]) -> String {
    let mut counts: BTreeMap<&String, u32> = BTreeMap::new();
    for f in forms {
        *counts.entry(f).or_default() += 1;
    }
    let max = *counts.values().max().unwrap();
    counts.into_iter().find(|(_, c)| *c == max).unwrap().0.clone()
}

/// Brute force: group observations by lowercased (src, tgt), apply every filter,
/// pick the best target per source by scanning all rivals, then sort.
pub fn oracle_glossary(
    observations: &[(String, String)],
    min_freq: u32,
    max_ngram: usize,
    stopwords: &HashSet<String>,
) -> Vec<OracleEntry> {
    let mut groups: BTreeMap<(String, String), (Vec<String>, Vec<String>)> = BTreeMap::new();
    for (s, t) in observations {
        let (s, t) = (s.trim(), t.trim());
        let g = groups.entry((s.to_lowercase(), t.to_lowercase())).or_default();
        g.0.push(s.to_string());
        g.1.push(t.to_string());
    }
    let candidates: Vec<OracleEntry> = groups
        .values()
        .map(|(srcs, tgts)| {
            let src = most_frequent_form(srcs);
            OracleEntry {
                ngram_len: src.split_whitespace().count(),
                tgt: most_frequent_form(tgts),
                freq: srcs.len() as u32,
                src,
            }
        })
        .filter(|c| !c.src.is_empty() && !c.tgt.is_empty())
        .filter(|c| c.freq >= min_freq && c.ngram_len <= max_ngram)
        .filter(|c| {
            !c.src
                .split_whitespace()
                .map(|w| w.trim_matches(|ch: char| ch.is_ascii_punctuation()).to_lowercase())
                .all(|w| w.is_empty() || stopwords.contains(&w))
        })
        .collect();
    let mut chosen: Vec<OracleEntry> = Vec::new();
    for c in &candidates {
        let beaten = candidates.iter().any(|o| {
            o.src.to_lowercase() == c.src.to_lowercase() && (o.freq > c.freq || (o.freq == c.freq && o.tgt < c.tgt))
        });
        if !beaten {
            chosen.push(OracleEntry { src: c.src.clone(), tgt: c.tgt.clone(), freq: c.freq, ngram_len: c.ngram_len });
        }
    }
    chosen.sort_by(|a, b| {
        (std::cmp::Reverse(a.ngram_len), std::cmp::Reverse(a.freq), &a.src).cmp(&(
            std::cmp::Reverse(b.ngram_len),
            std::cmp::Reverse(b.freq),
            &b.src,
        ))
    });
    chosen
}
