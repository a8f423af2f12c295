//! Generated segments and glossaries for term-matching properties.

#![allow(dead_code)]

use std::collections::HashSet;

use adaptmt::terminology::{match_terms, term_tokens, Glossary, TermPair};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

const WORDS: &[&str] = &["new", "york", "times", "fever", "high", "virus", "the", "cough", "dry", "test", "kit", "rapid"];

pub fn words(min: usize, max: usize) -> impl Strategy<Value = Vec<&'static str>> {
    proptest::collection::vec(proptest::sample::select(WORDS), min..=max)
}

pub type MatchCase = (Vec<&'static str>, Vec<(Vec<&'static str>, u32)>, usize);

/// (segment words, glossary entries with frequencies, max_terms)
pub fn match_case() -> impl Strategy<Value = MatchCase> {
    (words(1, 20), proptest::collection::vec((words(1, 7), 1u32..6), 0..25), 1usize..10)
}

pub fn contiguous(hay: &[String], needle: &[String]) -> bool {
    needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

/// At most `max_terms` results, each a contiguous 1-5-gram of the segment,
/// longest first, distinct, and none contained in another.
pub fn check_match(case: &MatchCase) -> Result<(), TestCaseError> {
    let (segment, entries, max_terms) = case;
    let source = segment.join(" ");
    let glossary = Glossary::from_entries(
        entries.iter().map(|(w, f)| TermPair::new(&w.join(" "), &format!("t-{}", w.join("-")), *f)).collect(),
    );
    let got = match_terms(&source, &glossary, *max_terms, true);
    prop_assert!(got.len() <= *max_terms);
    let seg_tokens = term_tokens(&source);
    let token_lists: Vec<Vec<String>> = got.iter().map(|t| term_tokens(&t.src)).collect();
    for toks in &token_lists {
        prop_assert!((1..=5).contains(&toks.len()));
        prop_assert!(contiguous(&seg_tokens, toks));
    }
    for w in got.windows(2) {
        prop_assert!(w[0].ngram_len >= w[1].ngram_len);
    }
    for (i, a) in token_lists.iter().enumerate() {
        for (j, b) in token_lists.iter().enumerate() {
            if i != j {
                prop_assert!(!contiguous(a, b), "{:?} overlaps {:?}", a, b);
            }
        }
    }
    let srcs: HashSet<&str> = got.iter().map(|t| t.src.as_str()).collect();
    prop_assert_eq!(srcs.len(), got.len());
    Ok(())
}
