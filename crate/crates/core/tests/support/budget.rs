//! Random prompt requests for the context-budget invariant.

#![allow(dead_code)]

use adaptmt::prompting::{fit, render, BudgetConfig, PromptKind, PromptRequest};
use adaptmt::retrieval::FuzzyMatch;
use adaptmt::terminology::TermPair;
use adaptmt::tm::{LanguagePair, Origin, PairId, SegmentPair};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const CONTEXT_LIMIT: usize = 4097;

fn text(words: usize, seed: usize) -> String {
    (0..words).map(|i| format!("w{}x{}", (i * 7 + seed) % 97, "y".repeat((i + seed) % 9))).collect::<Vec<_>>().join(" ")
}

fn target_lang(multiplier: u32) -> &'static str {
    match multiplier {
        8 => "ar",
        5 => "zh",
        _ => "fr",
    }
}

#[derive(Debug, Clone)]
pub struct Case {
    pub multiplier: u32,
    pub kind: PromptKind,
    pub source_words: usize,
    pub matches: Vec<(usize, f64)>,
    pub terms: usize,
}

pub fn case() -> impl Strategy<Value = Case> {
    (
        prop::sample::select(vec![8u32, 5, 4]),
        prop::sample::select(vec![
            PromptKind::FewShotFuzzy,
            PromptKind::FewShotFuzzyAllMt,
            PromptKind::FewShotGlossaryTerms,
            PromptKind::ZeroShotGlossaryTerms,
        ]),
        1usize..120,
        prop::collection::vec((1usize..150, 0.0f64..=1.0), 1..16),
        1usize..11,
    )
        .prop_map(|(multiplier, kind, source_words, matches, terms)| Case { multiplier, kind, source_words, matches, terms })
}

pub fn request(c: &Case) -> PromptRequest {
    let lang = LanguagePair::new("en", target_lang(c.multiplier)).unwrap();
    assert_eq!(lang.length_multiplier, c.multiplier);
    let mut req = PromptRequest::new(c.kind, lang, text(c.source_words, 1));
    if c.kind.is_few_shot() {
        req.matches = c
            .matches
            .iter()
            .enumerate()
            .map(|(i, &(words, score))| FuzzyMatch {
                pair: SegmentPair {
                    id: PairId(i as u64 + 1),
                    source: text(words, i),
                    target: text(words + 3, i + 5),
                    origin: Origin::Approved,
                    created_at: chrono::DateTime::UNIX_EPOCH,
                },
                score,
            })
            .collect();
    }
    if c.kind.uses_terms() {
        req.terms = (0..c.terms).map(|i| TermPair::new(&format!("src term {i}"), &format!("tgt {i}"), 2)).collect();
    }
    if c.kind.uses_example_terms() {
        req.match_terms = Some(req.matches.iter().map(|_| vec![TermPair::new("a b", "c d", 2)]).collect());
    }
    if c.kind.uses_new_mt() {
        req.mt_new = Some(text(c.source_words, 3));
    }
    if c.kind.uses_match_mt() {
        req.mt_matches = Some(req.matches.iter().map(|m| m.pair.source.clone()).collect());
    }
    req
}

/// After fitting: prompt estimate plus output budget within the context
/// limit, and every dropped match scored no higher than any kept one.
pub fn check_fit(c: &Case) -> Result<(), TestCaseError> {
    let req = request(&c);
    let out = fit(&req, &BudgetConfig::default()).unwrap();
    let words = req.source.split_whitespace().count();
    prop_assert_eq!(out.output_tokens, words * c.multiplier as usize);

    // re-measure the fitted prompt independently
    let mut check = out.request.clone();
    if check.kind.is_few_shot() && check.matches.is_empty() {
        check.kind = PromptKind::ZeroShot;
        check.terms.clear();
        check.match_terms = None;
        check.mt_new = None;
        check.mt_matches = None;
    }
    if check.kind.uses_terms() && check.terms.is_empty() {
        check.kind = PromptKind::ZeroShot;
    }
    let prompt = render(&check).unwrap();
    let estimate = prompt.chars().count().div_ceil(4);
    prop_assert!(estimate <= out.prompt_tokens);
    prop_assert!(out.prompt_tokens + out.output_tokens <= CONTEXT_LIMIT);

    let kept_min = out.request.matches.iter().map(|m| m.score).fold(f64::INFINITY, f64::min);
    for d in &out.dropped_matches {
        prop_assert!(d.score <= kept_min, "dropped {} while keeping {}", d.score, kept_min);
    }
    prop_assert_eq!(out.dropped_matches.len() + out.request.matches.len(), req.matches.len());
    if let Some(mt) = &out.request.mt_matches {
        prop_assert_eq!(mt.len(), out.request.matches.len());
    }
    if !out.dropped_terms.is_empty() {
        prop_assert!(out.request.matches.is_empty());
    }
    Ok(())
}
