//! Prompt rendering for zero-shot, few-shot, MT-augmented, terminology-constrained
//! and term-extraction requests, plus context-window budgeting.
//!
//! Layout rules shared by every kind:
//! - one field per line, joined with `\n`, no trailing newline;
//! - few-shot examples are written worst match first, so the best match sits
//!   right above the segment being translated;
//! - the prompt ends with the target-language cue (`Arabic:`), or `1.` for
//!   term extraction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::FuzzyMatch;
use crate::terminology::TermPair;
use crate::tm::LanguagePair;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("{kind:?} requires `{field}`")]
    MissingField { kind: PromptKind, field: &'static str },
    #[error("`{field}` has {got} entries but there are {expected} matches")]
    Misaligned { field: &'static str, expected: usize, got: usize },
    #[error("{kind:?} does not use `{field}`")]
    UnexpectedField { kind: PromptKind, field: &'static str },
    #[error("no display name configured for language `{0}`")]
    UnknownLanguage(String),
    #[error("source segment is empty")]
    EmptySource,
    #[error("prompt needs {needed} tokens even without examples or terms; limit is {limit}")]
    SourceTooLong { needed: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    FewShotFuzzy,
    FewShotRandom,
    FewShotFuzzyNewMt,
    FewShotFuzzyAllMt,
    ZeroShotGlossaryTerms,
    FewShotFuzzyTerms,
    FewShotGlossaryTerms,
    TermExtraction,
}

impl PromptKind {
    pub const ALL: [PromptKind; 9] = [
        PromptKind::ZeroShot,
        PromptKind::FewShotFuzzy,
        PromptKind::FewShotRandom,
        PromptKind::FewShotFuzzyNewMt,
        PromptKind::FewShotFuzzyAllMt,
        PromptKind::ZeroShotGlossaryTerms,
        PromptKind::FewShotFuzzyTerms,
        PromptKind::FewShotGlossaryTerms,
        PromptKind::TermExtraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::ZeroShot => "zero_shot",
            PromptKind::FewShotFuzzy => "few_shot_fuzzy",
            PromptKind::FewShotRandom => "few_shot_random",
            PromptKind::FewShotFuzzyNewMt => "few_shot_fuzzy_new_mt",
            PromptKind::FewShotFuzzyAllMt => "few_shot_fuzzy_all_mt",
            PromptKind::ZeroShotGlossaryTerms => "zero_shot_glossary_terms",
            PromptKind::FewShotFuzzyTerms => "few_shot_fuzzy_terms",
            PromptKind::FewShotGlossaryTerms => "few_shot_glossary_terms",
            PromptKind::TermExtraction => "term_extraction",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name.replace('-', "_"))
    }

    pub fn is_few_shot(self) -> bool {
        matches!(
            self,
            PromptKind::FewShotFuzzy
                | PromptKind::FewShotRandom
                | PromptKind::FewShotFuzzyNewMt
                | PromptKind::FewShotFuzzyAllMt
                | PromptKind::FewShotFuzzyTerms
                | PromptKind::FewShotGlossaryTerms
        )
    }

    pub fn uses_terms(self) -> bool {
        matches!(
            self,
            PromptKind::ZeroShotGlossaryTerms | PromptKind::FewShotFuzzyTerms | PromptKind::FewShotGlossaryTerms
        )
    }

    /// Few-shot kinds that carry a `Terms:` line per example.
    pub fn uses_example_terms(self) -> bool {
        matches!(self, PromptKind::FewShotFuzzyTerms | PromptKind::FewShotGlossaryTerms)
    }

    pub fn uses_new_mt(self) -> bool {
        matches!(self, PromptKind::FewShotFuzzyNewMt | PromptKind::FewShotFuzzyAllMt)
    }

    pub fn uses_match_mt(self) -> bool {
        self == PromptKind::FewShotFuzzyAllMt
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Language code to the name written in prompts (`en` -> `English`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisplayNames(BTreeMap<String, String>);

impl Default for DisplayNames {
    fn default() -> Self {
        let names = [
            ("ar", "Arabic"),
            ("de", "German"),
            ("en", "English"),
            ("es", "Spanish"),
            ("fr", "French"),
            ("it", "Italian"),
            ("ja", "Japanese"),
            ("pt", "Portuguese"),
            ("ru", "Russian"),
            ("rw", "Kinyarwanda"),
            ("zh", "Chinese"),
        ];
        Self(names.iter().map(|(c, n)| (c.to_string(), n.to_string())).collect())
    }
}

impl DisplayNames {
    pub fn empty() -> Self {
        Self(BTreeMap::new())
    }

    pub fn with(mut self, code: &str, name: &str) -> Self {
        self.0.insert(code.to_string(), name.to_string());
        self
    }

    pub fn extend(&mut self, other: &BTreeMap<String, String>) {
        self.0.extend(other.iter().map(|(k, v)| (k.clone(), v.clone())));
    }

    /// Looks up `code`, then its primary subtag (`zh-Hans` -> `zh`).
    pub fn get(&self, code: &str) -> Result<&str, PromptError> {
        let primary = code.split(['-', '_']).next().unwrap_or(code);
        self.0
            .get(code)
            .or_else(|| self.0.get(primary))
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownLanguage(code.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub kind: PromptKind,
    pub lang: LanguagePair,
    pub source: String,
    /// Target sentence of the pair for term extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default)]
    pub matches: Vec<FuzzyMatch>,
    /// Terms for the segment being translated.
    #[serde(default)]
    pub terms: Vec<TermPair>,
    /// Terms per example, aligned with `matches`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_terms: Option<Vec<Vec<TermPair>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mt_new: Option<String>,
    /// MT of each example source, aligned with `matches`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mt_matches: Option<Vec<String>>,
    #[serde(default = "default_term_count")]
    pub term_count: usize,
    #[serde(default = "default_separator")]
    pub separator: String,
    pub language_display_names: DisplayNames,
}

fn default_term_count() -> usize {
    5
}

fn default_separator() -> String {
    "=".to_string()
}

impl PromptRequest {
    pub fn new(kind: PromptKind, lang: LanguagePair, source: impl Into<String>) -> Self {
        Self {
            kind,
            lang,
            source: source.into(),
            target: None,
            matches: Vec::new(),
            terms: Vec::new(),
            match_terms: None,
            mt_new: None,
            mt_matches: None,
            term_count: default_term_count(),
            separator: default_separator(),
            language_display_names: DisplayNames::default(),
        }
    }

    pub fn term_extraction(
        lang: LanguagePair,
        source: &str,
        target: &str,
        n: usize,
        separator: &str,
        names: DisplayNames,
    ) -> Self {
        Self {
            target: Some(target.to_string()),
            term_count: n,
            separator: separator.to_string(),
            language_display_names: names,
            ..Self::new(PromptKind::TermExtraction, lang, source)
        }
    }

    pub fn with_matches(mut self, matches: Vec<FuzzyMatch>) -> Self {
        self.matches = matches;
        self
    }

    pub fn with_terms(mut self, terms: Vec<TermPair>) -> Self {
        self.terms = terms;
        self
    }

    pub fn with_match_terms(mut self, match_terms: Vec<Vec<TermPair>>) -> Self {
        self.match_terms = Some(match_terms);
        self
    }

    pub fn with_mt(mut self, mt_new: impl Into<String>) -> Self {
        self.mt_new = Some(mt_new.into());
        self
    }

    pub fn with_mt_matches(mut self, mt_matches: Vec<String>) -> Self {
        self.mt_matches = Some(mt_matches);
        self
    }

    pub fn with_display_names(mut self, names: DisplayNames) -> Self {
        self.language_display_names = names;
        self
    }

    /// Checks that the fields the kind needs are present, aligned, and that
    /// fields it has no line for are absent.
    pub fn validate(&self) -> Result<(), PromptError> {
        let kind = self.kind;
        let missing = |field| Err(PromptError::MissingField { kind, field });
        let unexpected = |field| Err(PromptError::UnexpectedField { kind, field });
        if self.source.trim().is_empty() {
            return Err(PromptError::EmptySource);
        }
        if kind.is_few_shot() && self.matches.is_empty() {
            return missing("matches");
        }
        if !kind.is_few_shot() && !self.matches.is_empty() {
            return unexpected("matches");
        }
        if kind.uses_terms() && self.terms.is_empty() {
            return missing("terms");
        }
        if !kind.uses_terms() && !self.terms.is_empty() {
            return unexpected("terms");
        }
        if kind.uses_example_terms() {
            match &self.match_terms {
                None => return missing("match_terms"),
                Some(mt) if mt.len() != self.matches.len() => {
                    return Err(PromptError::Misaligned {
                        field: "match_terms",
                        expected: self.matches.len(),
                        got: mt.len(),
                    })
                }
                Some(_) => {}
            }
        } else if self.match_terms.is_some() {
            return unexpected("match_terms");
        }
        if kind.uses_new_mt() && self.mt_new.is_none() {
            return missing("mt_new");
        }
        if !kind.uses_new_mt() && self.mt_new.is_some() {
            return unexpected("mt_new");
        }
        if kind.uses_match_mt() {
            match &self.mt_matches {
                None => return missing("mt_matches"),
                Some(mt) if mt.len() != self.matches.len() => {
                    return Err(PromptError::Misaligned {
                        field: "mt_matches",
                        expected: self.matches.len(),
                        got: mt.len(),
                    })
                }
                Some(_) => {}
            }
        } else if self.mt_matches.is_some() {
            return unexpected("mt_matches");
        }
        if kind == PromptKind::TermExtraction && self.target.as_deref().is_none_or(|t| t.trim().is_empty()) {
            return missing("target");
        }
        Ok(())
    }
}

/// Line breaks inside a field would split it across template lines.
fn field(text: &str) -> String {
    if text.contains(['\n', '\r']) {
        text.split(['\n', '\r']).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
    } else {
        text.to_string()
    }
}

/// `src1 = tgt1 - src2 = tgt2`
pub fn format_terms(terms: &[TermPair]) -> String {
    terms
        .iter()
        .map(|t| format!("{} = {}", field(&t.src), field(&t.tgt)))
        .collect::<Vec<_>>()
        .join(" - ")
}

/// Positions of `matches` in rendering order: lowest score first; among equal
/// scores the earlier-ranked match is written later.
pub fn example_order(matches: &[FuzzyMatch]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..matches.len()).collect();
    idx.sort_by(|&a, &b| matches[b].score.total_cmp(&matches[a].score).then(a.cmp(&b)));
    idx.reverse();
    idx
}

pub fn render(req: &PromptRequest) -> Result<String, PromptError> {
    req.validate()?;
    render_unchecked(req)
}

/// Renders without the presence checks, so budgeting can measure partially
/// reduced requests. Optional lines are skipped when their data is missing.
pub(crate) fn render_unchecked(req: &PromptRequest) -> Result<String, PromptError> {
    let names = &req.language_display_names;
    let src_name = names.get(&req.lang.source_lang)?;
    let tgt_name = names.get(&req.lang.target_lang)?;
    let mut out = String::new();

    if req.kind == PromptKind::TermExtraction {
        let target = req.target.as_deref().unwrap_or_default();
        let _ = write!(
            out,
            "{src_name}: {}\n{tgt_name}: {}\n\nExtract {} terms from the above sentence pair. \
             Type each {src_name} term and its {tgt_name} equivalent in one line, separated by '{}'.\n\n1.",
            field(&req.source),
            field(target),
            req.term_count,
            req.separator,
        );
        return Ok(out);
    }

    for i in example_order(&req.matches) {
        let m = &req.matches[i];
        if req.kind.uses_example_terms() {
            if let Some(terms) = req.match_terms.as_ref().and_then(|t| t.get(i)) {
                if !terms.is_empty() {
                    let _ = writeln!(out, "Terms: {}", format_terms(terms));
                }
            }
        }
        let _ = writeln!(out, "{src_name}: {}", field(&m.pair.source));
        if req.kind.uses_match_mt() {
            if let Some(mt) = req.mt_matches.as_ref().and_then(|t| t.get(i)) {
                let _ = writeln!(out, "MT: {}", field(mt));
            }
        }
        let _ = writeln!(out, "{tgt_name}: {}", field(&m.pair.target));
    }

    if req.kind.uses_terms() && !req.terms.is_empty() {
        let _ = writeln!(out, "Terms: {}", format_terms(&req.terms));
    }
    let _ = writeln!(out, "{src_name}: {}", field(&req.source));
    if req.kind.uses_new_mt() {
        if let Some(mt) = &req.mt_new {
            let _ = writeln!(out, "MT: {}", field(mt));
        }
    }
    let _ = write!(out, "{tgt_name}:");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub context_limit: usize,
    pub approx_chars_per_token: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { context_limit: 4097, approx_chars_per_token: 4.0 }
    }
}

impl BudgetConfig {
    pub fn estimate_tokens(&self, text: &str) -> usize {
        (text.chars().count() as f64 / self.approx_chars_per_token).ceil() as usize
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Output-token allowance: source words times the language's length multiplier.
pub fn output_budget(source: &str, lang: &LanguagePair) -> usize {
    word_count(source) * lang.length_multiplier as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub request: PromptRequest,
    pub dropped_matches: Vec<FuzzyMatch>,
    pub dropped_terms: Vec<TermPair>,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
}

impl FitOutcome {
    pub fn changed(&self) -> bool {
        !self.dropped_matches.is_empty() || !self.dropped_terms.is_empty()
    }
}

/// Shrinks `req` until estimated prompt tokens plus the output budget fit the
/// context window. Lowest-scoring matches go first (with their MT and terms),
/// then query terms from the end of the list. The source is never cut.
///
/// A few-shot request may come back with no matches left; the caller decides
/// how to degrade it.
pub fn fit(req: &PromptRequest, budget: &BudgetConfig) -> Result<FitOutcome, PromptError> {
    if req.source.trim().is_empty() {
        return Err(PromptError::EmptySource);
    }
    let output_tokens = output_budget(&req.source, &req.lang);
    let mut current = req.clone();
    let mut dropped_matches = Vec::new();
    let mut dropped_terms = Vec::new();
    loop {
        let prompt_tokens = budget.estimate_tokens(&render_unchecked(&current)?);
        if prompt_tokens + output_tokens <= budget.context_limit {
            return Ok(FitOutcome { request: current, dropped_matches, dropped_terms, prompt_tokens, output_tokens });
        }
        if !current.matches.is_empty() {
            // first in rendering order is the weakest example
            let weakest = example_order(&current.matches)[0];
            dropped_matches.push(current.matches.remove(weakest));
            if let Some(mt) = current.mt_matches.as_mut() {
                if weakest < mt.len() {
                    mt.remove(weakest);
                }
            }
            if let Some(mt) = current.match_terms.as_mut() {
                if weakest < mt.len() {
                    mt.remove(weakest);
                }
            }
        } else if let Some(term) = current.terms.pop() {
            dropped_terms.push(term);
        } else {
            return Err(PromptError::SourceTooLong {
                needed: prompt_tokens + output_tokens,
                limit: budget.context_limit,
            });
        }
    }
}
