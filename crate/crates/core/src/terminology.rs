//! Bilingual terminology: LLM term extraction, parsing, glossary compilation and
//! n-gram matching of glossary terms against new source segments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::gateway::{Gateway, GatewayError, GenerationConfig};
use crate::prompting::{self, DisplayNames, PromptError, PromptRequest};
use crate::tm::{LanguagePair, SegmentPair};

/// Longest n-gram a glossary source term may have.
pub const MAX_NGRAM: usize = 5;

#[derive(Debug, Error)]
pub enum TermError {
    #[error("glossary line {line}: {message}")]
    GlossaryRecord { line: usize, message: String },
    #[error("invalid glossary config: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermPair {
    pub src: String,
    pub tgt: String,
    pub freq: u32,
    pub ngram_len: usize,
}

impl TermPair {
    pub fn new(src: &str, tgt: &str, freq: u32) -> Self {
        let src = src.trim().to_string();
        let ngram_len = src.split_whitespace().count();
        Self { src, tgt: tgt.trim().to_string(), freq, ngram_len }
    }
}

pub fn is_punctuation(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

/// Whitespace tokens with leading/trailing punctuation stripped, lowercased.
/// Tokens that are pure punctuation disappear.
pub fn term_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(is_punctuation).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// A bundled list of English function words, matched against lowercased tokens.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "either",
    "else", "even", "ever", "every", "few", "for", "from", "further", "had", "has", "have",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "however",
    "i", "if", "in", "into", "is", "it", "its", "itself", "just", "let", "may", "me", "might",
    "more", "most", "much", "must", "my", "myself", "neither", "no", "nor", "not", "now", "of",
    "off", "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out",
    "over", "own", "per", "same", "shall", "she", "should", "since", "so", "some", "such",
    "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these",
    "they", "this", "those", "though", "through", "thus", "to", "too", "under", "until", "up",
    "upon", "us", "very", "via", "was", "we", "were", "what", "whatever", "when", "where",
    "whether", "which", "while", "who", "whom", "whose", "why", "will", "with", "within",
    "without", "would", "yet", "you", "your", "yours", "yourself", "yourselves",
];

pub fn english_stopwords() -> HashSet<String> {
    ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlossaryConfig {
    pub min_freq: u32,
    pub max_ngram: usize,
    pub max_terms_per_segment: usize,
    /// Lowercased tokens; applied to the source side only.
    pub stopwords: HashSet<String>,
    pub separator: String,
    /// Skip a term whose source is a contiguous part of an already selected longer term.
    pub suppress_overlaps: bool,
}

impl Default for GlossaryConfig {
    fn default() -> Self {
        Self {
            min_freq: 2,
            max_ngram: MAX_NGRAM,
            max_terms_per_segment: 5,
            stopwords: english_stopwords(),
            separator: "=".to_string(),
            suppress_overlaps: true,
        }
    }
}

impl GlossaryConfig {
    pub fn validate(&self) -> Result<(), TermError> {
        if self.min_freq < 1 {
            return Err(TermError::Config("min_freq must be >= 1".into()));
        }
        if !(1..=MAX_NGRAM).contains(&self.max_ngram) {
            return Err(TermError::Config(format!("max_ngram must be in 1..={MAX_NGRAM}")));
        }
        if self.separator.trim().is_empty() {
            return Err(TermError::Config("separator must not be blank".into()));
        }
        Ok(())
    }
}

/// Compiled glossary, ordered longest n-gram first, then by descending
/// frequency, then by source text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Glossary {
    entries: Vec<TermPair>,
}

pub fn glossary_order(a: &TermPair, b: &TermPair) -> std::cmp::Ordering {
    b.ngram_len
        .cmp(&a.ngram_len)
        .then(b.freq.cmp(&a.freq))
        .then_with(|| a.src.cmp(&b.src))
}

impl Glossary {
    /// Sorts entries into glossary order and keeps the first entry per
    /// (case-insensitive) source.
    pub fn from_entries(mut entries: Vec<TermPair>) -> Self {
        entries.sort_by(glossary_order);
        let mut seen = HashSet::new();
        entries.retain(|e| seen.insert(e.src.to_lowercase()));
        Self { entries }
    }

    pub fn entries(&self) -> &[TermPair] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `src<TAB>tgt<TAB>freq<TAB>ngram_len` per line, in glossary order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.src, e.tgt, e.freq, e.ngram_len);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, TermError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: &str| TermError::GlossaryRecord { line: idx + 1, message: message.into() };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(err("expected 4 tab-separated columns"));
            }
            let freq = cols[2].trim().parse().map_err(|_| err("freq is not an integer"))?;
            let ngram_len: usize = cols[3].trim().parse().map_err(|_| err("ngram_len is not an integer"))?;
            let entry = TermPair { src: cols[0].to_string(), tgt: cols[1].to_string(), freq, ngram_len };
            if entry.src.is_empty() || entry.tgt.is_empty() {
                return Err(err("empty term"));
            }
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn save(&self, path: &Path) -> Result<(), TermError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TermError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

/// Renders the term-extraction prompt for one segment pair.
pub fn extraction_prompt(
    pair: &SegmentPair,
    lang: &LanguagePair,
    n: usize,
    separator: &str,
    names: &DisplayNames,
) -> Result<String, PromptError> {
    let req = PromptRequest::term_extraction(lang.clone(), &pair.source, &pair.target, n, separator, names.clone());
    prompting::render(&req)
}

/// Asks the model for `n` bilingual terms and returns the completion split into lines.
pub async fn extract_terms(
    pair: &SegmentPair,
    lang: &LanguagePair,
    n: usize,
    separator: &str,
    names: &DisplayNames,
    gateway: &Gateway,
    cfg: &GenerationConfig,
) -> Result<Vec<String>, TermError> {
    let prompt = extraction_prompt(pair, lang, n, separator, names)?;
    let completion = gateway.complete(&prompt, cfg).await?;
    Ok(split_term_lines(&completion.text))
}

/// Splits a raw extraction completion into non-blank lines.
pub fn split_term_lines(text: &str) -> Vec<String> {
    let lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if lines.is_empty() {
        log::warn!("term extraction returned an empty completion");
    }
    lines
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTerm {
    pub term: TermPair,
    /// Case-insensitive substring test against the source sentence.
    pub src_in_sentence: bool,
    pub tgt_in_sentence: bool,
}

impl ParsedTerm {
    pub fn present_in_sentence(&self) -> bool {
        self.src_in_sentence && self.tgt_in_sentence
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedTerms {
    pub terms: Vec<ParsedTerm>,
    pub malformed: usize,
}

/// Removes a leading enumeration marker such as `2.` or `3)`.
fn strip_enumeration(line: &str) -> &str {
    let trimmed = line.trim_start();
    let digits = trimmed.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &trimmed[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r;
        }
    }
    trimmed
}

pub fn parse_term_lines<S: AsRef<str>>(
    lines: &[S],
    separator: &str,
    source_sentence: &str,
    target_sentence: &str,
) -> ParsedTerms {
    let src_lower = source_sentence.to_lowercase();
    let tgt_lower = target_sentence.to_lowercase();
    let mut out = ParsedTerms::default();
    for line in lines {
        let body = strip_enumeration(line.as_ref());
        let Some((src, tgt)) = body.split_once(separator) else {
            out.malformed += 1;
            continue;
        };
        let (src, tgt) = (src.trim(), tgt.trim());
        if src.is_empty() || tgt.is_empty() {
            out.malformed += 1;
            continue;
        }
        out.terms.push(ParsedTerm {
            term: TermPair::new(src, tgt, 1),
            src_in_sentence: src_lower.contains(&src.to_lowercase()),
            tgt_in_sentence: tgt_lower.contains(&tgt.to_lowercase()),
        });
    }
    out
}

/// Counts raw (src, tgt) observations case-insensitively. Each aggregated
/// candidate keeps the most frequent surface form of either side (ties go to
/// the lexicographically smallest form).
pub fn aggregate_candidates<I, S, T>(raw: I) -> Vec<TermPair>
where
    I: IntoIterator<Item = (S, T)>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    #[derive(Default)]
    struct Acc {
        count: u32,
        src_forms: BTreeMap<String, u32>,
        tgt_forms: BTreeMap<String, u32>,
    }
    let mut groups: BTreeMap<(String, String), Acc> = BTreeMap::new();
    for (src, tgt) in raw {
        let (src, tgt) = (src.as_ref().trim(), tgt.as_ref().trim());
        let acc = groups.entry((src.to_lowercase(), tgt.to_lowercase())).or_default();
        acc.count += 1;
        *acc.src_forms.entry(src.to_string()).or_default() += 1;
        *acc.tgt_forms.entry(tgt.to_string()).or_default() += 1;
    }
    fn most_frequent(forms: &BTreeMap<String, u32>) -> String {
        // BTreeMap iterates in ascending key order, so `>` keeps the smallest on ties
        let mut best: Option<(&String, u32)> = None;
        for (form, &n) in forms {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((form, n));
            }
        }
        best.map(|(f, _)| f.clone()).unwrap_or_default()
    }
    groups
        .into_values()
        .map(|acc| TermPair::new(&most_frequent(&acc.src_forms), &most_frequent(&acc.tgt_forms), acc.count))
        .collect()
}

fn is_stopword_term(src: &str, stopwords: &HashSet<String>) -> bool {
    let tokens = term_tokens(src);
    tokens.is_empty() || tokens.iter().all(|t| stopwords.contains(t))
}

/// Compiles aggregated candidates into a glossary.
///
/// Drops empty sides, sources longer than `max_ngram` tokens, entries below
/// `min_freq`, and sources made only of stopwords; then keeps the most
/// frequent target per source (ties: smallest target).
pub fn compile_glossary(candidates: &[TermPair], cfg: &GlossaryConfig) -> Glossary {
    let mut best: HashMap<String, TermPair> = HashMap::new();
    for cand in candidates {
        let src = cand.src.trim();
        let tgt = cand.tgt.trim();
        if src.is_empty() || tgt.is_empty() {
            continue;
        }
        let ngram_len = src.split_whitespace().count();
        if ngram_len > cfg.max_ngram || cand.freq < cfg.min_freq {
            continue;
        }
        if is_stopword_term(src, &cfg.stopwords) {
            continue;
        }
        let entry = TermPair { src: src.to_string(), tgt: tgt.to_string(), freq: cand.freq, ngram_len };
        match best.get_mut(&src.to_lowercase()) {
            Some(cur) => {
                if entry.freq > cur.freq || (entry.freq == cur.freq && entry.tgt < cur.tgt) {
                    *cur = entry;
                }
            }
            None => {
                best.insert(src.to_lowercase(), entry);
            }
        }
    }
    let glossary = Glossary::from_entries(best.into_values().collect());
    if glossary.is_empty() {
        log::warn!("compiled glossary is empty");
    }
    glossary
}

fn contains_contiguous(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Glossary terms whose source equals a contiguous 1..=5-gram of `source`,
/// in glossary order and truncated to `max_terms`.
pub fn match_terms(source: &str, glossary: &Glossary, max_terms: usize, suppress_overlaps: bool) -> Vec<TermPair> {
    let tokens = term_tokens(source);
    let mut ngrams: HashSet<&[String]> = HashSet::new();
    for n in 1..=MAX_NGRAM.min(tokens.len()) {
        ngrams.extend(tokens.windows(n));
    }
    let mut selected: Vec<(Vec<String>, &TermPair)> = Vec::new();
    for entry in glossary.entries() {
        if selected.len() >= max_terms {
            break;
        }
        let term = term_tokens(&entry.src);
        if term.is_empty() || term.len() > MAX_NGRAM || !ngrams.contains(term.as_slice()) {
            continue;
        }
        if suppress_overlaps && selected.iter().any(|(s, _)| contains_contiguous(s, &term)) {
            continue;
        }
        selected.push((term, entry));
    }
    selected.into_iter().map(|(_, e)| e.clone()).collect()
}
