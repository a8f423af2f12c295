//! Corpus-level BLEU and chrF/chrF++ with a fixed built-in tokenization, and
//! comparison reports over several runs.
//!
//! Scores use the tokenization documented here, not SentencePiece, so they are
//! not comparable with spBLEU numbers computed elsewhere.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terminology::is_punctuation;

pub const TOKENIZATION_NOTICE: &str =
    "Scores use built-in punctuation-split whitespace tokenization; they are not comparable with spBLEU.";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("no segments to score")]
    Empty,
    #[error("no references for language `{0}`")]
    MissingReferences(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu,
    Chrf,
    ChrfPp,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Bleu => "BLEU",
            Metric::Chrf => "chrF",
            Metric::ChrfPp => "chrF++",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: Metric,
    pub value: f64,
    pub params: BTreeMap<String, String>,
}

impl MetricScore {
    pub fn params_string(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

fn check_lengths<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<(), EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Puts spaces around every Unicode punctuation character, then splits on whitespace.
pub fn bleu_tokens(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if is_punctuation(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts<T: Eq + Hash + Clone>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && items.len() >= n {
        for w in items.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// (clipped matches, hypothesis n-grams, reference n-grams)
fn overlap<T: Eq + Hash + Clone>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h.iter().map(|(g, &c)| c.min(*r.get(g).unwrap_or(&0))).sum();
    (matches, h.values().sum(), r.values().sum())
}

pub const BLEU_MAX_ORDER: usize = 4;

/// Corpus BLEU: clipped n-gram precisions up to 4-grams, geometric mean, brevity
/// penalty. Precisions for n > 1 use add-one smoothing.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<MetricScore, EvalError> {
    check_lengths(hyps, refs)?;
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let ht = bleu_tokens(h.as_ref());
        let rt = bleu_tokens(r.as_ref());
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=BLEU_MAX_ORDER {
            let (m, t, _) = overlap(&ht, &rt, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    let value = if hyp_len == 0 || matches[0] == 0 {
        0.0
    } else {
        let mut log_sum = (matches[0] as f64 / totals[0] as f64).ln();
        for n in 1..BLEU_MAX_ORDER {
            log_sum += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
        }
        let bp = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
        (100.0 * bp * (log_sum / BLEU_MAX_ORDER as f64).exp()).clamp(0.0, 100.0)
    };
    let params = BTreeMap::from([
        ("max_order".to_string(), BLEU_MAX_ORDER.to_string()),
        ("smoothing".to_string(), "add-one-n>1".to_string()),
        ("tokenize".to_string(), "punct-split".to_string()),
        ("hyp_len".to_string(), hyp_len.to_string()),
        ("ref_len".to_string(), ref_len.to_string()),
    ]);
    Ok(MetricScore { metric: Metric::Bleu, value, params })
}

/// Word tokens for chrF++: whitespace split, with one leading or trailing
/// punctuation character split off a multi-character token.
pub fn chrf_word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        let chars: Vec<char> = w.chars().collect();
        if chars.len() > 1 && is_punctuation(chars[chars.len() - 1]) {
            out.push(chars[..chars.len() - 1].iter().collect());
            out.push(chars[chars.len() - 1].to_string());
        } else if chars.len() > 1 && is_punctuation(chars[0]) {
            out.push(chars[0].to_string());
            out.push(chars[1..].iter().collect());
        } else {
            out.push(w.to_string());
        }
    }
    out
}

/// Corpus chrF. `word_n = 2` gives chrF++.
///
/// Character n-grams ignore whitespace. Match statistics are summed over the
/// corpus per order; precision and recall are averaged over the orders where
/// both sides have n-grams, then combined into an F-beta score.
pub fn chrf<S: AsRef<str>>(hyps: &[S], refs: &[S], char_n: usize, word_n: usize, beta: f64) -> Result<MetricScore, EvalError> {
    check_lengths(hyps, refs)?;
    let orders = char_n + word_n;
    let mut stats = vec![(0usize, 0usize, 0usize); orders];
    for (h, r) in hyps.iter().zip(refs) {
        let hc: Vec<char> = h.as_ref().chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = r.as_ref().chars().filter(|c| !c.is_whitespace()).collect();
        for n in 1..=char_n {
            let (m, th, tr) = overlap(&hc, &rc, n);
            let s = &mut stats[n - 1];
            *s = (s.0 + m, s.1 + th, s.2 + tr);
        }
        if word_n > 0 {
            let hw = chrf_word_tokens(h.as_ref());
            let rw = chrf_word_tokens(r.as_ref());
            for n in 1..=word_n {
                let (m, th, tr) = overlap(&hw, &rw, n);
                let s = &mut stats[char_n + n - 1];
                *s = (s.0 + m, s.1 + th, s.2 + tr);
            }
        }
    }
    let (mut prec, mut rec, mut effective) = (0.0, 0.0, 0usize);
    for &(m, th, tr) in &stats {
        if th > 0 && tr > 0 {
            prec += m as f64 / th as f64;
            rec += m as f64 / tr as f64;
            effective += 1;
        }
    }
    let value = if effective == 0 {
        0.0
    } else {
        let (p, r) = (prec / effective as f64, rec / effective as f64);
        let b2 = beta * beta;
        if p + r > 0.0 {
            (100.0 * (1.0 + b2) * p * r / (b2 * p + r)).clamp(0.0, 100.0)
        } else {
            0.0
        }
    };
    let metric = if word_n > 0 { Metric::ChrfPp } else { Metric::Chrf };
    let params = BTreeMap::from([
        ("char_n".to_string(), char_n.to_string()),
        ("word_n".to_string(), word_n.to_string()),
        ("beta".to_string(), beta.to_string()),
    ]);
    Ok(MetricScore { metric, value, params })
}

pub fn chrf_pp<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<MetricScore, EvalError> {
    chrf(hyps, refs, 6, 2, 2.0)
}

/// One system output to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub label: String,
    pub lang: String,
    pub hyps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_label: String,
    pub lang: String,
    pub metric: Metric,
    pub value: f64,
    pub n_segments: usize,
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_METRICS: [Metric; 3] = [Metric::Bleu, Metric::Chrf, Metric::ChrfPp];

/// Scores each run against the references for its language.
pub fn report(runs: &[EvalRun], refs: &BTreeMap<String, Vec<String>>) -> Result<Report, EvalError> {
    let mut rows = Vec::new();
    for run in runs {
        let r = refs.get(&run.lang).ok_or_else(|| EvalError::MissingReferences(run.lang.clone()))?;
        let scores = [
            corpus_bleu(&run.hyps, r)?,
            chrf(&run.hyps, r, 6, 0, 2.0)?,
            chrf(&run.hyps, r, 6, 2, 2.0)?,
        ];
        for s in scores {
            rows.push(ReportRow {
                run_label: run.label.clone(),
                lang: run.lang.clone(),
                metric: s.metric,
                value: s.value,
                n_segments: run.hyps.len(),
                params: format!("lang={};{}", run.lang, s.params_string()),
            });
        }
    }
    Ok(Report { rows })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    /// `run_label,metric,value,n_segments,params`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run_label,metric,value,n_segments,params\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.2},{},{}",
                csv_field(&r.run_label),
                r.metric.label(),
                r.value,
                r.n_segments,
                csv_field(&r.params)
            );
        }
        out
    }

    /// One row per run, one column per language and metric.
    pub fn to_table(&self) -> String {
        let langs: BTreeSet<&str> = self.rows.iter().map(|r| r.lang.as_str()).collect();
        let mut labels: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.run_label.as_str()) {
                labels.push(&r.run_label);
            }
        }
        let mut header = vec!["run".to_string()];
        for lang in &langs {
            for m in REPORT_METRICS {
                header.push(format!("{lang} {}", m.label()));
            }
        }
        let mut body: Vec<Vec<String>> = Vec::new();
        for label in &labels {
            let mut row = vec![label.to_string()];
            for lang in &langs {
                for m in REPORT_METRICS {
                    let cell = self
                        .rows
                        .iter()
                        .find(|r| r.run_label == *label && r.lang == *lang && r.metric == m)
                        .map(|r| format!("{:.2}", r.value))
                        .unwrap_or_else(|| "-".to_string());
                    row.push(cell);
                }
            }
            body.push(row);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| body.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
            .collect();
        let fmt_row = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", fmt_row(&header));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
        for row in &body {
            let _ = writeln!(out, "{}", fmt_row(row));
        }
        let _ = writeln!(out, "\n{TOKENIZATION_NOTICE}");
        out
    }
}
