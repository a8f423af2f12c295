//! Translation memory: segment pairs, ingestion, deduplication and persistence.
//!
//! The canonical on-disk store is JSONL, one pair per line. TSV (`source<TAB>target`,
//! no header) is accepted for ingestion and export only.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TmError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("no records found in input")]
    Empty,
    #[error("translation memory is empty")]
    EmptyMemory,
    #[error("invalid language pair: {0}")]
    InvalidLanguage(String),
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("unknown format `{0}` (expected tsv or jsonl)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TmError> = std::result::Result<T, E>;

/// Output tokens per source word for the target languages the engine ships defaults for.
pub fn default_length_multiplier(target_lang: &str) -> Option<u32> {
    match base_code(target_lang).as_str() {
        "ar" => Some(8),
        "zh" | "rw" => Some(5),
        "fr" | "es" => Some(4),
        _ => None,
    }
}

/// Multiplier used when a target language has no known default.
pub const FALLBACK_LENGTH_MULTIPLIER: u32 = 4;

fn base_code(code: &str) -> String {
    code.split(['-', '_']).next().unwrap_or(code).to_ascii_lowercase()
}

fn is_valid_code(code: &str) -> bool {
    let mut parts = code.split(['-', '_']);
    let Some(primary) = parts.next() else {
        return false;
    };
    if !(2..=3).contains(&primary.len()) || !primary.chars().all(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguagePair {
    pub source_lang: String,
    pub target_lang: String,
    pub length_multiplier: u32,
}

impl LanguagePair {
    /// Builds a pair using the default multiplier for the target language.
    pub fn new(source_lang: &str, target_lang: &str) -> Result<Self> {
        let multiplier =
            default_length_multiplier(target_lang).unwrap_or(FALLBACK_LENGTH_MULTIPLIER);
        Self::with_multiplier(source_lang, target_lang, multiplier)
    }

    pub fn with_multiplier(source_lang: &str, target_lang: &str, length_multiplier: u32) -> Result<Self> {
        let pair = Self {
            source_lang: source_lang.trim().to_string(),
            target_lang: target_lang.trim().to_string(),
            length_multiplier,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        for code in [&self.source_lang, &self.target_lang] {
            if !is_valid_code(code) {
                return Err(TmError::InvalidLanguage(format!("`{code}` is not a language code")));
            }
        }
        if base_code(&self.source_lang) == base_code(&self.target_lang) {
            return Err(TmError::InvalidLanguage(format!(
                "source and target are both `{}`",
                self.source_lang
            )));
        }
        if self.length_multiplier < 1 {
            return Err(TmError::InvalidLanguage("length multiplier must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairId(pub u64);

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Approved,
    Machine,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPair {
    pub id: PairId,
    pub source: String,
    pub target: String,
    pub origin: Origin,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Jsonl,
}

impl FromStr for Format {
    type Err = TmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(TmError::UnknownFormat(other.to_string())),
        }
    }
}

/// Trims and collapses internal whitespace runs to a single space. Case is kept.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dedup_key(source: &str, target: &str) -> (String, String) {
    (normalize(source), normalize(target))
}

/// Counts reported by ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub read: usize,
    pub kept: usize,
    pub dropped: usize,
}

/// A record as it appears in an input file, before it is assigned an id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub line: usize,
    pub source: String,
    pub target: String,
    pub origin: Origin,
}

#[derive(Deserialize)]
struct JsonlRecord {
    source: Option<String>,
    target: Option<String>,
    #[serde(default)]
    origin: Option<Origin>,
}

/// Parses TSV or JSONL text into raw records. Blank lines are skipped.
///
/// Every malformed line is reported; the caller gets all of them at once so a
/// client can fix an upload in one pass.
pub fn parse_records(text: &str, format: Format) -> std::result::Result<Vec<RawRecord>, Vec<TmError>> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.trim_end_matches('\r');
        if content.trim().is_empty() {
            continue;
        }
        match parse_line(content, line, format) {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    if records.is_empty() {
        return Err(vec![TmError::Empty]);
    }
    Ok(records)
}

fn parse_line(content: &str, line: usize, format: Format) -> Result<RawRecord> {
    let record_err = |message: String| TmError::Record { line, message };
    let (source, target, origin) = match format {
        Format::Tsv => {
            let mut cols = content.split('\t');
            let source = cols.next().unwrap_or_default();
            let target = cols
                .next()
                .ok_or_else(|| record_err("expected two tab-separated columns".into()))?;
            if cols.next().is_some() {
                return Err(record_err("more than two tab-separated columns".into()));
            }
            (source.to_string(), target.to_string(), Origin::Approved)
        }
        Format::Jsonl => {
            let rec: JsonlRecord =
                serde_json::from_str(content).map_err(|e| record_err(format!("invalid JSON: {e}")))?;
            let source = rec.source.ok_or_else(|| record_err("missing \"source\"".into()))?;
            let target = rec.target.ok_or_else(|| record_err("missing \"target\"".into()))?;
            (source, target, rec.origin.unwrap_or_default())
        }
    };
    if source.trim().is_empty() {
        return Err(record_err("empty source".into()));
    }
    if target.trim().is_empty() {
        return Err(record_err("empty target".into()));
    }
    Ok(RawRecord { line, source, target, origin })
}

#[derive(Debug, Clone)]
pub struct TranslationMemory {
    pub project_id: String,
    pub lang: LanguagePair,
    pairs: Vec<SegmentPair>,
    keys: HashMap<(String, String), usize>,
    next_id: u64,
}

impl PartialEq for TranslationMemory {
    fn eq(&self, other: &Self) -> bool {
        self.project_id == other.project_id && self.lang == other.lang && self.pairs == other.pairs
    }
}

impl TranslationMemory {
    pub fn new(project_id: impl Into<String>, lang: LanguagePair) -> Self {
        Self {
            project_id: project_id.into(),
            lang,
            pairs: Vec::new(),
            keys: HashMap::new(),
            next_id: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs in insertion order.
    pub fn pairs(&self) -> &[SegmentPair] {
        &self.pairs
    }

    pub fn get(&self, id: PairId) -> Option<&SegmentPair> {
        // ids are assigned monotonically, so the store stays sorted by id
        self.pairs
            .binary_search_by_key(&id, |p| p.id)
            .ok()
            .map(|i| &self.pairs[i])
    }

    pub fn find(&self, source: &str, target: &str) -> Option<&SegmentPair> {
        self.keys.get(&dedup_key(source, target)).map(|&i| &self.pairs[i])
    }

    /// Inserts a pair unless its normalized (source, target) is already stored.
    /// Returns the stored pair and whether it was newly inserted.
    pub fn insert(&mut self, source: &str, target: &str, origin: Origin) -> Result<(SegmentPair, bool)> {
        if source.trim().is_empty() {
            return Err(TmError::EmptyField("source"));
        }
        if origin == Origin::Approved && target.trim().is_empty() {
            return Err(TmError::EmptyField("target"));
        }
        let key = dedup_key(source, target);
        if let Some(&i) = self.keys.get(&key) {
            return Ok((self.pairs[i].clone(), false));
        }
        let pair = SegmentPair {
            id: PairId(self.next_id),
            source: source.to_string(),
            target: target.to_string(),
            origin,
            created_at: Utc::now(),
        };
        self.next_id += 1;
        self.keys.insert(key, self.pairs.len());
        self.pairs.push(pair.clone());
        Ok((pair, true))
    }

    /// Records an approved translation. Approving an existing pair is a no-op
    /// that returns the stored pair.
    pub fn approve(&mut self, source: &str, target: &str) -> Result<SegmentPair> {
        if target.trim().is_empty() {
            return Err(TmError::EmptyField("target"));
        }
        self.insert(source, target, Origin::Approved).map(|(pair, _)| pair)
    }

    /// Adds parsed records, dropping duplicates against the memory and each other.
    pub fn extend_records(&mut self, records: Vec<RawRecord>) -> Result<IngestReport> {
        let mut report = IngestReport { read: records.len(), ..Default::default() };
        for rec in records {
            let (_, inserted) = self.insert(&rec.source, &rec.target, rec.origin)?;
            if inserted {
                report.kept += 1;
            } else {
                report.dropped += 1;
            }
        }
        Ok(report)
    }

    /// Restores a pair with its original id and timestamp, as read back from the store.
    pub fn restore(&mut self, pair: SegmentPair) -> bool {
        let key = dedup_key(&pair.source, &pair.target);
        if self.keys.contains_key(&key) || self.pairs.last().is_some_and(|p| p.id >= pair.id) {
            return false;
        }
        self.next_id = pair.id.0 + 1;
        self.keys.insert(key, self.pairs.len());
        self.pairs.push(pair);
        true
    }

    pub fn to_tsv(&self) -> Result<String> {
        if self.is_empty() {
            return Err(TmError::EmptyMemory);
        }
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&tsv_field(&p.source));
            out.push('\t');
            out.push_str(&tsv_field(&p.target));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        if self.is_empty() {
            return Err(TmError::EmptyMemory);
        }
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p).expect("segment pair serializes"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn export(&self, path: &Path, format: Format) -> Result<()> {
        let body = match format {
            Format::Tsv => self.to_tsv()?,
            Format::Jsonl => self.to_jsonl()?,
        };
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads a JSONL store written by [`TranslationMemory::export`] or
    /// [`append_pair`], keeping ids and timestamps.
    pub fn load_store(path: &Path, project_id: impl Into<String>, lang: LanguagePair) -> Result<Self> {
        let mut tm = Self::new(project_id, lang);
        let reader = BufReader::new(File::open(path)?);
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: SegmentPair = serde_json::from_str(&line).map_err(|e| TmError::Record {
                line: idx + 1,
                message: format!("invalid store record: {e}"),
            })?;
            tm.restore(pair);
        }
        Ok(tm)
    }
}

// TSV has no quoting; tabs and newlines inside a field would break the row.
fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Loads a TSV or JSONL file into a fresh translation memory.
pub fn ingest(path: &Path, format: Format, lang: LanguagePair) -> Result<(TranslationMemory, IngestReport)> {
    let text = std::fs::read_to_string(path)?;
    let project_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "default".to_string());
    ingest_str(&text, format, project_id, lang)
}

pub fn ingest_str(
    text: &str,
    format: Format,
    project_id: impl Into<String>,
    lang: LanguagePair,
) -> Result<(TranslationMemory, IngestReport)> {
    let records = parse_records(text, format).map_err(|mut errs| errs.swap_remove(0))?;
    let mut tm = TranslationMemory::new(project_id, lang);
    let report = tm.extend_records(records)?;
    Ok((tm, report))
}

/// Appends one pair to a JSONL store, creating the file if needed.
pub fn append_pair(path: &Path, pair: &SegmentPair) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(pair).expect("segment pair serializes");
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}
