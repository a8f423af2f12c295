//! Bridge to external encoder-decoder MT systems.
//!
//! Wire protocol: `POST {base}/translate` with
//! `{"texts": [...], "source": "en", "target": "fr"}` answered by
//! `{"translations": [...]}`; `GET {base}/health` for reachability.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tm::{normalize, LanguagePair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MtError {
    #[error("no texts to translate")]
    EmptyInput,
    #[error("no fixture translation for `{0}`")]
    FixtureMiss(String),
    #[error("MT provider `{provider}` failed: {message}")]
    Provider { provider: String, message: String },
    #[error("fixture load failed: {0}")]
    FixtureLoad(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MtEndpoint {
    Url(String),
    /// Normalized source text to translation.
    Fixture(HashMap<String, String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtProvider {
    pub name: String,
    pub endpoint: MtEndpoint,
    pub lang: LanguagePair,
    pub batch_size: usize,
    pub max_parallel: usize,
}

#[derive(Deserialize)]
struct FixtureLine {
    source: String,
    target: String,
}

/// Parses JSONL lines of `{"source": "...", "target": "..."}`.
pub fn fixture_table_from_jsonl(text: &str) -> Result<HashMap<String, String>, MtError> {
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureLine =
            serde_json::from_str(line).map_err(|e| MtError::FixtureLoad(format!("line {}: {e}", i + 1)))?;
        table.insert(normalize(&rec.source), rec.target);
    }
    Ok(table)
}

#[derive(Serialize)]
struct WireRequest<'a> {
    texts: &'a [String],
    source: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    translations: Vec<String>,
}

impl MtProvider {
    pub fn url(name: impl Into<String>, base: impl Into<String>, lang: LanguagePair) -> Self {
        Self {
            name: name.into(),
            endpoint: MtEndpoint::Url(base.into().trim_end_matches('/').to_string()),
            lang,
            batch_size: 20,
            max_parallel: 4,
        }
    }

    pub fn fixture(name: impl Into<String>, table: HashMap<String, String>, lang: LanguagePair) -> Self {
        let table = table.into_iter().map(|(k, v)| (normalize(&k), v)).collect();
        Self { name: name.into(), endpoint: MtEndpoint::Fixture(table), lang, batch_size: 20, max_parallel: 4 }
    }

    pub fn fixture_file(name: impl Into<String>, path: &Path, lang: LanguagePair) -> Result<Self, MtError> {
        let text = std::fs::read_to_string(path).map_err(|e| MtError::FixtureLoad(e.to_string()))?;
        Ok(Self::fixture(name, fixture_table_from_jsonl(&text)?, lang))
    }

    fn provider_error(&self, message: impl Into<String>) -> MtError {
        MtError::Provider { provider: self.name.clone(), message: message.into() }
    }

    pub async fn health_check(&self) -> Result<(), MtError> {
        let MtEndpoint::Url(base) = &self.endpoint else {
            return Ok(());
        };
        let resp = http_client()
            .get(format!("{base}/health"))
            .send()
            .await
            .map_err(|e| self.provider_error(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(self.provider_error(format!("health check returned {}", resp.status())))
        }
    }

    /// Translates every text. Output `i` belongs to input `i`; a failed
    /// request fails each item it carried.
    pub async fn mt_translate(&self, texts: &[String]) -> Result<Vec<Result<String, MtError>>, MtError> {
        if texts.is_empty() {
            return Err(MtError::EmptyInput);
        }
        match &self.endpoint {
            MtEndpoint::Fixture(table) => Ok(texts
                .iter()
                .map(|t| table.get(&normalize(t)).cloned().ok_or_else(|| MtError::FixtureMiss(t.clone())))
                .collect()),
            MtEndpoint::Url(base) => {
                let client = http_client();
                let url = format!("{base}/translate");
                let chunks: Vec<Vec<String>> = texts.chunks(self.batch_size.max(1)).map(<[String]>::to_vec).collect();
                let results: Vec<Vec<Result<String, MtError>>> = stream::iter(chunks)
                    .map(|chunk: Vec<String>| {
                        let client = client.clone();
                        let url = url.clone();
                        async move {
                            match self.post_chunk(&client, &url, &chunk).await {
                                Ok(v) => v.into_iter().map(Ok).collect(),
                                Err(e) => vec![Err(e); chunk.len()],
                            }
                        }
                    })
                    .buffered(self.max_parallel.max(1))
                    .collect()
                    .await;
                Ok(results.into_iter().flatten().collect())
            }
        }
    }

    async fn post_chunk(&self, client: &reqwest::Client, url: &str, chunk: &[String]) -> Result<Vec<String>, MtError> {
        let body = WireRequest { texts: chunk, source: &self.lang.source_lang, target: &self.lang.target_lang };
        let resp = client
            .post(url)
            .json(&body)
            .send()
            .await
            .map_err(|e| self.provider_error(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(self.provider_error(format!("status {}", resp.status())));
        }
        let parsed: WireResponse = resp.json().await.map_err(|e| self.provider_error(e.to_string()))?;
        if parsed.translations.len() != chunk.len() {
            return Err(self.provider_error(format!(
                "sent {} texts, got {} translations",
                chunk.len(),
                parsed.translations.len()
            )));
        }
        Ok(parsed.translations)
    }
}

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .expect("http client builds")
}
