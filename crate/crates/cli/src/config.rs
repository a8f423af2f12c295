//! TOML configuration.
//!
//! ```toml
//! [languages]
//! source = "en"
//! target = "fr"
//! # length_multiplier = 4
//! # display_names = { rw = "Kinyarwanda" }
//!
//! [provider]
//! kind = "http_openai_compatible"   # or "fixture", "echo_top_match"
//! endpoint = "https://api.example.com/v1/completions"
//! api_key_env = "OPENAI_API_KEY"
//! # kind = "fixture"
//! # path = "fixtures.jsonl"
//! # fallback = "..."
//!
//! [mt]                 # optional
//! url = "http://localhost:8000"
//! # fixture = "mt.jsonl"
//!
//! [strategy]           # optional; defaults to few_shot_fuzzy with top_k = 5
//! kind = "few_shot_fuzzy"
//! top_k = 5
//!
//! [retry]              # optional
//! [budget]             # optional
//! [glossary]           # optional: min_freq, max_ngram, max_terms_per_segment, separator
//! [server]             # optional: addr, data_dir, bearer_token_env
//! ```
//!
//! Secrets never live in the file; only the names of environment variables do.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adaptmt::gateway::{FixtureTable, Gateway, ProviderKind, RetryPolicy};
use adaptmt::mt_bridge::MtProvider;
use adaptmt::pipeline::StrategySpec;
use adaptmt::prompting::{BudgetConfig, DisplayNames};
use adaptmt::terminology::GlossaryConfig;
use adaptmt::tm::LanguagePair;
use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub languages: Languages,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub mt: Option<MtConfig>,
    #[serde(default)]
    pub strategy: Option<StrategySpec>,
    #[serde(default)]
    pub retry: Option<RetryPolicy>,
    #[serde(default)]
    pub budget: Option<BudgetConfig>,
    #[serde(default)]
    pub glossary: GlossarySection,
    #[serde(default)]
    pub server: ServerSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Languages {
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub length_multiplier: Option<u32>,
    #[serde(default)]
    pub display_names: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    HttpOpenaiCompatible {
        endpoint: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
    Fixture {
        path: PathBuf,
        #[serde(default)]
        fallback: Option<String>,
    },
    EchoTopMatch,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtConfig {
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlossarySection {
    pub min_freq: Option<u32>,
    pub max_ngram: Option<usize>,
    pub max_terms_per_segment: Option<usize>,
    pub separator: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub addr: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub bearer_token_env: Option<String>,
}

/// A parsed and validated configuration file.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub path: PathBuf,
    pub sha256: String,
    pub config: Config,
    pub lang: LanguagePair,
    pub provider: ProviderKind,
    /// Checksum of the fixture file, for fixture providers.
    pub fixture_sha256: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Loaded {
    /// Reads and validates the file without touching the network.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let text = std::str::from_utf8(&raw).context("config is not UTF-8")?;
        let config: Config = toml::from_str(text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let l = &config.languages;
        let lang = match l.length_multiplier {
            Some(m) => LanguagePair::with_multiplier(&l.source, &l.target, m),
            None => LanguagePair::new(&l.source, &l.target),
        }?;
        let (provider, fixture_sha256) = match &config.provider {
            ProviderConfig::HttpOpenaiCompatible { endpoint, api_key_env } => {
                if !endpoint.starts_with("http://") && !endpoint.starts_with("https://") {
                    bail!("provider endpoint `{endpoint}` is not an http(s) URL");
                }
                (ProviderKind::http(endpoint.clone(), api_key_env.clone()), None)
            }
            ProviderConfig::Fixture { path, fallback } => {
                let full = base.join(path);
                let bytes = std::fs::read(&full).with_context(|| format!("cannot read fixture {}", full.display()))?;
                let mut table = FixtureTable::from_jsonl(std::str::from_utf8(&bytes)?)?;
                if let Some(f) = fallback {
                    table = table.with_fallback(f.clone());
                }
                (ProviderKind::fixture(table), Some(sha256_hex(&bytes)))
            }
            ProviderConfig::EchoTopMatch => (ProviderKind::EchoTopMatch, None),
        };
        if let Some(mt) = &config.mt {
            if mt.url.is_some() == mt.fixture.is_some() {
                bail!("[mt] needs exactly one of `url` or `fixture`");
            }
        }
        let loaded = Self { path: path.to_path_buf(), sha256: sha256_hex(&raw), config, lang, provider, fixture_sha256 };
        loaded.strategy().validate()?;
        loaded.glossary_config().validate()?;
        loaded.gateway().preflight()?;
        Ok(loaded)
    }

    fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn gateway(&self) -> Gateway {
        Gateway::with_retry(self.provider.clone(), self.config.retry.clone().unwrap_or_default())
    }

    pub fn strategy(&self) -> StrategySpec {
        self.config.strategy.clone().unwrap_or_else(|| StrategySpec::few_shot_fuzzy(5))
    }

    pub fn names(&self) -> DisplayNames {
        let mut names = DisplayNames::default();
        names.extend(&self.config.languages.display_names);
        names
    }

    pub fn budget(&self) -> BudgetConfig {
        self.config.budget.clone().unwrap_or_default()
    }

    pub fn glossary_config(&self) -> GlossaryConfig {
        let mut cfg = GlossaryConfig::default();
        let g = &self.config.glossary;
        if let Some(v) = g.min_freq {
            cfg.min_freq = v;
        }
        if let Some(v) = g.max_ngram {
            cfg.max_ngram = v;
        }
        if let Some(v) = g.max_terms_per_segment {
            cfg.max_terms_per_segment = v;
        }
        if let Some(v) = &g.separator {
            cfg.separator = v.clone();
        }
        cfg
    }

    pub fn mt(&self) -> Result<Option<MtProvider>> {
        let Some(mt) = &self.config.mt else {
            return Ok(None);
        };
        Ok(Some(match (&mt.url, &mt.fixture) {
            (Some(url), _) => MtProvider::url("mt", url.clone(), self.lang.clone()),
            (None, Some(path)) => MtProvider::fixture_file("mt", &self.base_dir().join(path), self.lang.clone())?,
            (None, None) => unreachable!("checked on load"),
        }))
    }

    pub fn model(&self) -> String {
        self.strategy().generation.model
    }
}
