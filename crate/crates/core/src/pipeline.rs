//! Translation strategies: retrieval, terms and MT feed a prompt that is fitted
//! to the context window, completed by the gateway and cleaned up.
//!
//! Missing inputs degrade the strategy instead of failing it. Every
//! degradation is recorded as a warning on the result.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    dynamic_max_new_tokens, postprocess, Completion, CompletionRequest, Decoding, Gateway, GatewayError,
    GenerationConfig, PostprocessMode, MAX_NEW_TOKENS_CAP,
};
use crate::mt_bridge::MtProvider;
use crate::prompting::{self, output_budget, BudgetConfig, DisplayNames, PromptKind, PromptRequest};
use crate::retrieval::{FuzzyMatch, Index, RetrievalConfig};
use crate::terminology::{self, match_terms, Glossary, TermPair};
use crate::tm::{LanguagePair, PairId, SegmentPair, TranslationMemory};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Strategy,
    Retrieve,
    Terms,
    Mt,
    Fit,
    Render,
    Gateway,
    Postprocess,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Strategy => "strategy",
            Stage::Retrieve => "retrieve",
            Stage::Terms => "terms",
            Stage::Mt => "mt",
            Stage::Fit => "fit",
            Stage::Render => "render",
            Stage::Gateway => "gateway",
            Stage::Postprocess => "postprocess",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self { stage, message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSource {
    #[default]
    None,
    FuzzyTerms,
    Glossary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtMode {
    #[default]
    None,
    NewOnly,
    All,
}

fn default_term_source(kind: PromptKind) -> TermSource {
    match kind {
        PromptKind::FewShotFuzzyTerms => TermSource::FuzzyTerms,
        PromptKind::ZeroShotGlossaryTerms | PromptKind::FewShotGlossaryTerms => TermSource::Glossary,
        _ => TermSource::None,
    }
}

fn default_mt_mode(kind: PromptKind) -> MtMode {
    match kind {
        PromptKind::FewShotFuzzyNewMt => MtMode::NewOnly,
        PromptKind::FewShotFuzzyAllMt => MtMode::All,
        _ => MtMode::None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StrategyFile")]
pub struct StrategySpec {
    pub kind: PromptKind,
    pub top_k: usize,
    pub term_source: TermSource,
    pub max_terms: usize,
    pub mt_mode: MtMode,
    pub generation: GenerationConfig,
    pub postprocess: PostprocessMode,
    /// Seed for random-context selection.
    pub seed: u64,
}

/// Deserialization form: unset `term_source` and `mt_mode` follow the kind.
#[derive(Deserialize)]
struct StrategyFile {
    kind: PromptKind,
    #[serde(default = "default_top_k")]
    top_k: usize,
    #[serde(default)]
    term_source: Option<TermSource>,
    #[serde(default = "default_max_terms")]
    max_terms: usize,
    #[serde(default)]
    mt_mode: Option<MtMode>,
    #[serde(default)]
    generation: Option<GenerationConfig>,
    #[serde(default)]
    postprocess: PostprocessMode,
    #[serde(default)]
    seed: u64,
}

fn default_top_k() -> usize {
    5
}

fn default_max_terms() -> usize {
    5
}

impl From<StrategyFile> for StrategySpec {
    fn from(f: StrategyFile) -> Self {
        Self {
            kind: f.kind,
            top_k: f.top_k,
            term_source: f.term_source.unwrap_or(default_term_source(f.kind)),
            max_terms: f.max_terms,
            mt_mode: f.mt_mode.unwrap_or(default_mt_mode(f.kind)),
            generation: f.generation.unwrap_or_default(),
            postprocess: f.postprocess,
            seed: f.seed,
        }
    }
}

impl StrategySpec {
    /// A consistent strategy for `kind` with default generation settings.
    pub fn for_kind(kind: PromptKind, top_k: usize) -> Self {
        Self {
            kind,
            top_k: if kind.is_few_shot() { top_k } else { 0 },
            term_source: default_term_source(kind),
            max_terms: default_max_terms(),
            mt_mode: default_mt_mode(kind),
            generation: GenerationConfig::translation(),
            postprocess: PostprocessMode::default(),
            seed: 0,
        }
    }

    pub fn zero_shot() -> Self {
        Self::for_kind(PromptKind::ZeroShot, 0)
    }

    pub fn few_shot_fuzzy(top_k: usize) -> Self {
        Self::for_kind(PromptKind::FewShotFuzzy, top_k)
    }

    pub fn with_generation(mut self, generation: GenerationConfig) -> Self {
        self.generation = generation;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new(Stage::Strategy, m));
        if self.kind == PromptKind::TermExtraction {
            return bad("term_extraction is not a translation strategy".into());
        }
        if self.kind.is_few_shot() && self.top_k == 0 {
            return bad(format!("{} needs top_k >= 1", self.kind));
        }
        if self.term_source != default_term_source(self.kind) {
            return bad(format!("term_source {:?} does not fit {}", self.term_source, self.kind));
        }
        if self.mt_mode != default_mt_mode(self.kind) {
            return bad(format!("mt_mode {:?} does not fit {}", self.mt_mode, self.kind));
        }
        if self.kind.uses_terms() && self.max_terms == 0 {
            return bad("max_terms must be >= 1".into());
        }
        self.generation.validate().map_err(|e| PipelineError::new(Stage::Strategy, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRef {
    pub id: PairId,
    pub score: f64,
}

/// Wall-clock milliseconds per stage. In batched runs `generate_ms` is the
/// batch time divided by its size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub retrieve_ms: f64,
    pub mt_ms: f64,
    pub prompt_ms: f64,
    pub generate_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<PairId>,
    pub source: String,
    pub output: String,
    pub kind_requested: PromptKind,
    pub kind_used: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_used: Option<String>,
    /// The parts `prompt_used` was rendered from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<PromptRequest>,
    pub matches_used: Vec<MatchRef>,
    pub terms_used: Vec<TermPair>,
    #[serde(default)]
    pub mt_used: Option<String>,
    pub provider: String,
    pub model: String,
    pub timing: Timing,
    pub warnings: Vec<Warning>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<PipelineError>,
}

impl TranslationResult {
    fn failed(segment_id: Option<PairId>, source: &str, strategy: &StrategySpec, provider: &str, error: PipelineError) -> Self {
        Self {
            schema_version: RESULT_SCHEMA_VERSION,
            segment_id,
            source: source.to_string(),
            output: String::new(),
            kind_requested: strategy.kind,
            kind_used: strategy.kind,
            prompt_used: None,
            request: None,
            matches_used: Vec::new(),
            terms_used: Vec::new(),
            mt_used: None,
            provider: provider.to_string(),
            model: strategy.generation.model.clone(),
            timing: Timing::default(),
            warnings: Vec::new(),
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Drops the prompt and its parts.
    pub fn redacted(mut self) -> Self {
        self.prompt_used = None;
        self.request = None;
        self
    }

    /// Re-renders the recorded request and compares it with `prompt_used`.
    pub fn prompt_reproduces(&self) -> bool {
        match (&self.request, &self.prompt_used) {
            (Some(req), Some(prompt)) => prompting::render(req).is_ok_and(|p| &p == prompt),
            _ => false,
        }
    }
}

/// Terms extracted per TM pair.
pub type TermStore = HashMap<PairId, Vec<TermPair>>;

/// `k` distinct indices from `0..n`, drawn by a partial Fisher-Yates shuffle
/// driven by ChaCha8 seeded with `seed`.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} of {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Everything a translation needs besides the strategy. Cheap to clone.
#[derive(Clone)]
pub struct Engine {
    pub lang: LanguagePair,
    pub index: Option<Arc<Index>>,
    pub glossary: Option<Arc<Glossary>>,
    pub term_store: Arc<TermStore>,
    pub gateway: Gateway,
    pub mt: Option<Arc<MtProvider>>,
    pub names: DisplayNames,
    pub budget: BudgetConfig,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("lang", &self.lang)
            .field("index", &self.index)
            .field("glossary", &self.glossary.as_ref().map(|g| g.len()))
            .field("provider", &self.gateway.provider().label())
            .finish()
    }
}

struct Plan {
    segment_id: Option<PairId>,
    source: String,
    kind_requested: PromptKind,
    kind: PromptKind,
    matches: Vec<FuzzyMatch>,
    terms: Vec<TermPair>,
    match_terms: Option<Vec<Vec<TermPair>>>,
    warnings: Vec<Warning>,
    timing: Timing,
    started: Instant,
}

impl Plan {
    fn warn(&mut self, stage: Stage, message: impl Into<String>) {
        let message = message.into();
        log::warn!("[{stage}] {message}");
        self.warnings.push(Warning { stage, message });
    }

    fn mt_texts(&self) -> Vec<String> {
        let mut texts = Vec::new();
        if self.kind.uses_new_mt() {
            texts.push(self.source.clone());
        }
        if self.kind.uses_match_mt() {
            texts.extend(self.matches.iter().map(|m| m.pair.source.clone()));
        }
        texts
    }
}

struct Prepared {
    plan: Plan,
    request: PromptRequest,
    prompt: String,
    max_tokens: u32,
}

type MtLookup = HashMap<String, Result<String, String>>;

/// Kind to use once every example is gone.
fn without_examples(kind: PromptKind, has_terms: bool) -> PromptKind {
    if kind.uses_terms() && has_terms {
        PromptKind::ZeroShotGlossaryTerms
    } else {
        PromptKind::ZeroShot
    }
}

/// Kind to use when no terms are available.
fn without_terms(kind: PromptKind) -> PromptKind {
    match kind {
        PromptKind::FewShotFuzzyTerms | PromptKind::FewShotGlossaryTerms => PromptKind::FewShotFuzzy,
        PromptKind::ZeroShotGlossaryTerms => PromptKind::ZeroShot,
        k => k,
    }
}

/// Switches `req` to `kind` and clears the fields the new kind has no line for.
fn degrade(req: &mut PromptRequest, kind: PromptKind) {
    req.kind = kind;
    if !kind.is_few_shot() {
        req.matches.clear();
    }
    if !kind.uses_terms() {
        req.terms.clear();
    }
    if !kind.uses_example_terms() {
        req.match_terms = None;
    }
    if !kind.uses_new_mt() {
        req.mt_new = None;
    }
    if !kind.uses_match_mt() {
        req.mt_matches = None;
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

impl Engine {
    pub fn new(lang: LanguagePair, gateway: Gateway) -> Self {
        Self {
            lang,
            index: None,
            glossary: None,
            term_store: Arc::default(),
            gateway,
            mt: None,
            names: DisplayNames::default(),
            budget: BudgetConfig::default(),
        }
    }

    /// Indexes `tm` with the default embedder. An empty memory leaves the engine without an index.
    pub fn with_tm(mut self, tm: &TranslationMemory) -> Result<Self, PipelineError> {
        self.index = if tm.is_empty() {
            None
        } else {
            Some(Arc::new(Index::build(tm).map_err(|e| PipelineError::new(Stage::Retrieve, e))?))
        };
        Ok(self)
    }

    pub fn with_index(mut self, index: Arc<Index>) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_glossary(mut self, glossary: Arc<Glossary>) -> Self {
        self.glossary = Some(glossary);
        self
    }

    pub fn with_term_store(mut self, store: Arc<TermStore>) -> Self {
        self.term_store = store;
        self
    }

    pub fn with_mt(mut self, mt: Arc<MtProvider>) -> Self {
        self.mt = Some(mt);
        self
    }

    pub fn with_display_names(mut self, names: DisplayNames) -> Self {
        self.names = names;
        self
    }

    pub fn with_budget(mut self, budget: BudgetConfig) -> Self {
        self.budget = budget;
        self
    }

    pub fn provider_label(&self) -> &'static str {
        self.gateway.provider().label()
    }

    /// Retrieves examples and terms. MT is fetched separately so batches can share one call.
    fn plan(
        &self,
        source: &str,
        strategy: &StrategySpec,
        self_id: Option<PairId>,
        seed: u64,
    ) -> Result<Plan, PipelineError> {
        let started = Instant::now();
        if source.trim().is_empty() {
            return Err(PipelineError::new(Stage::Retrieve, "source is empty"));
        }
        let mut plan = Plan {
            segment_id: self_id,
            source: source.to_string(),
            kind_requested: strategy.kind,
            kind: strategy.kind,
            matches: Vec::new(),
            terms: Vec::new(),
            match_terms: None,
            warnings: Vec::new(),
            timing: Timing::default(),
            started,
        };

        if strategy.kind == PromptKind::FewShotRandom {
            plan.matches = self.random_context(source, strategy.top_k, seed, self_id)?;
        } else if strategy.kind.is_few_shot() {
            match &self.index {
                Some(index) => {
                    let cfg = RetrievalConfig {
                        top_k: strategy.top_k,
                        exclude_exact_self: self_id.is_some(),
                        min_similarity: None,
                    };
                    plan.matches =
                        index.retrieve(source, &cfg, self_id).map_err(|e| PipelineError::new(Stage::Retrieve, e))?;
                }
                None => plan.warn(Stage::Retrieve, "translation memory is empty"),
            }
        }
        if plan.kind.is_few_shot() && plan.matches.is_empty() {
            let to = without_examples(plan.kind, plan.kind == PromptKind::FewShotGlossaryTerms);
            plan.warn(Stage::Retrieve, format!("no examples available; using {to}"));
            plan.kind = to;
        }
        plan.timing.retrieve_ms = ms(started);

        if plan.kind.uses_terms() {
            self.plan_terms(&mut plan, strategy);
        }
        Ok(plan)
    }

    fn random_context(
        &self,
        source: &str,
        k: usize,
        seed: u64,
        self_id: Option<PairId>,
    ) -> Result<Vec<FuzzyMatch>, PipelineError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let Some(index) = &self.index else {
            return Err(PipelineError::new(Stage::Retrieve, format!("cannot draw {k} examples from an empty memory")));
        };
        let rows: Vec<usize> = (0..index.len()).filter(|&r| Some(index.pairs()[r].id) != self_id).collect();
        if k > rows.len() {
            return Err(PipelineError::new(
                Stage::Retrieve,
                format!("cannot draw {k} examples from {} pairs", rows.len()),
            ));
        }
        let query = index.embed(source).map_err(|e| PipelineError::new(Stage::Retrieve, e))?;
        let scores = index.scores(&query).map_err(|e| PipelineError::new(Stage::Retrieve, e))?;
        Ok(sample_indices(rows.len(), k, seed)
            .into_iter()
            .map(|i| FuzzyMatch { pair: index.pairs()[rows[i]].clone(), score: scores[rows[i]] })
            .collect())
    }

    fn plan_terms(&self, plan: &mut Plan, strategy: &StrategySpec) {
        let started = Instant::now();
        let glossary = self.glossary.as_deref().filter(|g| !g.is_empty());
        if plan.kind.uses_example_terms() {
            let per_example: Vec<Vec<TermPair>> = plan
                .matches
                .iter()
                .map(|m| match self.term_store.get(&m.pair.id) {
                    Some(t) => t.clone(),
                    None => match (strategy.term_source, glossary) {
                        (TermSource::Glossary, Some(g)) => match_terms(&m.pair.source, g, strategy.max_terms, true),
                        _ => Vec::new(),
                    },
                })
                .collect();
            plan.match_terms = Some(per_example);
        }
        plan.terms = match strategy.term_source {
            TermSource::Glossary => match glossary {
                Some(g) => match_terms(&plan.source, g, strategy.max_terms, true),
                None => {
                    plan.warn(Stage::Terms, "no glossary compiled");
                    Vec::new()
                }
            },
            TermSource::FuzzyTerms => {
                // best match first, so its pair wins a shared source
                let pool: Vec<TermPair> = plan.match_terms.iter().flatten().flatten().cloned().collect();
                match_terms(&plan.source, &Glossary::from_entries(pool), strategy.max_terms, true)
            }
            TermSource::None => Vec::new(),
        };
        if plan.terms.is_empty() {
            let to = without_terms(plan.kind);
            plan.warn(Stage::Terms, format!("no terms match the source; using {to}"));
            plan.kind = to;
            plan.match_terms = None;
        }
        plan.timing.prompt_ms += ms(started);
    }

    async fn fetch_mt(&self, texts: Vec<String>) -> Result<MtLookup, String> {
        let Some(mt) = &self.mt else {
            return Err("no MT provider configured".into());
        };
        let mut unique: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for t in texts {
            if seen.insert(t.clone()) {
                unique.push(t);
            }
        }
        if unique.is_empty() {
            return Ok(MtLookup::new());
        }
        let out = mt.mt_translate(&unique).await.map_err(|e| e.to_string())?;
        Ok(unique.into_iter().zip(out).map(|(t, r)| (t, r.map_err(|e| e.to_string()))).collect())
    }

    fn assemble(&self, mut plan: Plan, mt: &Result<MtLookup, String>, strategy: &StrategySpec) -> Result<Prepared, PipelineError> {
        let started = Instant::now();
        let mut req = PromptRequest::new(plan.kind, self.lang.clone(), plan.source.clone())
            .with_display_names(self.names.clone());
        req.matches = plan.matches.clone();
        req.terms = plan.terms.clone();
        req.match_terms = plan.match_terms.clone();

        if plan.kind.uses_new_mt() {
            let lookup = |t: &str| -> Result<String, String> {
                match mt {
                    Ok(map) => map.get(t).cloned().unwrap_or_else(|| Err("missing".into())),
                    Err(e) => Err(e.clone()),
                }
            };
            match lookup(&plan.source) {
                Ok(text) => {
                    req.mt_new = Some(text);
                    if plan.kind.uses_match_mt() {
                        let all: Result<Vec<String>, String> =
                            plan.matches.iter().map(|m| lookup(&m.pair.source)).collect();
                        match all {
                            Ok(v) => req.mt_matches = Some(v),
                            Err(e) => {
                                plan.warn(Stage::Mt, format!("MT for examples failed ({e}); using few_shot_fuzzy_new_mt"));
                                degrade(&mut req, PromptKind::FewShotFuzzyNewMt);
                            }
                        }
                    }
                }
                Err(e) => {
                    plan.warn(Stage::Mt, format!("MT unavailable ({e}); dropping MT lines"));
                    degrade(&mut req, PromptKind::FewShotFuzzy);
                }
            }
        }

        let fitted = prompting::fit(&req, &self.budget).map_err(|e| PipelineError::new(Stage::Fit, e))?;
        if fitted.changed() {
            if !fitted.dropped_matches.is_empty() {
                let ids: Vec<String> = fitted.dropped_matches.iter().map(|m| m.pair.id.to_string()).collect();
                plan.warn(
                    Stage::Fit,
                    format!(
                        "dropped {} of {} matches to fit {} tokens (ids {})",
                        fitted.dropped_matches.len(),
                        req.matches.len(),
                        self.budget.context_limit,
                        ids.join(",")
                    ),
                );
            }
            if !fitted.dropped_terms.is_empty() {
                plan.warn(Stage::Fit, format!("dropped {} terms to fit the context window", fitted.dropped_terms.len()));
            }
        }
        let mut req = fitted.request;
        if req.kind.is_few_shot() && req.matches.is_empty() {
            let to = without_examples(req.kind, !req.terms.is_empty());
            plan.warn(Stage::Fit, format!("no examples fit; using {to}"));
            degrade(&mut req, to);
        }
        if req.kind.uses_terms() && req.terms.is_empty() {
            let to = without_terms(req.kind);
            degrade(&mut req, to);
        }
        plan.kind = req.kind;

        let prompt = prompting::render(&req).map_err(|e| PipelineError::new(Stage::Render, e))?;
        let max_tokens = match (strategy.generation.max_tokens, strategy.generation.decoding) {
            (Some(n), _) => n,
            (None, Decoding::Greedy) => dynamic_max_new_tokens(&plan.source, MAX_NEW_TOKENS_CAP) as u32,
            (None, Decoding::Sampling) => output_budget(&plan.source, &self.lang) as u32,
        }
        .max(1);
        plan.timing.prompt_ms += ms(started);
        Ok(Prepared { plan, request: req, prompt, max_tokens })
    }

    fn finish(&self, prepared: Prepared, completion: Result<Completion, GatewayError>, strategy: &StrategySpec, generate_ms: f64) -> Result<TranslationResult, PipelineError> {
        let Prepared { mut plan, request, prompt, .. } = prepared;
        let completion = completion.map_err(|e| PipelineError::new(Stage::Gateway, e))?;
        let output = postprocess(&completion, strategy.postprocess);
        if output.is_empty() {
            plan.warn(Stage::Postprocess, "empty output");
        }
        plan.timing.generate_ms = generate_ms;
        plan.timing.total_ms = ms(plan.started);
        Ok(TranslationResult {
            schema_version: RESULT_SCHEMA_VERSION,
            segment_id: plan.segment_id,
            source: plan.source,
            output,
            kind_requested: plan.kind_requested,
            kind_used: request.kind,
            prompt_used: Some(prompt),
            matches_used: request.matches.iter().map(|m| MatchRef { id: m.pair.id, score: m.score }).collect(),
            terms_used: request.terms.clone(),
            mt_used: request.mt_new.clone(),
            request: Some(request),
            provider: self.provider_label().to_string(),
            model: strategy.generation.model.clone(),
            timing: plan.timing,
            warnings: plan.warnings,
            error: None,
        })
    }

    async fn translate_planned(&self, plan: Plan, strategy: &StrategySpec) -> Result<TranslationResult, PipelineError> {
        let mut plan = plan;
        let mt_started = Instant::now();
        let mt = if plan.kind.uses_new_mt() { self.fetch_mt(plan.mt_texts()).await } else { Ok(MtLookup::new()) };
        plan.timing.mt_ms = ms(mt_started);
        let prepared = self.assemble(plan, &mt, strategy)?;
        let gen_started = Instant::now();
        let request = CompletionRequest { prompt: prepared.prompt.clone(), max_tokens: Some(prepared.max_tokens) };
        let completion = self
            .gateway
            .complete_requests(vec![request], &strategy.generation)
            .await
            .map_err(|e| PipelineError::new(Stage::Gateway, e))?
            .pop()
            .expect("one slot per request");
        let generate_ms = ms(gen_started);
        self.finish(prepared, completion, strategy, generate_ms)
    }

    /// Translates one segment with `strategy`.
    pub async fn translate_segment(&self, source: &str, strategy: &StrategySpec) -> Result<TranslationResult, PipelineError> {
        strategy.validate()?;
        let plan = self.plan(source, strategy, None, strategy.seed)?;
        self.translate_planned(plan, strategy).await
    }

    /// Few-shot translation with `k` examples drawn uniformly without
    /// replacement. `k = 0` is a zero-shot translation.
    pub async fn translate_random_context(
        &self,
        source: &str,
        k: usize,
        seed: u64,
        generation: GenerationConfig,
    ) -> Result<TranslationResult, PipelineError> {
        let strategy = if k == 0 {
            StrategySpec::zero_shot().with_generation(generation)
        } else {
            StrategySpec { seed, ..StrategySpec::for_kind(PromptKind::FewShotRandom, k).with_generation(generation) }
        };
        self.translate_segment(source, &strategy).await
    }

    /// Translates every segment, one result per segment in input order.
    /// Segment failures are recorded on their result and the run continues.
    ///
    /// With `self_exclusion`, a segment's own pair never serves as its example.
    pub async fn run_experiment(
        &self,
        segments: &[SegmentPair],
        strategy: &StrategySpec,
        self_exclusion: bool,
    ) -> Result<ExperimentRun, PipelineError> {
        strategy.validate()?;
        let started = Instant::now();
        let provider = self.provider_label();
        let mut slots: Vec<Result<Plan, TranslationResult>> = segments
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let self_id = self_exclusion.then_some(seg.id);
                let seed = strategy.seed.wrapping_add(i as u64);
                self.plan(&seg.source, strategy, self_id, seed).map_err(|e| {
                    TranslationResult::failed(Some(seg.id), &seg.source, strategy, provider, e)
                })
            })
            .collect();
        for (slot, seg) in slots.iter_mut().zip(segments) {
            if let Ok(plan) = slot {
                plan.segment_id = Some(seg.id);
            }
        }

        let mt_texts: Vec<String> = slots.iter().flatten().filter(|p| p.kind.uses_new_mt()).flat_map(Plan::mt_texts).collect();
        let mt_started = Instant::now();
        let mt = if mt_texts.is_empty() { Ok(MtLookup::new()) } else { self.fetch_mt(mt_texts).await };
        let mt_ms = ms(mt_started);

        let mut results: Vec<Option<TranslationResult>> = Vec::with_capacity(segments.len());
        let mut prepared: Vec<(usize, Prepared)> = Vec::new();
        for (i, slot) in slots.into_iter().enumerate() {
            match slot {
                Ok(mut plan) => {
                    if plan.kind.uses_new_mt() {
                        plan.timing.mt_ms = mt_ms;
                    }
                    let source = plan.source.clone();
                    match self.assemble(plan, &mt, strategy) {
                        Ok(p) => {
                            prepared.push((i, p));
                            results.push(None);
                        }
                        Err(e) => {
                            results.push(Some(TranslationResult::failed(Some(segments[i].id), &source, strategy, provider, e)))
                        }
                    }
                }
                Err(failed) => results.push(Some(failed)),
            }
        }

        if !prepared.is_empty() {
            let requests: Vec<CompletionRequest> = prepared
                .iter()
                .map(|(_, p)| CompletionRequest { prompt: p.prompt.clone(), max_tokens: Some(p.max_tokens) })
                .collect();
            let gen_started = Instant::now();
            let completions = self
                .gateway
                .complete_requests(requests, &strategy.generation)
                .await
                .map_err(|e| PipelineError::new(Stage::Gateway, e))?;
            let per_item = ms(gen_started) / prepared.len() as f64;
            for ((i, p), completion) in prepared.into_iter().zip(completions) {
                let source = p.plan.source.clone();
                results[i] = Some(match self.finish(p, completion, strategy, per_item) {
                    Ok(r) => r,
                    Err(e) => TranslationResult::failed(Some(segments[i].id), &source, strategy, provider, e),
                });
            }
        }

        let results: Vec<TranslationResult> = results.into_iter().map(|r| r.expect("every slot filled")).collect();
        let failures = results.iter().filter(|r| !r.is_ok()).count();
        let elapsed_ms = ms(started);
        log::info!(
            "translated {} segments with {} ({} failed) in {:.0} ms",
            results.len(),
            strategy.kind,
            failures,
            elapsed_ms
        );
        Ok(ExperimentRun { results, failures, elapsed_ms })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub results: Vec<TranslationResult>,
    pub failures: usize,
    pub elapsed_ms: f64,
}

/// Term extraction over a set of pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionRun {
    pub store: TermStore,
    /// Every parsed (src, tgt) observation, for glossary aggregation.
    pub observations: Vec<(String, String)>,
    pub malformed: usize,
    pub failures: usize,
}

/// Extracts `n` terms from each pair through batched completions.
pub async fn extract_term_store(
    pairs: &[SegmentPair],
    lang: &LanguagePair,
    n: usize,
    separator: &str,
    names: &DisplayNames,
    gateway: &Gateway,
    cfg: &GenerationConfig,
) -> Result<ExtractionRun, PipelineError> {
    let mut run = ExtractionRun::default();
    if pairs.is_empty() {
        return Ok(run);
    }
    let prompts = pairs
        .iter()
        .map(|p| terminology::extraction_prompt(p, lang, n, separator, names))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::new(Stage::Render, e))?;
    let completions = gateway
        .complete_batch(&prompts, cfg)
        .await
        .map_err(|e| PipelineError::new(Stage::Gateway, e))?;
    for (pair, completion) in pairs.iter().zip(completions) {
        match completion {
            Ok(c) => {
                let lines = terminology::split_term_lines(&c.text);
                let parsed = terminology::parse_term_lines(&lines, separator, &pair.source, &pair.target);
                run.malformed += parsed.malformed;
                let terms: Vec<TermPair> = parsed.terms.into_iter().map(|t| t.term).collect();
                run.observations.extend(terms.iter().map(|t| (t.src.clone(), t.tgt.clone())));
                run.store.insert(pair.id, terms);
            }
            Err(e) => {
                log::warn!("term extraction failed for pair {}: {e}", pair.id);
                run.failures += 1;
            }
        }
    }
    Ok(run)
}

pub fn write_results_jsonl(path: &Path, results: &[TranslationResult]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_results_jsonl(path: &Path) -> std::io::Result<Vec<TranslationResult>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut results = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TranslationResult = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        results.push(r);
    }
    Ok(results)
}
