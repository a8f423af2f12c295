use std::sync::atomic::Ordering;
use std::sync::Arc;

use adaptmt::pipeline::{extract_term_store, Engine, PipelineError, Stage, StrategySpec};
use adaptmt::retrieval::RetrievalConfig;
use adaptmt::terminology::{aggregate_candidates, compile_glossary, GlossaryConfig, TermPair};
use adaptmt::tm::{parse_records, Format, LanguagePair, PairId, SegmentPair, TmError};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::store::{build_index, Event, Project};
use crate::AppState;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl std::fmt::Display) -> Self {
        Self { status, body: json!({ "error": message.to_string() }) }
    }

    fn bad_request(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        log::error!("{message}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token")
    }

    fn pipeline(err: PipelineError) -> Self {
        let status = match err.stage {
            Stage::Strategy | Stage::Retrieve => StatusCode::BAD_REQUEST,
            Stage::Fit => StatusCode::UNPROCESSABLE_ENTITY,
            Stage::Gateway | Stage::Mt | Stage::Terms => StatusCode::BAD_GATEWAY,
            Stage::Render | Stage::Postprocess => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, body: json!({ "error": err.message, "stage": err.stage.name() }) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn project(state: &AppState, id: &str) -> ApiResult<Arc<Project>> {
    state
        .registry
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no project `{id}`")))
}

pub async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
pub struct CreateProject {
    source_lang: String,
    target_lang: String,
    #[serde(default)]
    length_multiplier: Option<u32>,
}

pub async fn create_project(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateProject>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let lang = match body.length_multiplier {
        Some(m) => LanguagePair::with_multiplier(&body.source_lang, &body.target_lang, m),
        None => LanguagePair::new(&body.source_lang, &body.target_lang),
    }
    .map_err(ApiError::bad_request)?;
    let p = state
        .registry
        .create(lang, state.config.mt_url.as_deref())
        .map_err(ApiError::internal)?;
    log::info!("created project {} ({} -> {})", p.id, p.lang.source_lang, p.lang.target_lang);
    Ok((StatusCode::CREATED, Json(json!({ "project_id": p.id, "lang": p.lang }))))
}

pub async fn get_project(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let snap = p.snapshot();
    Ok(Json(json!({
        "project_id": p.id,
        "lang": p.lang,
        "tm_size": snap.tm_len,
        "glossary_size": snap.glossary.as_ref().map_or(0, |g| g.len()),
        "terms_pairs": snap.term_store.len(),
        "version": snap.version,
        "extraction_pending": p.extraction_pending.load(Ordering::SeqCst),
    })))
}

#[derive(Deserialize, Default)]
pub struct IngestQuery {
    format: Option<String>,
}

fn detect_format(query: &IngestQuery, headers: &HeaderMap, text: &str) -> ApiResult<Format> {
    if let Some(f) = &query.format {
        return f.parse().map_err(ApiError::bad_request);
    }
    let ctype = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    if ctype.contains("json") {
        return Ok(Format::Jsonl);
    }
    if ctype.contains("tab-separated") {
        return Ok(Format::Tsv);
    }
    let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    Ok(if first.starts_with('{') { Format::Jsonl } else { Format::Tsv })
}

pub async fn ingest_tm(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<IngestQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let text = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("body is not UTF-8: {e}")))?;
    let format = detect_format(&query, &headers, text)?;
    let records = match parse_records(text, format) {
        Ok(r) if r.is_empty() => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, TmError::Empty)),
        Ok(r) => r,
        Err(errors) => {
            let rows: Vec<Value> = errors
                .iter()
                .map(|e| match e {
                    TmError::Record { line, message } => json!({ "line": line, "message": message }),
                    other => json!({ "line": null, "message": other.to_string() }),
                })
                .collect();
            return Err(ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": format!("{} malformed row(s)", rows.len()), "rows": rows }),
            });
        }
    };
    let mut writer = p.writer.lock().await;
    let before = writer.tm.len();
    let report = writer.tm.extend_records(records).map_err(ApiError::bad_request)?;
    let events: Vec<Event> = writer.tm.pairs()[before..]
        .iter()
        .map(|pair| Event::Pair { pair: pair.clone() })
        .collect();
    writer.persist(&events).map_err(ApiError::internal)?;
    p.publish(&writer, build_index(&writer.tm));
    log::info!("project {id}: ingested {} of {} rows", report.kept, report.read);
    Ok(Json(json!({
        "read": report.read,
        "ingested": report.kept,
        "dropped": report.dropped,
        "tm_size": writer.tm.len(),
    })))
}

#[derive(Deserialize)]
pub struct MatchQuery {
    #[serde(default)]
    q: String,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    5
}

pub async fn matches(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<MatchQuery>,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    if query.q.trim().is_empty() {
        return Err(ApiError::bad_request("query `q` must not be empty"));
    }
    let snap = p.snapshot();
    let found = match &snap.index {
        Some(index) => index
            .retrieve(&query.q, &RetrievalConfig::top_k(query.k), None)
            .map_err(ApiError::bad_request)?,
        None => Vec::new(),
    };
    let rows: Vec<Value> = found
        .iter()
        .map(|m| {
            json!({
                "id": m.pair.id,
                "source": m.pair.source,
                "target": m.pair.target,
                "origin": m.pair.origin,
                "score": m.score,
            })
        })
        .collect();
    Ok(Json(json!({ "query": query.q, "matches": rows })))
}

#[derive(Deserialize)]
pub struct TranslateBody {
    source: String,
    #[serde(default)]
    strategy: Option<StrategySpec>,
}

#[derive(Deserialize, Default)]
pub struct DebugQuery {
    #[serde(default)]
    debug: Option<String>,
}

pub async fn translate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<DebugQuery>,
    Json(body): Json<TranslateBody>,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let snap = p.snapshot();
    let mut engine = Engine::new(p.lang.clone(), state.gateway.clone())
        .with_term_store(snap.term_store.clone())
        .with_display_names(state.config.display_names.clone())
        .with_budget(state.config.budget.clone());
    engine.index = snap.index.clone();
    engine.glossary = snap.glossary.clone();
    engine.mt = p.mt.clone();
    let strategy = body.strategy.unwrap_or_else(|| state.config.default_strategy.clone());
    let result = engine.translate_segment(&body.source, &strategy).await.map_err(ApiError::pipeline)?;
    let debug = matches!(query.debug.as_deref(), Some("1" | "true"));
    let result = if debug { result } else { result.redacted() };
    Ok(Json(serde_json::to_value(result).map_err(ApiError::internal)?))
}

#[derive(Deserialize)]
pub struct ApproveBody {
    source: String,
    target: String,
}

pub async fn approve(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<ApproveBody>,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    if body.source.trim().is_empty() || body.target.trim().is_empty() {
        return Err(ApiError::bad_request("source and target must not be empty"));
    }
    let mut writer = p.writer.lock().await;
    let existing = writer.tm.find(&body.source, &body.target).map(|s| s.id);
    let pair = writer.tm.approve(&body.source, &body.target).map_err(ApiError::bad_request)?;
    let created = existing.is_none();
    if created {
        writer.persist(&[Event::Pair { pair: pair.clone() }]).map_err(ApiError::internal)?;
        let index = match p.snapshot().index.clone() {
            Some(index) => Some(Arc::new(index.with_pair(pair.clone()).map_err(ApiError::internal)?)),
            None => build_index(&writer.tm),
        };
        p.publish(&writer, index);
    }
    Ok(Json(json!({ "pair_id": pair.id, "created": created })))
}

#[derive(Deserialize, Default)]
pub struct ExtractBody {
    #[serde(default = "default_terms")]
    n: usize,
    #[serde(default)]
    separator: Option<String>,
    /// Re-extract pairs that already have terms.
    #[serde(default)]
    all: bool,
}

fn default_terms() -> usize {
    5
}

struct PendingGuard<'a>(&'a Project);

impl Drop for PendingGuard<'_> {
    fn drop(&mut self) {
        self.0.extraction_pending.store(false, Ordering::SeqCst);
    }
}

pub async fn extract_terms(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<ExtractBody>>,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let body = body.map(|Json(b)| b).unwrap_or(ExtractBody { n: default_terms(), ..Default::default() });
    if body.n == 0 {
        return Err(ApiError::bad_request("n must be >= 1"));
    }
    if p.extraction_pending.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "term extraction already running"));
    }
    let _guard = PendingGuard(&p);
    let snap = p.snapshot();
    let pairs: Vec<SegmentPair> = snap
        .index
        .as_ref()
        .map(|i| i.pairs().iter().filter(|pr| body.all || !snap.term_store.contains_key(&pr.id)).cloned().collect())
        .unwrap_or_default();
    let separator = body.separator.unwrap_or_else(|| GlossaryConfig::default().separator);
    let run = extract_term_store(
        &pairs,
        &p.lang,
        body.n,
        &separator,
        &state.config.display_names,
        &state.gateway,
        &state.config.term_generation,
    )
    .await
    .map_err(ApiError::pipeline)?;
    let mut writer = p.writer.lock().await;
    let mut ids: Vec<&PairId> = run.store.keys().collect();
    ids.sort();
    let events: Vec<Event> = ids
        .into_iter()
        .map(|id| Event::Terms { pair_id: Some(*id), terms: run.store[id].clone() })
        .collect();
    writer.persist(&events).map_err(ApiError::internal)?;
    writer.observations.extend(run.observations.iter().cloned());
    writer.term_store.extend(run.store.clone());
    let index = p.snapshot().index.clone();
    p.publish(&writer, index);
    Ok(Json(json!({
        "pairs": pairs.len(),
        "extracted": run.store.len(),
        "observations": run.observations.len(),
        "malformed": run.malformed,
        "failures": run.failures,
    })))
}

#[derive(Deserialize)]
pub struct TermInput {
    src: String,
    tgt: String,
}

#[derive(Deserialize)]
pub struct UploadTerms {
    #[serde(default)]
    pair_id: Option<PairId>,
    terms: Vec<TermInput>,
}

pub async fn upload_terms(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<UploadTerms>,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let terms: Vec<TermPair> = body
        .terms
        .iter()
        .filter(|t| !t.src.trim().is_empty() && !t.tgt.trim().is_empty())
        .map(|t| TermPair::new(&t.src, &t.tgt, 1))
        .collect();
    if terms.is_empty() {
        return Err(ApiError::bad_request("no non-empty terms given"));
    }
    let mut writer = p.writer.lock().await;
    if let Some(pid) = body.pair_id {
        if writer.tm.get(pid).is_none() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no pair {pid}")));
        }
    }
    writer
        .persist(&[Event::Terms { pair_id: body.pair_id, terms: terms.clone() }])
        .map_err(ApiError::internal)?;
    writer.observations.extend(terms.iter().map(|t| (t.src.clone(), t.tgt.clone())));
    if let Some(pid) = body.pair_id {
        writer.term_store.insert(pid, terms.clone());
    }
    let index = p.snapshot().index.clone();
    p.publish(&writer, index);
    Ok(Json(json!({ "accepted": terms.len(), "observations": writer.observations.len() })))
}

#[derive(Deserialize, Default)]
pub struct CompileBody {
    #[serde(default)]
    min_freq: Option<u32>,
    #[serde(default)]
    max_ngram: Option<usize>,
}

pub async fn compile(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<CompileBody>>,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    if p.extraction_pending.load(Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "term extraction is still running"));
    }
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let mut cfg = GlossaryConfig::default();
    if let Some(m) = body.min_freq {
        cfg.min_freq = m;
    }
    if let Some(n) = body.max_ngram {
        cfg.max_ngram = n;
    }
    cfg.validate().map_err(ApiError::bad_request)?;
    let mut writer = p.writer.lock().await;
    let glossary = compile_glossary(&aggregate_candidates(writer.observations.iter().cloned()), &cfg);
    let mut warnings = Vec::new();
    if writer.observations.is_empty() {
        warnings.push("no term observations; extract or upload terms first".to_string());
    } else if glossary.is_empty() {
        warnings.push(format!("no candidate reached min_freq {}", cfg.min_freq));
    }
    writer
        .persist(&[Event::Glossary { entries: glossary.entries().to_vec() }])
        .map_err(ApiError::internal)?;
    let entries = glossary.entries().to_vec();
    writer.glossary = Some(Arc::new(glossary));
    let index = p.snapshot().index.clone();
    p.publish(&writer, index);
    Ok(Json(json!({ "entries": entries.len(), "glossary": entries, "warnings": warnings })))
}

pub async fn glossary(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let p = project(&state, &id)?;
    let snap = p.snapshot();
    let Some(g) = &snap.glossary else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "no glossary compiled yet"));
    };
    Ok(([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], g.to_tsv()).into_response())
}

pub async fn export_tm(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let p = project(&state, &id)?;
    let writer = p.writer.lock().await;
    let body = if writer.tm.is_empty() { String::new() } else { writer.tm.to_jsonl().map_err(ApiError::internal)? };
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
