use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use adaptmt::evaluation::{report, EvalRun};
use adaptmt::gateway::{GenerationConfig, StatsSnapshot};
use adaptmt::pipeline::{
    extract_term_store, read_results_jsonl, write_results_jsonl, Engine, StrategySpec, TermStore, Timing,
};
use adaptmt::prompting::PromptKind;
use adaptmt::retrieval::{bucket_stats, RetrievalConfig, BUCKETS};
use adaptmt::terminology::{aggregate_candidates, compile_glossary, Glossary, TermPair};
use adaptmt::tm::{ingest_str, parse_records, Format, LanguagePair, PairId, SegmentPair, TranslationMemory};
use adaptmt_server::ServerConfig;
use anyhow::{anyhow, Context};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{sha256_hex, Loaded};
use crate::{Cli, Command, GlossaryCommand, TermsCommand};

#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub error: anyhow::Error,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> CmdResult<T> {
        self.map_err(|e| Failure { stage, error: e.into() })
    }
}

fn fail<T>(stage: &'static str, error: anyhow::Error) -> CmdResult<T> {
    Err(Failure { stage, error })
}

#[derive(Debug, Serialize)]
struct ConfigRef {
    path: PathBuf,
    sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixture_sha256: Option<String>,
}

/// Everything needed to repeat a run.
#[derive(Debug, Serialize)]
struct Manifest {
    tool_version: &'static str,
    command: String,
    args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<ConfigRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lang: Option<LanguagePair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provider: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<StrategySpec>,
    seeds: Vec<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    started_at: DateTime<Utc>,
    elapsed_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gateway: Option<StatsSnapshot>,
    summary: Value,
}

impl Manifest {
    fn new(command: &str, cfg: Option<&Loaded>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: cfg.map(|c| ConfigRef {
                path: c.path.clone(),
                sha256: c.sha256.clone(),
                fixture_sha256: c.fixture_sha256.clone(),
            }),
            lang: cfg.map(|c| c.lang.clone()),
            provider: cfg.map(|c| c.provider.label().to_string()),
            model: None,
            strategy: None,
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_at: Utc::now(),
            elapsed_ms: 0.0,
            gateway: None,
            summary: Value::Null,
        }
    }

    fn input(&mut self, path: &Path) -> CmdResult {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display())).stage("io")?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes `<output>.manifest.json` for the first output.
    fn write(mut self, started: Instant) -> CmdResult<PathBuf> {
        self.elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
        let first = self.outputs.first().cloned().ok_or_else(|| Failure {
            stage: "io",
            error: anyhow!("manifest without outputs"),
        })?;
        let path = manifest_path(&first);
        let text = serde_json::to_string_pretty(&self).stage("io")?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display())).stage("io")?;
        Ok(path)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn load_config(cli: &Cli) -> CmdResult<Loaded> {
    let Some(path) = &cli.config else {
        return fail("config", anyhow!("this command needs --config <file> (or ADAPTMT_CONFIG)"));
    };
    Loaded::load(path).stage("config")
}

fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).stage("io")
}

fn format_of(path: &Path, explicit: Option<&str>) -> CmdResult<Format> {
    if let Some(f) = explicit {
        return f.parse::<Format>().stage("config");
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => Ok(Format::Jsonl),
        _ => Ok(Format::Tsv),
    }
}

/// Reads a memory: a JSONL store with ids, or any TSV/JSONL file.
fn load_tm(path: &Path, lang: &LanguagePair) -> CmdResult<TranslationMemory> {
    let text = read_text(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let format = format_of(path, None)?;
    if format == Format::Jsonl && text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.contains("\"id\"")) {
        return TranslationMemory::load_store(path, id, lang.clone()).stage("ingest");
    }
    let (tm, report) = ingest_str(&text, format, id, lang.clone()).stage("ingest")?;
    log::info!("{}: kept {} of {} rows", path.display(), report.kept, report.read);
    Ok(tm)
}

/// Reads (source, reference) rows. Plain text files have no references.
fn read_segments(path: &Path) -> CmdResult<Vec<(String, String)>> {
    let text = read_text(path)?;
    let rows: Vec<(String, String)> = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("jsonl") => {
            let format = format_of(path, None)?;
            parse_records(&text, format)
                .map_err(|errs| {
                    let msgs: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
                    anyhow!("{}: {}", path.display(), msgs.join("; "))
                })
                .stage("ingest")?
                .into_iter()
                .map(|r| (r.source, r.target))
                .collect()
        }
        _ => text.lines().filter(|l| !l.trim().is_empty()).map(|l| (l.trim().to_string(), String::new())).collect(),
    };
    if rows.is_empty() {
        return fail("ingest", anyhow!("{} has no segments", path.display()));
    }
    Ok(rows)
}

/// Gives each segment the id of its memory entry when present, otherwise an
/// id past the end of the memory.
fn segment_pairs(rows: Vec<(String, String)>, tm: &TranslationMemory) -> Vec<SegmentPair> {
    let mut next = tm.pairs().last().map_or(0, |p| p.id.0) + 1;
    rows.into_iter()
        .map(|(source, target)| match tm.find(&source, &target) {
            Some(p) => p.clone(),
            None => {
                let id = PairId(next);
                next += 1;
                SegmentPair { id, source, target, origin: Default::default(), created_at: Utc::now() }
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TermsRecord {
    pair_id: PairId,
    source: String,
    target: String,
    terms: Vec<TermPair>,
}

fn read_terms(path: &Path) -> CmdResult<Vec<TermsRecord>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}: line {}", path.display(), i + 1)).stage("terms")
        })
        .collect()
}

pub async fn run(cli: Cli) -> CmdResult {
    let started = Instant::now();
    match &cli.command {
        Command::Ingest(a) => {
            let cfg = load_config(&cli)?;
            let format = format_of(&a.input, a.format.as_deref())?;
            let text = read_text(&a.input)?;
            let mut tm = if a.store.exists() {
                load_tm(&a.store, &cfg.lang)?
            } else {
                TranslationMemory::new("store", cfg.lang.clone())
            };
            let records = parse_records(&text, format)
                .map_err(|errs| {
                    let msgs: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
                    anyhow!("{} malformed row(s): {}", msgs.len(), msgs.join("; "))
                })
                .stage("ingest")?;
            let report = tm.extend_records(records).stage("ingest")?;
            tm.export(&a.store, Format::Jsonl).stage("io")?;
            let mut m = Manifest::new("ingest", Some(&cfg));
            m.input(&a.input)?;
            m.outputs.push(a.store.clone());
            m.summary = json!({ "read": report.read, "kept": report.kept, "dropped": report.dropped, "tm_size": tm.len() });
            eprintln!("ingested {} of {} rows ({} dropped); store has {} pairs", report.kept, report.read, report.dropped, tm.len());
            m.write(started)?;
        }
        Command::Translate(a) => {
            let mut cfg = load_config(&cli)?;
            if let Some(mult) = a.multiplier {
                cfg.lang = LanguagePair::with_multiplier(&cfg.lang.source_lang, &cfg.lang.target_lang, mult).stage("config")?;
            }
            let mut strategy = cfg.strategy();
            if let Some(name) = &a.strategy {
                let kind = PromptKind::from_name(name).ok_or_else(|| Failure {
                    stage: "config",
                    error: anyhow!("unknown strategy `{name}`"),
                })?;
                let generation = strategy.generation.clone();
                strategy = StrategySpec::for_kind(kind, a.k.unwrap_or(strategy.top_k.max(5))).with_generation(generation);
            }
            if let Some(k) = a.k {
                strategy.top_k = if strategy.kind.is_few_shot() { k } else { 0 };
            }
            if let Some(seed) = a.seed {
                strategy.seed = seed;
            }
            if let Some(p) = a.top_p {
                strategy.generation.top_p = p;
            }
            if let Some(t) = a.temperature {
                strategy.generation.temperature = t;
            }
            strategy.validate().stage("config")?;
            let mt = cfg.mt().stage("config")?;
            let glossary = a.glossary.as_deref().map(Glossary::load).transpose().stage("config")?;
            let terms = a.terms.as_deref().map(read_terms).transpose()?;

            let tm = load_tm(&a.tm, &cfg.lang)?;
            let segments = segment_pairs(read_segments(&a.input)?, &tm);
            let mut engine = Engine::new(cfg.lang.clone(), cfg.gateway())
                .with_display_names(cfg.names())
                .with_budget(cfg.budget())
                .with_tm(&tm)
                .stage("retrieve")?;
            if let Some(g) = glossary {
                engine = engine.with_glossary(Arc::new(g));
            }
            if let Some(records) = terms {
                let store: TermStore = records.into_iter().map(|r| (r.pair_id, r.terms)).collect();
                engine = engine.with_term_store(Arc::new(store));
            }
            if let Some(mt) = mt {
                engine = engine.with_mt(Arc::new(mt));
            }
            let mut run = engine.run_experiment(&segments, &strategy, a.exclude_self).await.stage("pipeline")?;
            if a.deterministic {
                for r in &mut run.results {
                    r.timing = Timing::default();
                }
            }
            write_results_jsonl(&a.out, &run.results).stage("io")?;

            let mut m = Manifest::new("translate", Some(&cfg));
            m.input(&a.tm)?;
            m.input(&a.input)?;
            for p in a.glossary.iter().chain(a.terms.iter()) {
                m.input(p)?;
            }
            m.outputs.push(a.out.clone());
            m.model = Some(strategy.generation.model.clone());
            m.seeds = vec![strategy.seed];
            m.gateway = Some(engine.gateway.stats());
            let degraded = run.results.iter().filter(|r| r.kind_used != r.kind_requested).count();
            m.summary = json!({
                "segments": segments.len(),
                "failures": run.failures,
                "degraded": degraded,
                "elapsed_ms": run.elapsed_ms,
            });
            m.strategy = Some(strategy);
            eprintln!(
                "translated {} segments ({} failed, {} degraded) in {:.0} ms",
                segments.len(),
                run.failures,
                degraded,
                run.elapsed_ms
            );
            m.write(started)?;
            if run.failures == segments.len() {
                let first = run.results.iter().find_map(|r| r.error.clone());
                let stage = first.as_ref().map_or("pipeline", |e| e.stage.name());
                return fail(stage, anyhow!("every segment failed; first error: {}", first.map(|e| e.message).unwrap_or_default()));
            }
        }
        Command::Terms(TermsCommand::Extract(a)) => {
            let cfg = load_config(&cli)?;
            if a.n == 0 {
                return fail("config", anyhow!("--n must be >= 1"));
            }
            let tm = load_tm(&a.tm, &cfg.lang)?;
            let gateway = cfg.gateway();
            let separator = cfg.glossary_config().separator;
            let gen = GenerationConfig { model: cfg.model(), ..GenerationConfig::term_extraction() };
            let run = extract_term_store(tm.pairs(), &cfg.lang, a.n, &separator, &cfg.names(), &gateway, &gen)
                .await
                .stage("terms")?;
            let mut out = Vec::new();
            for pair in tm.pairs() {
                if let Some(terms) = run.store.get(&pair.id) {
                    let rec = TermsRecord { pair_id: pair.id, source: pair.source.clone(), target: pair.target.clone(), terms: terms.clone() };
                    serde_json::to_writer(&mut out, &rec).stage("io")?;
                    out.push(b'\n');
                }
            }
            fs::File::create(&a.out).and_then(|mut f| f.write_all(&out)).stage("io")?;
            let mut m = Manifest::new("terms extract", Some(&cfg));
            m.input(&a.tm)?;
            m.outputs.push(a.out.clone());
            m.model = Some(gen.model.clone());
            m.gateway = Some(gateway.stats());
            m.summary = json!({
                "pairs": tm.len(),
                "extracted": run.store.len(),
                "observations": run.observations.len(),
                "malformed": run.malformed,
                "failures": run.failures,
            });
            eprintln!("extracted terms for {} of {} pairs ({} failed)", run.store.len(), tm.len(), run.failures);
            m.write(started)?;
        }
        Command::Glossary(GlossaryCommand::Build(a)) => {
            let cfg = load_config(&cli)?;
            let mut gcfg = cfg.glossary_config();
            if let Some(v) = a.min_freq {
                gcfg.min_freq = v;
            }
            if let Some(v) = a.max_ngram {
                gcfg.max_ngram = v;
            }
            gcfg.validate().stage("config")?;
            let mut observations = Vec::new();
            for p in &a.terms {
                for rec in read_terms(p)? {
                    observations.extend(rec.terms.into_iter().map(|t| (t.src, t.tgt)));
                }
            }
            let glossary = compile_glossary(&aggregate_candidates(observations.iter().cloned()), &gcfg);
            glossary.save(&a.out).stage("io")?;
            let mut m = Manifest::new("glossary build", Some(&cfg));
            for p in &a.terms {
                m.input(p)?;
            }
            m.outputs.push(a.out.clone());
            m.summary = json!({
                "observations": observations.len(),
                "entries": glossary.len(),
                "min_freq": gcfg.min_freq,
                "max_ngram": gcfg.max_ngram,
            });
            if glossary.is_empty() {
                log::warn!("glossary is empty; no candidate reached min_freq {}", gcfg.min_freq);
            }
            eprintln!("glossary has {} entries from {} observations", glossary.len(), observations.len());
            m.write(started)?;
        }
        Command::Eval(a) => {
            let cfg = match &cli.config {
                Some(_) => Some(load_config(&cli)?),
                None => None,
            };
            let lang = a
                .lang
                .clone()
                .or_else(|| cfg.as_ref().map(|c| c.lang.target_lang.clone()))
                .unwrap_or_else(|| "xx".to_string());
            let refs: Vec<String> = read_segments_or_lines(&a.refs)?;
            let mut runs = Vec::new();
            for p in &a.runs {
                let results = read_results_jsonl(p).with_context(|| format!("cannot read {}", p.display())).stage("eval")?;
                let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                runs.push(EvalRun { label, lang: lang.clone(), hyps: results.into_iter().map(|r| r.output).collect() });
            }
            let refs_map = BTreeMap::from([(lang.clone(), refs)]);
            let rep = report(&runs, &refs_map).stage("eval")?;
            let csv = rep.to_csv();
            match &a.out {
                Some(out) => {
                    fs::write(out, &csv).stage("io")?;
                    let mut m = Manifest::new("eval", cfg.as_ref());
                    m.input(&a.refs)?;
                    for p in &a.runs {
                        m.input(p)?;
                    }
                    m.outputs.push(out.clone());
                    m.summary = serde_json::to_value(&rep.rows).stage("io")?;
                    m.write(started)?;
                }
                None => print!("{csv}"),
            }
            if a.table {
                println!("{}", rep.to_table());
            }
        }
        Command::Stats(a) => {
            let cfg = load_config(&cli)?;
            let tm = load_tm(&a.tm, &cfg.lang)?;
            let queries = segment_pairs(read_segments(&a.queries)?, &tm);
            let engine = Engine::new(cfg.lang.clone(), cfg.gateway()).with_tm(&tm).stage("retrieve")?;
            let Some(index) = engine.index else {
                return fail("retrieve", anyhow!("translation memory is empty"));
            };
            let rcfg = RetrievalConfig::top_k(a.k);
            let (mut top1, mut all) = (Vec::new(), Vec::new());
            for q in &queries {
                let found = index.retrieve(&q.source, &rcfg, a.exclude_self.then_some(q.id)).stage("retrieve")?;
                if let Some(first) = found.first() {
                    top1.push(first.score);
                }
                all.extend(found.iter().map(|m| m.score));
            }
            let (h1, hk) = (bucket_stats(&top1), bucket_stats(&all));
            let mut csv = String::from("bucket,top1,top_k\n");
            for (i, b) in BUCKETS.iter().enumerate() {
                csv.push_str(&format!("\"{}\",{},{}\n", b.2, h1.counts[i], hk.counts[i]));
            }
            match &a.out {
                Some(out) => {
                    fs::write(out, &csv).stage("io")?;
                    let mut m = Manifest::new("stats", Some(&cfg));
                    m.input(&a.tm)?;
                    m.input(&a.queries)?;
                    m.outputs.push(out.clone());
                    m.summary = json!({ "queries": queries.len(), "k": a.k, "top1": h1.counts, "top_k": hk.counts });
                    m.write(started)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Serve(a) => {
            let cfg = load_config(&cli)?;
            let section = &cfg.config.server;
            let addr = match a.addr {
                Some(addr) => addr,
                None => section.addr.as_deref().unwrap_or("127.0.0.1:8080").parse().stage("config")?,
            };
            let bearer_token = match &section.bearer_token_env {
                Some(var) => Some(std::env::var(var).map_err(|_| anyhow!("environment variable {var} is not set")).stage("config")?),
                None => None,
            };
            let mut server = ServerConfig::new(cfg.provider.clone());
            server.data_dir = a.data_dir.clone().or_else(|| section.data_dir.clone());
            server.bearer_token = bearer_token;
            server.retry = cfg.config.retry.clone().unwrap_or_default();
            server.mt_url = cfg.config.mt.as_ref().and_then(|m| m.url.clone());
            server.default_strategy = cfg.strategy();
            server.display_names = cfg.names();
            server.budget = cfg.budget();
            if server.data_dir.is_none() {
                log::warn!("no data_dir configured; projects live in memory only");
            }
            eprintln!("serving on http://{addr}");
            adaptmt_server::serve(server, addr).await.stage("serve")?;
        }
    }
    Ok(())
}

/// References as (source, reference) TSV/JSONL rows, or one per line.
fn read_segments_or_lines(path: &Path) -> CmdResult<Vec<String>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("jsonl") => Ok(read_segments(path)?.into_iter().map(|(_, r)| r).collect()),
        _ => Ok(read_text(path)?.lines().map(|l| l.trim().to_string()).collect()),
    }
}
