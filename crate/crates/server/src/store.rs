//! Project state and its write-ahead event log.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use adaptmt::mt_bridge::MtProvider;
use adaptmt::pipeline::TermStore;
use adaptmt::retrieval::Index;
use adaptmt::terminology::{Glossary, TermPair};
use adaptmt::tm::{LanguagePair, PairId, SegmentPair, TranslationMemory};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

pub const EVENT_LOG: &str = "events.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { project_id: String, lang: LanguagePair },
    Pair { pair: SegmentPair },
    Terms {
        #[serde(default)]
        pair_id: Option<PairId>,
        terms: Vec<TermPair>,
    },
    Glossary { entries: Vec<TermPair> },
}

/// Append-only JSONL log; each event is flushed before the change is published.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
}

impl EventLog {
    pub fn append(&self, events: &[Event]) -> std::io::Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(&buf)?;
        f.sync_data()
    }

    fn read(path: &Path) -> std::io::Result<Vec<Event>> {
        let reader = BufReader::new(File::open(path)?);
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(e) => events.push(e),
                // a torn final write is dropped; anything else is corruption
                Err(e) => {
                    log::warn!("{}: skipping unreadable event on line {}: {e}", path.display(), i + 1);
                }
            }
        }
        Ok(events)
    }
}

/// Immutable view used by readers.
#[derive(Debug, Default)]
pub struct Snapshot {
    pub version: u64,
    pub tm_len: usize,
    pub index: Option<Arc<Index>>,
    pub glossary: Option<Arc<Glossary>>,
    pub term_store: Arc<TermStore>,
    pub observations: Arc<Vec<(String, String)>>,
}

/// Mutable state, guarded by the project's writer lock.
#[derive(Debug)]
pub struct Writer {
    pub tm: TranslationMemory,
    pub term_store: TermStore,
    pub observations: Vec<(String, String)>,
    pub glossary: Option<Arc<Glossary>>,
    pub log: Option<EventLog>,
}

impl Writer {
    pub fn persist(&self, events: &[Event]) -> std::io::Result<()> {
        match &self.log {
            Some(log) => log.append(events),
            None => Ok(()),
        }
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::Created { .. } => {}
            Event::Pair { pair } => {
                self.tm.restore(pair);
            }
            Event::Terms { pair_id, terms } => {
                self.observations.extend(terms.iter().map(|t| (t.src.clone(), t.tgt.clone())));
                if let Some(id) = pair_id {
                    self.term_store.insert(id, terms);
                }
            }
            Event::Glossary { entries } => self.glossary = Some(Arc::new(Glossary::from_entries(entries))),
        }
    }
}

#[derive(Debug)]
pub struct Project {
    pub id: String,
    pub lang: LanguagePair,
    pub mt: Option<Arc<MtProvider>>,
    pub writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Snapshot>>,
    pub extraction_pending: AtomicBool,
}

impl Project {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Publishes a new snapshot. Call with the writer lock held.
    pub fn publish(&self, writer: &Writer, index: Option<Arc<Index>>) {
        let mut slot = self.snapshot.write().expect("snapshot lock");
        *slot = Arc::new(snapshot_of(writer, index, slot.version + 1));
    }
}

fn snapshot_of(writer: &Writer, index: Option<Arc<Index>>, version: u64) -> Snapshot {
    Snapshot {
        version,
        tm_len: writer.tm.len(),
        index,
        glossary: writer.glossary.clone(),
        term_store: Arc::new(writer.term_store.clone()),
        observations: Arc::new(writer.observations.clone()),
    }
}

pub fn build_index(tm: &TranslationMemory) -> Option<Arc<Index>> {
    if tm.is_empty() {
        return None;
    }
    Some(Arc::new(Index::build(tm).expect("non-empty memory indexes")))
}

#[derive(Debug, Default)]
pub struct Registry {
    pub projects: RwLock<HashMap<String, Arc<Project>>>,
    next_id: AtomicU64,
    data_dir: Option<PathBuf>,
}

fn project_number(id: &str) -> Option<u64> {
    id.strip_prefix('p')?.parse().ok()
}

impl Registry {
    /// Opens the registry, replaying every project log under `data_dir`.
    pub fn open(data_dir: Option<PathBuf>, mt_url: Option<&str>) -> std::io::Result<Self> {
        let reg = Registry { data_dir: data_dir.clone(), ..Default::default() };
        let Some(dir) = data_dir else {
            return Ok(reg);
        };
        fs::create_dir_all(&dir)?;
        let mut max_id = 0;
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path().join(EVENT_LOG);
            if !path.is_file() {
                continue;
            }
            let events = EventLog::read(&path)?;
            let Some(Event::Created { project_id, lang }) = events.first().cloned() else {
                log::warn!("{}: no creation event, skipped", path.display());
                continue;
            };
            let mut writer = Writer {
                tm: TranslationMemory::new(project_id.clone(), lang.clone()),
                term_store: TermStore::new(),
                observations: Vec::new(),
                glossary: None,
                log: Some(EventLog { path: path.clone() }),
            };
            for e in events.into_iter().skip(1) {
                writer.apply(e);
            }
            max_id = max_id.max(project_number(&project_id).unwrap_or(0));
            log::info!("replayed project {project_id}: {} pairs", writer.tm.len());
            let project = reg.make_project(project_id.clone(), lang, writer, mt_url);
            reg.projects.write().expect("registry lock").insert(project_id, project);
        }
        reg.next_id.store(max_id, Ordering::SeqCst);
        Ok(reg)
    }

    fn make_project(&self, id: String, lang: LanguagePair, writer: Writer, mt_url: Option<&str>) -> Arc<Project> {
        let snapshot = snapshot_of(&writer, build_index(&writer.tm), 1);
        Arc::new(Project {
            id,
            mt: mt_url.map(|u| Arc::new(MtProvider::url("mt", u, lang.clone()))),
            lang,
            writer: Mutex::new(writer),
            snapshot: RwLock::new(Arc::new(snapshot)),
            extraction_pending: AtomicBool::new(false),
        })
    }

    pub fn create(&self, lang: LanguagePair, mt_url: Option<&str>) -> std::io::Result<Arc<Project>> {
        let id = format!("p{}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        let log = match &self.data_dir {
            Some(dir) => {
                let pdir = dir.join(&id);
                fs::create_dir_all(&pdir)?;
                let log = EventLog { path: pdir.join(EVENT_LOG) };
                log.append(&[Event::Created { project_id: id.clone(), lang: lang.clone() }])?;
                Some(log)
            }
            None => None,
        };
        let writer = Writer {
            tm: TranslationMemory::new(id.clone(), lang.clone()),
            term_store: TermStore::new(),
            observations: Vec::new(),
            glossary: None,
            log,
        };
        let project = self.make_project(id.clone(), lang, writer, mt_url);
        self.projects.write().expect("registry lock").insert(id, project.clone());
        Ok(project)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Project>> {
        self.projects.read().expect("registry lock").get(id).cloned()
    }
}
