//! JSON request routing, independent of the HTTP transport.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard};

use pipereuse_core::ingest::{
    export_dataset_rules, export_rules, load_history, ConfidenceDoc, HistoryFormat, IngestError,
};
use pipereuse_core::model::{modules, DatasetId, RawRun};
use pipereuse_core::recommend::{ReuseSuggestion, StoreDecision};
use pipereuse_core::replay::{Policy, Tally};
use pipereuse_core::store::{
    load_manifest, save_manifest, BlobStore, DirBlobStore, MemoryBlobStore, StoreError, StoreManifest,
};
use pipereuse_core::{History, MiningOptions};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::Engine;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub history_path: Option<PathBuf>,
    pub history_format: Option<HistoryFormat>,
    pub store_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub options: MiningOptions,
    pub policy: Policy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            history_path: None,
            history_format: None,
            store_dir: None,
            ui_dir: None,
            options: MiningOptions::default(),
            policy: Policy::Risp,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OpenError {
    #[error("history: {0}")]
    History(#[from] IngestError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn json(status: u16, value: &impl Serialize) -> Self {
        let mut body = serde_json::to_vec(value).expect("response serializes");
        body.push(b'\n');
        Self {
            status,
            content_type: "application/json",
            body,
        }
    }

    fn error(status: u16, message: impl std::fmt::Display) -> Self {
        Self::json(status, &json!({ "error": message.to_string() }))
    }

    pub fn body_json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or(serde_json::Value::Null)
    }
}

struct Persistence {
    history_path: PathBuf,
    history_format: HistoryFormat,
    manifest_path: Option<PathBuf>,
}

/// Shared state behind one writer lock; reads see whole submissions or none of them.
pub struct Service {
    state: RwLock<Engine>,
    blobs: Box<dyn BlobStore>,
    persistence: Option<Persistence>,
    ui_dir: Option<PathBuf>,
}

impl Service {
    /// Loads history and manifest from disk; a missing history file starts empty.
    pub fn open(config: ServiceConfig) -> Result<Self, OpenError> {
        let history_format = match (&config.history_path, config.history_format) {
            (_, Some(f)) => f,
            (Some(p), None) => HistoryFormat::infer(p).unwrap_or(HistoryFormat::Lines),
            (None, None) => HistoryFormat::Lines,
        };
        let history = match &config.history_path {
            Some(p) if p.exists() => load_history(p, Some(history_format))?,
            _ => History::new(),
        };
        let (blobs, manifest_path): (Box<dyn BlobStore>, Option<PathBuf>) = match &config.store_dir {
            Some(dir) => {
                let store = DirBlobStore::new(dir);
                let path = store.manifest_path();
                (Box::new(store), Some(path))
            }
            None => (Box::new(MemoryBlobStore::new()), None),
        };
        let manifest = match &manifest_path {
            Some(p) if p.exists() => load_manifest(p)?,
            _ => StoreManifest::new(),
        };
        let before = manifest.clone();
        let engine = Engine::bootstrap(history, config.options, config.policy, manifest, blobs.as_ref())?;
        if let Some(p) = &manifest_path {
            if *engine.manifest() != before || !p.exists() {
                save_manifest(engine.manifest(), p)?;
            }
        }
        let persistence = config.history_path.map(|history_path| Persistence {
            history_path,
            history_format,
            manifest_path,
        });
        Ok(Self {
            state: RwLock::new(engine),
            blobs,
            persistence,
            ui_dir: config.ui_dir,
        })
    }

    /// Service over an in-memory history; nothing is written to disk.
    pub fn in_memory(history: History, options: MiningOptions, policy: Policy) -> Self {
        let blobs = MemoryBlobStore::new();
        let engine =
            Engine::bootstrap(history, options, policy, StoreManifest::new(), &blobs).expect("memory store cannot fail");
        Self {
            state: RwLock::new(engine),
            blobs: Box::new(blobs),
            persistence: None,
            ui_dir: None,
        }
    }

    pub fn with_ui_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.ui_dir = Some(dir.into());
        self
    }

    /// Read snapshot of the current state.
    pub fn snapshot(&self) -> RwLockReadGuard<'_, Engine> {
        self.state.read().expect("engine lock poisoned")
    }

    /// `target` is the request path with optional query string.
    pub fn handle(&self, method: &str, target: &str, body: &[u8]) -> Response {
        let (path, query) = match target.split_once('?') {
            Some((p, q)) => (p, q),
            None => (target, ""),
        };
        let query: BTreeMap<String, String> = url::form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        match (method, path) {
            ("GET", "/health") => Response::json(200, &json!({ "ok": true })),
            ("GET", "/rules") => self.rules(&query),
            ("GET", "/modules") => self.modules(),
            ("GET", "/metrics") => Response::json(200, &self.snapshot().metrics()),
            ("GET", "/replay/report") => Response::json(200, &self.snapshot().replayer().report()),
            ("POST", "/pipelines") => self.submit(body),
            ("POST", "/recommend/reuse") => self.reuse(body),
            ("POST", "/recommend/store") => self.store_preview(body),
            (_, "/health" | "/rules" | "/modules" | "/metrics" | "/replay/report" | "/pipelines")
            | (_, "/recommend/reuse" | "/recommend/store") => Response::error(405, format!("{method} not allowed on {path}")),
            ("GET", _) => self.static_file(path),
            _ => Response::error(404, format!("no route for {method} {path}")),
        }
    }

    fn rules(&self, query: &BTreeMap<String, String>) -> Response {
        let engine = self.snapshot();
        match query.get("dataset") {
            Some(d) => match DatasetId::new(d.as_str()) {
                Ok(d) => Response::json(200, &export_dataset_rules(engine.index(), &d)),
                Err(e) => Response::error(400, e),
            },
            None => Response::json(200, &export_rules(engine.index())),
        }
    }

    fn modules(&self) -> Response {
        let names: Vec<String> = self.snapshot().index().modules().iter().map(ToString::to_string).collect();
        Response::json(200, &json!({ "modules": names }))
    }

    fn reuse(&self, body: &[u8]) -> Response {
        let req: ReuseRequest = match parse_body(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        let (dataset, prefix) = match (DatasetId::new(req.dataset), modules(req.prefix)) {
            (Ok(d), Ok(p)) => (d, p),
            (Err(e), _) | (_, Err(e)) => return Response::error(400, e),
        };
        let top_k = req.top_k.unwrap_or(DEFAULT_TOP_K);
        if top_k == 0 {
            return Response::error(400, "topK must be at least 1");
        }
        let suggestions = self.snapshot().reuse(&dataset, &prefix, top_k);
        Response::json(
            200,
            &json!({ "suggestions": suggestions.iter().map(SuggestionDoc::from).collect::<Vec<_>>() }),
        )
    }

    fn store_preview(&self, body: &[u8]) -> Response {
        let req: RunRequest = match parse_body(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        let engine = self.snapshot();
        match engine.prepare(req.into_raw()) {
            Ok(run) => Response::json(200, &DecisionDoc::from(&engine.preview_store(&run))),
            Err(e) => Response::error(400, e),
        }
    }

    fn submit(&self, body: &[u8]) -> Response {
        let req: RunRequest = match parse_body(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        let mut engine = self.state.write().expect("engine lock poisoned");
        let run = match engine.prepare(req.into_raw()) {
            Ok(run) => run,
            Err(e) => return Response::error(400, e),
        };
        let decision = engine.preview_store(&run);
        let (manifest, reused) = match engine.staged_manifest(&run, &decision, self.blobs.as_ref()) {
            Ok(staged) => staged,
            Err(e @ StoreError::KeyConflict { .. }) => return Response::error(409, e),
            Err(e) => return Response::error(500, e),
        };
        if let Some(p) = &self.persistence {
            if let Err(e) = p.persist(&run, &manifest) {
                return Response::error(500, e);
            }
        }
        let submission = engine.commit(run, manifest, reused);
        debug_assert_eq!(submission.decision, decision);
        Response::json(
            200,
            &SubmitResponse {
                seq: submission.run.seq,
                store_decision: DecisionDoc::from(&submission.decision),
                ledger_deltas: submission.deltas,
                reused: submission.reused.map(|k| k.canonical()),
            },
        )
    }

    fn static_file(&self, path: &str) -> Response {
        let Some(root) = &self.ui_dir else {
            return Response::error(404, format!("no route for GET {path}"));
        };
        let rel = path.trim_start_matches('/');
        let rel = if rel.is_empty() { "index.html" } else { rel };
        let rel = Path::new(rel);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Response::error(404, "not found");
        }
        match std::fs::read(root.join(rel)) {
            Ok(body) => Response {
                status: 200,
                content_type: content_type(rel),
                body,
            },
            Err(_) => Response::error(404, format!("no such asset {path}")),
        }
    }
}

impl Persistence {
    fn persist(&self, run: &pipereuse_core::PipelineRun, manifest: &StoreManifest) -> Result<(), PersistError> {
        if let Some(p) = &self.manifest_path {
            save_manifest(manifest, p)?;
        }
        let record = self.history_format.record(run)?;
        if let Some(parent) = self.history_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.history_path)?;
        file.write_all(record.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
enum PersistError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("history append failed: {0}")]
    Io(#[from] std::io::Error),
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| Response::error(400, format!("malformed body: {e}")))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ReuseRequest {
    dataset: String,
    #[serde(default)]
    prefix: Vec<String>,
    top_k: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    dataset: String,
    modules: Vec<String>,
    #[serde(default)]
    id: Option<String>,
}

impl RunRequest {
    fn into_raw(self) -> RawRun {
        RawRun {
            id: self.id,
            dataset: self.dataset,
            modules: self.modules,
            seq: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct SuggestionDoc {
    pub consequent: Vec<String>,
    pub support: u64,
    pub confidence: ConfidenceDoc,
    pub stored: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store_key: Option<String>,
}

impl From<&ReuseSuggestion> for SuggestionDoc {
    fn from(s: &ReuseSuggestion) -> Self {
        Self {
            consequent: s.rule.consequent.iter().map(ToString::to_string).collect(),
            support: s.stats.support,
            confidence: s.stats.confidence().into(),
            stored: s.stored,
            store_key: s.store_key.as_ref().map(|k| k.canonical()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct DecisionDoc {
    pub mode: String,
    pub store_points: Vec<Vec<String>>,
}

impl From<&StoreDecision> for DecisionDoc {
    fn from(d: &StoreDecision) -> Self {
        Self {
            mode: d.mode.as_str().to_owned(),
            store_points: d
                .store_points
                .iter()
                .map(|s| s.prefix.iter().map(ToString::to_string).collect())
                .collect(),
        }
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SubmitResponse {
    seq: u64,
    store_decision: DecisionDoc,
    ledger_deltas: Tally,
    #[serde(skip_serializing_if = "Option::is_none")]
    reused: Option<String>,
}
