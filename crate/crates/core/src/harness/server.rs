//! Blind annotation service.
//!
//! Annotators see the reference and one candidate at a time. Candidates are
//! identified by opaque tokens; the mapping back to system names stays on
//! the server, and no response body ever carries a system name.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

use super::{read_scores, HarnessError, HumanScore, MAX_SCORE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCandidate {
    pub system: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleItem {
    pub summary_id: String,
    pub reference: String,
    pub candidates: Vec<SampleCandidate>,
}

#[derive(Debug, Clone)]
pub struct AnnotationConfig {
    pub sample: Vec<SampleItem>,
    pub session_seed: u64,
    /// Append-only score log (JSON lines).
    pub scores_path: PathBuf,
    /// Built UI assets, served at `/`.
    pub assets_dir: Option<PathBuf>,
}

/// One blinded unit of work as sent to the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub summary_id: String,
    pub reference: String,
    pub candidate: String,
    pub token: String,
    /// 1-based position in this annotator's sequence.
    pub position: usize,
    pub total: usize,
    pub done: bool,
}

/// Opaque candidate identifier: 16 hex chars of a hash over the session
/// seed, summary id and system name.
pub fn blind_token(seed: u64, summary_id: &str, system: &str) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((summary_id.len() as u64).to_le_bytes());
    h.update(summary_id.as_bytes());
    h.update(system.as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Task order for one annotator as `(item, candidate)` index pairs. The
/// shuffle is seeded by the session seed and the annotator name, so it is
/// stable across refreshes and differs between annotators.
pub fn shuffled_tasks(sample: &[SampleItem], annotator: &str, seed: u64) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = sample
        .iter()
        .enumerate()
        .flat_map(|(i, item)| (0..item.candidates.len()).map(move |c| (i, c)))
        .collect();
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(annotator.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    order.shuffle(&mut ChaCha8Rng::from_seed(digest));
    order
}

struct Log {
    file: File,
    seen: HashSet<(String, String, String)>,
    lines: usize,
}

pub struct AnnotationService {
    config: AnnotationConfig,
    /// token -> (item index, system)
    tokens: HashMap<String, (usize, String)>,
    log: Mutex<Log>,
}

impl AnnotationService {
    /// Validates the sample and opens the score log, reloading any scores
    /// already in it so duplicates are caught across restarts.
    pub fn new(config: AnnotationConfig) -> Result<Self, HarnessError> {
        if config.sample.is_empty() {
            return Err(HarnessError::BadSample("sample is empty".into()));
        }
        let mut ids = HashSet::new();
        let mut tokens = HashMap::new();
        for (i, item) in config.sample.iter().enumerate() {
            if !ids.insert(item.summary_id.as_str()) {
                return Err(HarnessError::BadSample(format!(
                    "duplicate summary_id {:?}",
                    item.summary_id
                )));
            }
            if item.candidates.is_empty() {
                return Err(HarnessError::BadSample(format!(
                    "summary {:?} has no candidates",
                    item.summary_id
                )));
            }
            for c in &item.candidates {
                let token = blind_token(config.session_seed, &item.summary_id, &c.system);
                if tokens.insert(token, (i, c.system.clone())).is_some() {
                    return Err(HarnessError::BadSample(format!(
                        "summary {:?} lists a system twice",
                        item.summary_id
                    )));
                }
            }
        }
        let existing = if config.scores_path.exists() {
            read_scores(BufReader::new(File::open(&config.scores_path)?))?
        } else {
            Vec::new()
        };
        let lines = existing.len();
        let seen = existing.iter().map(HumanScore::key).collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.scores_path)?;
        Ok(Self {
            config,
            tokens,
            log: Mutex::new(Log { file, seen, lines }),
        })
    }

    pub fn config(&self) -> &AnnotationConfig {
        &self.config
    }

    pub fn task_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn tasks(&self, annotator: &str) -> Vec<TaskView> {
        let order = shuffled_tasks(&self.config.sample, annotator, self.config.session_seed);
        let log = self.log.lock().expect("score log lock");
        let total = order.len();
        order
            .into_iter()
            .enumerate()
            .map(|(pos, (i, c))| {
                let item = &self.config.sample[i];
                let cand = &item.candidates[c];
                TaskView {
                    summary_id: item.summary_id.clone(),
                    reference: item.reference.clone(),
                    candidate: cand.text.clone(),
                    token: blind_token(self.config.session_seed, &item.summary_id, &cand.system),
                    position: pos + 1,
                    total,
                    done: log.seen.contains(&(
                        annotator.to_string(),
                        item.summary_id.clone(),
                        cand.system.clone(),
                    )),
                }
            })
            .collect()
    }

    /// Validates a submission and appends it. Returns the status code and
    /// the JSON body to send back.
    pub fn submit(&self, body: &Value) -> (StatusCode, Value) {
        let score = match self.resolve(body) {
            Ok(s) => s,
            Err(errors) => {
                return (
                    StatusCode::BAD_REQUEST,
                    json!({ "status": "invalid", "errors": errors }),
                )
            }
        };
        let mut log = self.log.lock().expect("score log lock");
        if log.seen.contains(&score.key()) {
            return (StatusCode::CONFLICT, json!({ "status": "duplicate" }));
        }
        let mut line = serde_json::to_string(&score).expect("HumanScore serializes");
        line.push('\n');
        if let Err(e) = log.file.write_all(line.as_bytes()).and_then(|_| log.file.flush()) {
            log::error!("writing score log: {e}");
            return (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({ "status": "error", "message": "could not write score log" }),
            );
        }
        log.seen.insert(score.key());
        log.lines += 1;
        (StatusCode::OK, json!({ "status": "ok" }))
    }

    fn resolve(&self, body: &Value) -> Result<HumanScore, Map<String, Value>> {
        let mut errors = Map::new();
        let Some(obj) = body.as_object() else {
            errors.insert("body".into(), "expected a JSON object".into());
            return Err(errors);
        };
        let text = |field: &str, errors: &mut Map<String, Value>| match obj.get(field) {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
            Some(Value::String(_)) => {
                errors.insert(field.into(), "must not be empty".into());
                None
            }
            Some(_) => {
                errors.insert(field.into(), "must be a string".into());
                None
            }
            None => {
                errors.insert(field.into(), "is required".into());
                None
            }
        };
        let rating = |field: &str, errors: &mut Map<String, Value>| {
            match obj.get(field).and_then(Value::as_u64) {
                Some(v) if v <= MAX_SCORE as u64 => Some(v as u8),
                Some(_) | None if obj.contains_key(field) => {
                    errors.insert(
                        field.into(),
                        format!("must be an integer from 0 to {MAX_SCORE}").into(),
                    );
                    None
                }
                _ => {
                    errors.insert(field.into(), "is required".into());
                    None
                }
            }
        };
        let annotator = text("annotator", &mut errors);
        let summary_id = text("summary_id", &mut errors);
        // the UI may send the opaque token in the HumanScore `system` slot
        let token_field = if obj.contains_key("token") { "token" } else { "system" };
        let token = text(token_field, &mut errors);
        let accuracy = rating("accuracy", &mut errors);
        let coherence = rating("coherence", &mut errors);

        let mut system = None;
        if let (Some(token), Some(summary_id)) = (&token, &summary_id) {
            match self.tokens.get(token) {
                Some((i, sys)) if &self.config.sample[*i].summary_id == summary_id => {
                    system = Some(sys.clone())
                }
                Some(_) => {
                    errors.insert(token_field.into(), "does not belong to this summary".into());
                }
                None => {
                    errors.insert(token_field.into(), "unknown token".into());
                }
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(HumanScore {
            annotator: annotator.unwrap().trim().to_string(),
            summary_id: summary_id.unwrap(),
            system: system.unwrap(),
            accuracy: accuracy.unwrap(),
            coherence: coherence.unwrap(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        })
    }

    /// Counts for the progress endpoint; per-annotator when one is named.
    pub fn progress(&self, annotator: Option<&str>) -> Value {
        let log = self.log.lock().expect("score log lock");
        let total = self.task_count();
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for (a, _, _) in &log.seen {
            *per.entry(a.as_str()).or_default() += 1;
        }
        let mut v = json!({
            "tasks_per_annotator": total,
            "scores": log.lines,
            "annotators": per,
        });
        if let Some(a) = annotator {
            let done = per.get(a).copied().unwrap_or(0);
            v["annotator"] = json!({ "name": a, "done": done, "total": total });
        }
        v
    }

    pub fn router(self: Arc<Self>) -> Router {
        let api = Router::new()
            .route("/api/tasks", get(get_tasks))
            .route("/api/scores", post(post_score))
            .route("/api/progress", get(get_progress))
            .with_state(self.clone());
        match &self.config.assets_dir {
            Some(dir) => api.fallback_service(ServeDir::new(dir)),
            None => api,
        }
    }
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

async fn get_tasks(
    State(svc): State<Arc<AnnotationService>>,
    Query(q): Query<AnnotatorQuery>,
) -> Response {
    match q.annotator.as_deref().map(str::trim) {
        Some(a) if !a.is_empty() => {
            let tasks = svc.tasks(a);
            let done = tasks.iter().filter(|t| t.done).count();
            Json(json!({ "annotator": a, "total": tasks.len(), "done": done, "tasks": tasks }))
                .into_response()
        }
        _ => (
            StatusCode::BAD_REQUEST,
            Json(json!({ "status": "invalid", "errors": { "annotator": "is required" } })),
        )
            .into_response(),
    }
}

async fn post_score(State(svc): State<Arc<AnnotationService>>, body: axum::body::Bytes) -> Response {
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({ "status": "invalid", "errors": { "body": e.to_string() } })),
            )
                .into_response()
        }
    };
    let (status, body) = tokio::task::spawn_blocking(move || svc.submit(&value))
        .await
        .unwrap_or_else(|_| (StatusCode::INTERNAL_SERVER_ERROR, json!({ "status": "error" })));
    (status, Json(body)).into_response()
}

async fn get_progress(
    State(svc): State<Arc<AnnotationService>>,
    Query(q): Query<AnnotatorQuery>,
) -> Json<Value> {
    Json(svc.progress(q.annotator.as_deref()))
}

/// Serves the annotation API on an already-bound listener.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<AnnotationService>,
) -> std::io::Result<()> {
    axum::serve(listener, service.router()).await
}

/// Blocking entry point: binds `addr` and serves until the process ends.
pub fn serve_annotation(config: AnnotationConfig, addr: SocketAddr) -> Result<(), HarnessError> {
    let service = Arc::new(AnnotationService::new(config)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("annotation service on http://{}", listener.local_addr()?);
        serve(listener, service).await
    })?;
    Ok(())
}
