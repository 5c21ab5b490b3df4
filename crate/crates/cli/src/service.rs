//! HTTP labeling service.
//!
//! One worker thread owns the trainer and the dataset. Handlers read published
//! snapshots, queue labels in a shared book and send training commands over a
//! channel. Labels reach the dataset only between epochs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndarray::Array2;
use sae_core::active::{rank_unlabeled, ReplayOracle, UncertaintyRanking};
use sae_core::checkpoint::Checkpoint;
use sae_core::data::{Dataset, FeatureKind};
use sae_core::sae::{init_model, Trainer};
use sae_core::svm::{classification_error, fit_on_labeled, SvmModel};
use serde::{Deserialize, Serialize};

use crate::commands::{latent_rows, write_png, CHECKPOINT_FILE};
use crate::config::{LoadedData, RunConfig};
use crate::error::Result;

pub const DEFAULT_QUEUE_K: usize = 100;
pub const DEFAULT_LATENT_N: usize = 2000;
pub const MAX_TRAIN_EPOCHS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Training,
    Ranking,
}

#[derive(Debug, Clone, Serialize)]
pub struct Status {
    pub state: Phase,
    /// Completed epochs of the served model.
    pub epoch: usize,
    /// Epochs left in the current training request.
    pub epochs_remaining: usize,
    pub n_samples: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    /// Accepted labels not yet applied to the training set.
    pub pending: usize,
    pub classes: Vec<String>,
    pub kind: FeatureKind,
    pub has_ranking: bool,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub recon_rmse: f64,
    pub structural: f64,
    pub combined: f64,
    /// Test error of an SVM fitted on the labeled latents; absent without a
    /// test set or while some class has no label.
    pub class_error: Option<f64>,
    pub labeled: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueItem {
    pub id: usize,
    pub margin: f64,
    pub scores: Vec<f64>,
    pub payload: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentPoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub class: Option<usize>,
    pub labeled: bool,
}

/// Model-derived state, replaced wholesale by the worker.
#[derive(Debug, Default)]
struct Snapshot {
    ranking: Option<UncertaintyRanking>,
    latent: Vec<(f64, f64)>,
    metrics: Vec<MetricRow>,
}

#[derive(Debug)]
struct Control {
    phase: Phase,
    epoch: usize,
    remaining: usize,
    last_error: Option<String>,
}

/// Which ids are labeled, counting accepted labels the worker has not applied yet.
#[derive(Debug)]
struct LabelBook {
    labeled: Vec<bool>,
    pending: Vec<(usize, usize)>,
    accepted: BTreeMap<usize, usize>,
}

enum Command {
    Train(usize),
    Shutdown,
}

struct Shared {
    snapshot: RwLock<Arc<Snapshot>>,
    control: Mutex<Control>,
    book: Mutex<LabelBook>,
    commands: Mutex<Sender<Command>>,
    features: Arc<Array2<f32>>,
    kind: FeatureKind,
    image_shape: Option<(usize, usize)>,
    classes: Vec<String>,
    superclass: Vec<Option<usize>>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Serialize)]
struct ErrorDetail {
    code: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: ErrorDetail { code: self.code, message: self.message } };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// A running service: the router plus its worker thread.
pub struct Service {
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
}

struct Worker {
    trainer: Trainer,
    train: Dataset,
    test: Option<Dataset>,
    svm_params: sae_core::svm::SvmParams,
    seed: u64,
    output_dir: Option<std::path::PathBuf>,
    config: serde_json::Value,
    shared: Arc<Shared>,
}

impl Service {
    /// Loads the data and, if given, a checkpoint, and starts the worker.
    pub fn start(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Service> {
        let LoadedData { train, test, class_names } = cfg.load_data()?;
        let spec = cfg.distance_spec(train.n_classes())?;
        let (model, epoch) = match checkpoint {
            Some(p) => {
                let ck = Checkpoint::load(p)?;
                (ck.model, ck.epoch)
            }
            None => (init_model(&cfg.model, cfg.train.seed)?, 0),
        };
        let trainer = Trainer::new(model, spec, cfg.train.clone())?;
        Ok(Self::spawn(trainer, epoch, train, test, class_names, cfg, Some(cfg.output_dir.clone())))
    }

    /// Starts a service over an already built trainer and dataset. Nothing is
    /// written to disk when `output_dir` is `None`.
    pub fn spawn(
        trainer: Trainer,
        epoch: usize,
        train: Dataset,
        test: Option<Dataset>,
        classes: Vec<String>,
        cfg: &RunConfig,
        output_dir: Option<std::path::PathBuf>,
    ) -> Service {
        let (tx, rx) = channel();
        let shared = Arc::new(Shared {
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            control: Mutex::new(Control { phase: Phase::Ranking, epoch, remaining: 0, last_error: None }),
            book: Mutex::new(LabelBook { labeled: train.labeled_mask().to_vec(), pending: Vec::new(), accepted: BTreeMap::new() }),
            commands: Mutex::new(tx),
            features: Arc::new(train.features().clone()),
            kind: train.kind(),
            image_shape: train.image_shape(),
            classes,
            superclass: (0..train.len()).map(|i| train.superclass(i)).collect(),
        });
        let mut worker = Worker {
            trainer,
            train,
            test,
            svm_params: cfg.svm,
            seed: cfg.train.seed,
            output_dir,
            config: serde_json::to_value(cfg).unwrap_or_default(),
            shared: shared.clone(),
        };
        worker.refresh(epoch);
        let handle = std::thread::spawn(move || worker.run(rx, epoch));
        Service { shared, worker: Some(handle) }
    }

    pub fn router(&self) -> Router {
        router(self.shared.clone())
    }

    /// Serves static UI files from `dir` for every path outside `/api`.
    pub fn router_with_ui(&self, dir: &Path) -> Router {
        self.router().fallback_service(tower_http::services::ServeDir::new(dir))
    }

    /// Blocks until the worker is idle.
    pub fn wait_idle(&self) {
        loop {
            if self.shared.control.lock().expect("control lock").phase == Phase::Idle {
                return;
            }
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
    }

    /// Lets the current training request finish, then stops the worker.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(h) = self.worker.take() {
            let _ = self.shared.commands.lock().expect("command lock").send(Command::Shutdown);
            let _ = h.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop();
    }
}

impl Worker {
    fn run(&mut self, rx: Receiver<Command>, mut epoch: usize) {
        while let Ok(cmd) = rx.recv() {
            let n = match cmd {
                Command::Train(n) => n,
                Command::Shutdown => break,
            };
            let mut failure = None;
            for done in 0..n {
                self.apply_pending();
                match self.trainer.run_epoch(&self.train) {
                    Ok(m) => {
                        epoch += 1;
                        let row = MetricRow {
                            epoch: m.epoch,
                            recon_rmse: m.recon_rmse,
                            structural: m.structural_loss,
                            combined: m.combined_loss,
                            class_error: self.test_error(),
                            labeled: self.train.labeled_count(),
                        };
                        self.publish(|s| s.metrics.push(row));
                        let mut c = self.shared.control.lock().expect("control lock");
                        c.epoch = epoch;
                        c.remaining = n - done - 1;
                    }
                    Err(e) => {
                        log::error!("training failed: {e}");
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            {
                let mut c = self.shared.control.lock().expect("control lock");
                c.phase = Phase::Ranking;
                c.remaining = 0;
                c.last_error = failure;
            }
            self.apply_pending();
            self.refresh(epoch);
            self.persist(epoch);
        }
    }

    fn apply_pending(&mut self) {
        let pending = std::mem::take(&mut self.shared.book.lock().expect("book lock").pending);
        for (id, class) in pending {
            // The book admits each id once, so this cannot conflict.
            if let Err(e) = self.train.assign_label(id, class) {
                log::error!("label {id} -> {class} rejected by the dataset: {e}");
            }
        }
    }

    fn fit(&self) -> Option<SvmModel> {
        fit_on_labeled(self.trainer.model(), &self.train, &self.svm_params).ok()
    }

    fn test_error(&self) -> Option<f64> {
        let test = self.test.as_ref()?;
        let svm = self.fit()?;
        classification_error(&svm, self.trainer.model(), test).ok()
    }

    fn publish(&self, edit: impl FnOnce(&mut Snapshot)) {
        let mut guard = self.shared.snapshot.write().expect("snapshot lock");
        let old = &**guard;
        let mut next = Snapshot { ranking: old.ranking.clone(), latent: old.latent.clone(), metrics: old.metrics.clone() };
        edit(&mut next);
        *guard = Arc::new(next);
    }

    /// Recomputes the ranking and the latent projection, then goes idle.
    fn refresh(&mut self, epoch: usize) {
        let ranking = self.fit().and_then(|svm| rank_unlabeled(&svm, self.trainer.model(), &self.train, epoch).ok());
        let ids: Vec<usize> = (0..self.train.len()).collect();
        let latent = match latent_rows(self.trainer.model(), &self.train, &ids, self.seed) {
            Ok(rows) => rows.into_iter().map(|(_, x, y)| (x, y)).collect(),
            Err(e) => {
                log::error!("latent projection failed: {e}");
                Vec::new()
            }
        };
        self.publish(|s| {
            s.ranking = ranking;
            s.latent = latent;
        });
        self.shared.control.lock().expect("control lock").phase = Phase::Idle;
    }

    /// Saves the model and the labels gathered so far.
    fn persist(&self, epoch: usize) {
        let Some(dir) = &self.output_dir else { return };
        let result = (|| -> Result<()> {
            std::fs::create_dir_all(dir)?;
            let ck =
                Checkpoint { model: self.trainer.model().clone(), epoch, seed: self.seed, config: self.config.clone(), svm: self.fit() };
            ck.save(dir.join(CHECKPOINT_FILE))?;
            let accepted = self.shared.book.lock().expect("book lock").accepted.clone();
            ReplayOracle::new(accepted).write_csv(dir.join("labels.csv"))?;
            Ok(())
        })();
        if let Err(e) = result {
            log::error!("could not save service state: {e}");
        }
    }
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/queue", get(queue))
        .route("/api/sample/{id}/image", get(sample_image))
        .route("/api/sample/{id}/vector", get(sample_vector))
        .route("/api/labels", post(post_label))
        .route("/api/train", post(post_train))
        .route("/api/latent", get(latent))
        .route("/api/metrics", get(metrics))
        .with_state(shared)
}

fn snapshot(s: &Shared) -> Arc<Snapshot> {
    s.snapshot.read().expect("snapshot lock").clone()
}

async fn status(State(s): State<Arc<Shared>>) -> Json<Status> {
    let snap = snapshot(&s);
    let (phase, epoch, remaining, last_error) = {
        let c = s.control.lock().expect("control lock");
        (c.phase, c.epoch, c.remaining, c.last_error.clone())
    };
    let (labeled, pending) = {
        let b = s.book.lock().expect("book lock");
        (b.labeled.iter().filter(|&&l| l).count(), b.pending.len())
    };
    Json(Status {
        state: phase,
        epoch,
        epochs_remaining: remaining,
        n_samples: s.superclass.len(),
        labeled,
        unlabeled: s.superclass.len() - labeled,
        pending,
        classes: s.classes.clone(),
        kind: s.kind,
        has_ranking: snap.ranking.is_some(),
        last_error,
    })
}

fn parse_count(raw: Option<&String>, default: usize, name: &str) -> ApiResult<usize> {
    match raw {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer, got {v:?}"))),
    }
}

fn payload_url(s: &Shared, id: usize) -> String {
    match (s.kind, s.image_shape) {
        (FeatureKind::Image, Some(_)) => format!("/api/sample/{id}/image"),
        _ => format!("/api/sample/{id}/vector"),
    }
}

async fn queue(State(s): State<Arc<Shared>>, Query(q): Query<BTreeMap<String, String>>) -> ApiResult<Json<Vec<QueueItem>>> {
    let k = parse_count(q.get("k"), DEFAULT_QUEUE_K, "k")?;
    let snap = snapshot(&s);
    let ranking = snap.ranking.as_ref().ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, "no_ranking", "no ranking yet: every class needs a labeled sample and a finished training run")
    })?;
    let labeled = s.book.lock().expect("book lock").labeled.clone();
    let items = ranking
        .entries
        .iter()
        .filter(|e| !labeled[e.id])
        .take(k)
        .map(|e| QueueItem { id: e.id, margin: e.margin, scores: e.scores.clone(), payload: payload_url(&s, e.id) })
        .collect();
    Ok(Json(items))
}

fn check_id(s: &Shared, id: usize) -> ApiResult<()> {
    if id < s.superclass.len() {
        Ok(())
    } else {
        Err(ApiError::not_found(format!("sample {id} does not exist ({} samples)", s.superclass.len())))
    }
}

async fn sample_image(State(s): State<Arc<Shared>>, UrlPath(id): UrlPath<usize>) -> ApiResult<Response> {
    check_id(&s, id)?;
    let (rows, cols) = match (s.kind, s.image_shape) {
        (FeatureKind::Image, Some(shape)) => shape,
        _ => return Err(ApiError::new(StatusCode::NOT_FOUND, "not_an_image", "this dataset holds vectors; use /vector")),
    };
    let row = s.features.row(id).to_vec();
    let mut png = Vec::new();
    write_png(&mut png, &row, rows, cols).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Serialize)]
struct VectorBody {
    id: usize,
    values: Vec<f32>,
    class: Option<usize>,
}

async fn sample_vector(State(s): State<Arc<Shared>>, UrlPath(id): UrlPath<usize>) -> ApiResult<Json<VectorBody>> {
    check_id(&s, id)?;
    Ok(Json(VectorBody { id, values: s.features.row(id).to_vec(), class: s.superclass[id] }))
}

/// A class given by index or by configured name.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ClassRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    id: usize,
    class: ClassRef,
}

#[derive(Debug, Serialize)]
struct LabelAccepted {
    id: usize,
    class: usize,
    pending: usize,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn post_label(State(s): State<Arc<Shared>>, body: Bytes) -> ApiResult<(StatusCode, Json<LabelAccepted>)> {
    let req: LabelRequest = parse_body(&body)?;
    check_id(&s, req.id)?;
    let class = match req.class {
        ClassRef::Index(c) if c < s.classes.len() => c,
        ClassRef::Index(c) => return Err(ApiError::bad_request(format!("class {c} is out of range ({} classes)", s.classes.len()))),
        ClassRef::Name(n) => s.classes.iter().position(|c| *c == n).ok_or_else(|| ApiError::bad_request(format!("unknown class {n:?}")))?,
    };
    let mut book = s.book.lock().expect("book lock");
    if book.labeled[req.id] {
        return Err(ApiError::new(StatusCode::CONFLICT, "already_labeled", format!("sample {} is already labeled", req.id)));
    }
    book.labeled[req.id] = true;
    book.pending.push((req.id, class));
    book.accepted.insert(req.id, class);
    Ok((StatusCode::ACCEPTED, Json(LabelAccepted { id: req.id, class, pending: book.pending.len() })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    epochs: usize,
}

#[derive(Debug, Serialize)]
struct TrainAccepted {
    epochs: usize,
}

async fn post_train(State(s): State<Arc<Shared>>, body: Bytes) -> ApiResult<(StatusCode, Json<TrainAccepted>)> {
    let req: TrainRequest = parse_body(&body)?;
    if req.epochs == 0 || req.epochs > MAX_TRAIN_EPOCHS {
        return Err(ApiError::bad_request(format!("epochs must be in 1..={MAX_TRAIN_EPOCHS}")));
    }
    let mut c = s.control.lock().expect("control lock");
    if c.phase != Phase::Idle {
        return Err(ApiError::new(StatusCode::CONFLICT, "busy", "a training run is already in progress"));
    }
    s.commands
        .lock()
        .expect("command lock")
        .send(Command::Train(req.epochs))
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "worker_stopped", "the training worker has stopped"))?;
    c.phase = Phase::Training;
    c.remaining = req.epochs;
    Ok((StatusCode::ACCEPTED, Json(TrainAccepted { epochs: req.epochs })))
}

async fn latent(State(s): State<Arc<Shared>>, Query(q): Query<BTreeMap<String, String>>) -> ApiResult<Json<Vec<LatentPoint>>> {
    let snap = snapshot(&s);
    let total = snap.latent.len();
    let n = parse_count(q.get("n"), DEFAULT_LATENT_N, "n")?.min(total);
    let labeled = s.book.lock().expect("book lock").labeled.clone();
    let points = (0..n)
        .map(|i| {
            let id = i * total / n;
            let (x, y) = snap.latent[id];
            LatentPoint { id, x, y, class: s.superclass[id], labeled: labeled[id] }
        })
        .collect();
    Ok(Json(points))
}

async fn metrics(State(s): State<Arc<Shared>>) -> Json<Vec<MetricRow>> {
    Json(snapshot(&s).metrics.clone())
}
