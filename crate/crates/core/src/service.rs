//! HTTP API over the registry, experiment manager and store.
//!
//! | route | auth |
//! |---|---|
//! | `GET  /api/health` | |
//! | `GET  /api/systems` | |
//! | `POST /api/systems` | bearer |
//! | `POST /api/experiments` | bearer |
//! | `GET  /api/experiments/{id}` | |
//! | `GET  /api/experiments/{id}/results` | |
//! | `GET  /api/queue` | |
//! | `GET  /api/leaderboard/{task}?sort=&order=` | |
//!
//! Errors are `{"error": "..."}` with 400 (validation), 401 (auth),
//! 404 (not found), 405 (method), 409 (duplicate) or 503 (shutting down).

use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use thiserror::Error;

use crate::experiments::{ExperimentConfig, ExperimentError, ExperimentManager, ManagerOptions};
use crate::http::{HttpRequest, HttpResponse, HttpServer};
use crate::runner::{Launcher, RunnerError, SystemRecord};
use crate::storage::{sort_rows, SortOrder, StorageError, Store};
use crate::tasks::{TaskRegistry, SUCCESS_RATE};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub data_dir: PathBuf,
    pub max_workers: usize,
    pub api_token: String,
    pub http_threads: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: PathBuf::from("simlab-data"),
            max_workers: 2,
            api_token: String::new(),
            http_threads: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("bad data directory {path}: {detail}")]
    BadDataDir { path: PathBuf, detail: String },
    #[error("api token must not be empty")]
    MissingToken,
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Experiments(#[from] ExperimentError),
}

/// Request handling, independent of the socket.
#[derive(Debug, Clone)]
pub struct Api {
    manager: ExperimentManager,
    token: Arc<str>,
}

fn status_for_storage(e: &StorageError) -> u16 {
    match e {
        StorageError::NotFound(_) | StorageError::InvalidKey(_) | StorageError::UnknownTask(_) => {
            404
        }
        StorageError::AlreadyExists(_) => 409,
        StorageError::CorruptArtifact { .. } | StorageError::Io { .. } => 500,
    }
}

fn storage_error(e: StorageError) -> HttpResponse {
    HttpResponse::error(status_for_storage(&e), e.to_string())
}

fn experiment_error(e: ExperimentError) -> HttpResponse {
    let status = match &e {
        ExperimentError::UnknownSystem(_)
        | ExperimentError::RoleMismatch { .. }
        | ExperimentError::UnknownTask(_)
        | ExperimentError::InvalidConfig(_)
        | ExperimentError::InvalidCapacity => 400,
        ExperimentError::NotFound(_) => 404,
        ExperimentError::ShuttingDown => 503,
        ExperimentError::Storage(s) => status_for_storage(s),
    };
    HttpResponse::error(status, e.to_string())
}

fn runner_error(e: RunnerError) -> HttpResponse {
    let status = match &e {
        RunnerError::DuplicateVersion(_) => 409,
        RunnerError::UnknownSystem(_) => 404,
        RunnerError::Storage(s) => status_for_storage(s),
        _ => 400,
    };
    HttpResponse::error(status, e.to_string())
}

/// Equal-length-independent comparison of the presented token.
fn token_matches(expected: &str, presented: &str) -> bool {
    let (a, b) = (expected.as_bytes(), presented.as_bytes());
    let mut diff = a.len() ^ b.len();
    for (i, x) in a.iter().enumerate() {
        diff |= (*x ^ b.get(i).copied().unwrap_or(0)) as usize;
    }
    diff == 0
}

impl Api {
    pub fn new(manager: ExperimentManager, token: &str) -> Self {
        Self {
            manager,
            token: Arc::from(token),
        }
    }

    pub fn manager(&self) -> &ExperimentManager {
        &self.manager
    }

    fn authorized(&self, req: &HttpRequest) -> bool {
        req.header("authorization")
            .and_then(|h| h.strip_prefix("Bearer "))
            .is_some_and(|t| !self.token.is_empty() && token_matches(&self.token, t.trim()))
    }

    pub fn handle(&self, req: HttpRequest) -> HttpResponse {
        let segments: Vec<String> = req.segments().into_iter().map(str::to_string).collect();
        let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
        let method = req.method.as_str();
        match (method, segs.as_slice()) {
            ("GET", ["api", "health"]) => HttpResponse::json(200, &json!({ "status": "ok" })),
            ("GET", ["api", "systems"]) => match self.manager.registry().list() {
                Ok(list) => HttpResponse::json(200, &list),
                Err(e) => runner_error(e),
            },
            ("POST", ["api", "systems"]) => self.with_auth(&req, || self.register(&req)),
            ("POST", ["api", "experiments"]) => self.with_auth(&req, || self.submit(&req)),
            ("GET", ["api", "experiments", id]) => self.status(id),
            ("GET", ["api", "experiments", id, "results"]) => {
                match self.manager.store().results_bytes(id) {
                    Ok(bytes) => HttpResponse::raw_json(200, bytes),
                    Err(e) => storage_error(e),
                }
            }
            ("GET", ["api", "queue"]) => {
                let snapshot = self.manager.queue();
                let stats = self.manager.stats();
                HttpResponse::json(
                    200,
                    &json!({
                        "capacity": snapshot.capacity,
                        "experiments": snapshot.experiments,
                        "stats": stats,
                    }),
                )
            }
            ("GET", ["api", "leaderboard", task]) => self.leaderboard(task, &req),
            (
                _,
                ["api", "health" | "systems" | "experiments" | "queue"]
                | ["api", "experiments", _]
                | ["api", "experiments", _, "results"]
                | ["api", "leaderboard", _],
            ) => HttpResponse::error(405, format!("method {method} not allowed")),
            _ => HttpResponse::error(404, format!("no route for {}", req.path)),
        }
    }

    fn with_auth(&self, req: &HttpRequest, f: impl FnOnce() -> HttpResponse) -> HttpResponse {
        if self.authorized(req) {
            f()
        } else {
            HttpResponse::error(401, "missing or invalid bearer token")
        }
    }

    fn register(&self, req: &HttpRequest) -> HttpResponse {
        let record: SystemRecord = match serde_json::from_slice(&req.body) {
            Ok(r) => r,
            Err(e) => return HttpResponse::error(400, format!("invalid system record: {e}")),
        };
        match self.manager.registry().register(&record) {
            Ok(id) => HttpResponse::json(201, &json!({ "id": id })),
            Err(e) => runner_error(e),
        }
    }

    fn submit(&self, req: &HttpRequest) -> HttpResponse {
        let config: ExperimentConfig = match serde_json::from_slice(&req.body) {
            Ok(c) => c,
            Err(e) => return HttpResponse::error(400, format!("invalid experiment config: {e}")),
        };
        match self.manager.submit(config) {
            Ok(id) => HttpResponse::json(201, &json!({ "experiment_id": id })),
            Err(e) => experiment_error(e),
        }
    }

    fn status(&self, id: &str) -> HttpResponse {
        let store = self.manager.store();
        let config = match store.get_config(id) {
            Ok(c) => c,
            Err(e) => return storage_error(e),
        };
        match store.get_state(id) {
            Ok(state) => HttpResponse::json(200, &json!({ "config": config, "state": state })),
            Err(e) => storage_error(e),
        }
    }

    fn leaderboard(&self, task: &str, req: &HttpRequest) -> HttpResponse {
        let order = match req.query_param("order").map(str::parse::<SortOrder>) {
            None => SortOrder::Desc,
            Some(Ok(o)) => o,
            Some(Err(e)) => return HttpResponse::error(400, e),
        };
        let sort = req.query_param("sort").unwrap_or(SUCCESS_RATE);
        match self.manager.store().leaderboard_query(task) {
            Ok(mut rows) => {
                sort_rows(&mut rows, sort, order);
                HttpResponse::json(
                    200,
                    &json!({ "task": task, "sort": sort, "order": order, "rows": rows }),
                )
            }
            Err(e) => storage_error(e),
        }
    }
}

/// A running API service.
pub struct Service {
    http: Option<HttpServer>,
    api: Api,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("addr", &self.local_addr())
            .finish()
    }
}

impl Service {
    pub fn local_addr(&self) -> SocketAddr {
        self.http.as_ref().expect("service running").local_addr()
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.local_addr())
    }

    pub fn manager(&self) -> &ExperimentManager {
        self.api.manager()
    }

    /// Stop serving, then stop the manager: queued and running experiments
    /// end FAILED("shutdown") with their systems torn down.
    pub fn shutdown(mut self, timeout: Duration) {
        if let Some(http) = self.http.take() {
            http.shutdown();
        }
        self.api.manager().shutdown(timeout);
    }
}

/// Start the service with default manager options and launcher.
pub fn serve(config: &ServiceConfig) -> Result<Service, ServiceError> {
    let options = ManagerOptions {
        capacity: config.max_workers,
        ..Default::default()
    };
    serve_with(config, options, Arc::new(Launcher::new()))
}

pub fn serve_with(
    config: &ServiceConfig,
    options: ManagerOptions,
    launcher: Arc<Launcher>,
) -> Result<Service, ServiceError> {
    if config.api_token.is_empty() {
        return Err(ServiceError::MissingToken);
    }
    if config.max_workers == 0 {
        return Err(ExperimentError::InvalidCapacity.into());
    }
    let bad_dir = |detail: String| ServiceError::BadDataDir {
        path: config.data_dir.clone(),
        detail,
    };
    if config.data_dir.exists() && !config.data_dir.is_dir() {
        return Err(bad_dir("not a directory".into()));
    }
    let addr = SocketAddr::new(config.bind, config.port);
    let listener = TcpListener::bind(addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => ServiceError::PortInUse(config.port),
        _ => ServiceError::Bind { addr, source: e },
    })?;
    let store = Store::open(&config.data_dir).map_err(|e| bad_dir(e.to_string()))?;
    let manager = ExperimentManager::start(
        Arc::new(store),
        Arc::new(TaskRegistry::with_builtin()),
        launcher,
        ManagerOptions {
            capacity: config.max_workers,
            ..options
        },
    )
    .map_err(|e| match e {
        ExperimentError::Storage(s) => bad_dir(s.to_string()),
        other => other.into(),
    })?;
    let api = Api::new(manager, &config.api_token);
    let handler_api = api.clone();
    let http = HttpServer::from_listener(listener, config.http_threads, move |req| {
        handler_api.handle(req)
    })
    .map_err(|e| ServiceError::Bind { addr, source: e })?;
    tracing::info!(addr = %http.local_addr(), data_dir = %config.data_dir.display(), "service listening");
    Ok(Service {
        http: Some(http),
        api,
    })
}
