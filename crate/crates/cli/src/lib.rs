//! Shared pieces of the `simlab` executables: logging setup, signal
//! handling and a blocking client for the service API.

use std::sync::mpsc;
use std::time::Duration;

use serde_json::Value;
use simlab_core::experiments::ExperimentConfig;
use simlab_core::runner::SystemRecord;

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";

/// Log to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Block until SIGINT or SIGTERM.
pub fn wait_for_signal() {
    let (tx, rx) = mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        tracing::warn!(error = %e, "cannot install signal handler");
    }
    let _ = rx.recv();
}

#[derive(Debug)]
pub enum ApiError {
    /// The service answered with an error status.
    Status {
        status: u16,
        message: String,
    },
    Transport(String),
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApiError::Status { status, message } => write!(f, "HTTP {status}: {message}"),
            ApiError::Transport(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ApiError {}

impl From<ureq::Error> for ApiError {
    fn from(e: ureq::Error) -> Self {
        match e {
            ureq::Error::Status(status, resp) => {
                let body = resp.into_string().unwrap_or_default();
                let message = serde_json::from_str::<Value>(&body)
                    .ok()
                    .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or(body);
                ApiError::Status { status, message }
            }
            other => ApiError::Transport(other.to_string()),
        }
    }
}

/// Blocking client for the service API.
#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl ApiClient {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            token,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }

    fn get(&self, path: &str) -> Result<ureq::Response, ApiError> {
        Ok(self.agent.get(&format!("{}{path}", self.base)).call()?)
    }

    fn post(&self, path: &str, body: Value) -> Result<Value, ApiError> {
        let mut req = self.agent.post(&format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        req.send_json(body)?
            .into_json()
            .map_err(|e| ApiError::Transport(e.to_string()))
    }

    fn get_json(&self, path: &str) -> Result<Value, ApiError> {
        self.get(path)?
            .into_json()
            .map_err(|e| ApiError::Transport(e.to_string()))
    }

    pub fn health(&self) -> Result<Value, ApiError> {
        self.get_json("/api/health")
    }

    pub fn register_system(&self, record: &SystemRecord) -> Result<String, ApiError> {
        let v = self.post(
            "/api/systems",
            serde_json::to_value(record).expect("record serializes"),
        )?;
        Ok(v["id"].as_str().unwrap_or_default().to_string())
    }

    pub fn submit(&self, config: &ExperimentConfig) -> Result<String, ApiError> {
        let v = self.post(
            "/api/experiments",
            serde_json::to_value(config).expect("config serializes"),
        )?;
        Ok(v["experiment_id"].as_str().unwrap_or_default().to_string())
    }

    pub fn status(&self, id: &str) -> Result<Value, ApiError> {
        self.get_json(&format!("/api/experiments/{id}"))
    }

    pub fn queue(&self) -> Result<Value, ApiError> {
        self.get_json("/api/queue")
    }

    pub fn leaderboard(
        &self,
        task: &str,
        sort: Option<&str>,
        order: Option<&str>,
    ) -> Result<Value, ApiError> {
        let mut query = Vec::new();
        if let Some(s) = sort {
            query.push(format!("sort={s}"));
        }
        if let Some(o) = order {
            query.push(format!("order={o}"));
        }
        let q = if query.is_empty() {
            String::new()
        } else {
            format!("?{}", query.join("&"))
        };
        self.get_json(&format!("/api/leaderboard/{task}{q}"))
    }

    /// Raw results document bytes.
    pub fn download(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(
            &mut self
                .get(&format!("/api/experiments/{id}/results"))?
                .into_reader(),
            &mut bytes,
        )
        .map_err(|e| ApiError::Transport(e.to_string()))?;
        Ok(bytes)
    }
}
