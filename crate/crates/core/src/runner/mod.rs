//! Systems registry and launcher.
//!
//! Systems run either as local processes or as containers through a
//! container runtime CLI. Every launch gets a fresh host port; a
//! [`Launcher`] keeps a census of live handles so callers can check that
//! each launch was paired with a teardown.

mod container;
mod ports;
mod process;
mod record;

use std::collections::BTreeMap;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::Child;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::Map;
use thiserror::Error;

pub use container::{detect_runtime, RUNTIME_ENV};
pub use ports::{allocate as allocate_port, PortLease};
pub use record::{ContainerSpec, Launch, LaunchSpec, ProcessSpec, SystemRecord};

use crate::dialogue::SystemRef;
use crate::protocol::{ProtocolClient, Role, SystemEndpoint};
use crate::storage::{StorageError, Store};

/// Probe id used by [`await_ready`].
pub const HEALTHCHECK_ID: &str = "healthcheck";

const FIRST_BACKOFF: Duration = Duration::from_millis(100);
const MAX_BACKOFF: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{0} is already registered")]
    DuplicateVersion(String),
    #[error("invalid launch spec: {0}")]
    InvalidLaunchSpec(String),
    #[error("invalid system record: {0}")]
    InvalidRecord(String),
    #[error("unknown system {0}")]
    UnknownSystem(String),
    #[error("launch backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("failed to start {system}: {detail}")]
    SpawnFailure { system: String, detail: String },
    #[error("{system} not ready: {last_error}")]
    NotReady { system: String, last_error: String },
    #[error("teardown of {system} failed: {detail}")]
    TeardownFailure { system: String, detail: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Registered systems, persisted in the store.
#[derive(Debug, Clone)]
pub struct Registry {
    store: Arc<Store>,
}

impl Registry {
    pub fn new(store: Arc<Store>) -> Self {
        Self { store }
    }

    /// Validate and persist `record`; returns its id `name@version`.
    pub fn register(&self, record: &SystemRecord) -> Result<String, RunnerError> {
        record.validate()?;
        match self.store.create_record(record) {
            Ok(()) => Ok(record.id()),
            Err(StorageError::AlreadyExists(id)) => Err(RunnerError::DuplicateVersion(id)),
            Err(e) => Err(e.into()),
        }
    }

    pub fn resolve(&self, system: &SystemRef) -> Result<SystemRecord, RunnerError> {
        match self.store.get_record(system) {
            Ok(r) => Ok(r),
            Err(StorageError::NotFound(_) | StorageError::InvalidKey(_)) => {
                Err(RunnerError::UnknownSystem(system.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn list(&self) -> Result<Vec<SystemRecord>, RunnerError> {
        Ok(self.store.list_records()?)
    }
}

type Census = Arc<Mutex<BTreeMap<u64, String>>>;

/// Starts systems and tracks which are still live.
#[derive(Debug)]
pub struct Launcher {
    container_runtime: Option<PathBuf>,
    census: Census,
    next: AtomicU64,
}

impl Default for Launcher {
    fn default() -> Self {
        Self::new()
    }
}

impl Launcher {
    /// Launcher with the container runtime found by [`detect_runtime`].
    pub fn new() -> Self {
        Self::with_container_runtime(detect_runtime())
    }

    pub fn with_container_runtime(runtime: Option<PathBuf>) -> Self {
        Self {
            container_runtime: runtime,
            census: Arc::default(),
            next: AtomicU64::new(1),
        }
    }

    pub fn container_runtime(&self) -> Option<&Path> {
        self.container_runtime.as_deref()
    }

    /// Descriptions of handles launched and not yet torn down.
    pub fn live_handles(&self) -> Vec<String> {
        self.census
            .lock()
            .expect("census")
            .values()
            .cloned()
            .collect()
    }

    /// Start `record` with its output captured under `log_dir`.
    pub fn launch(
        &self,
        record: &SystemRecord,
        log_dir: &Path,
    ) -> Result<RunningSystem, RunnerError> {
        let launch = record.launch.kind()?;
        let system = record.id();
        let lease = ports::allocate().map_err(|e| RunnerError::SpawnFailure {
            system: system.clone(),
            detail: format!("port allocation: {e}"),
        })?;
        let host_port = lease.port();
        let seq = self.next.fetch_add(1, Ordering::SeqCst);
        let log = log_dir.join(format!("{system}-{seq}.log"));

        let (handle, label) = match launch {
            Launch::Process(spec) => {
                let child = process::spawn(&system, spec, host_port, &log)?;
                let label = format!("process {system} pid {}", child.id());
                (Handle::Process(child), label)
            }
            Launch::Container(spec) => {
                let runtime = self.container_runtime.clone().ok_or_else(|| {
                    RunnerError::BackendUnavailable("no container runtime found".into())
                })?;
                let name = format!(
                    "simlab-{}-{}-{seq}-{:08x}",
                    record.name,
                    std::process::id(),
                    rand::random::<u32>()
                )
                .replace(
                    |c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.'),
                    "-",
                );
                container::start(&runtime, &system, &name, spec, host_port, record.port)?;
                let label = format!("container {system} {name}");
                (Handle::Container { runtime, name }, label)
            }
        };
        self.census.lock().expect("census").insert(seq, label);
        tracing::info!(system = %system, port = host_port, "launched");
        Ok(RunningSystem {
            endpoint: SystemEndpoint::new(format!("127.0.0.1:{host_port}"), record.role),
            record: record.clone(),
            log,
            inner: Mutex::new(Some(Live {
                handle,
                _lease: lease,
            })),
            census: Arc::clone(&self.census),
            census_key: seq,
        })
    }
}

#[derive(Debug)]
enum Handle {
    Process(Child),
    Container { runtime: PathBuf, name: String },
}

#[derive(Debug)]
struct Live {
    handle: Handle,
    _lease: PortLease,
}

/// A launched system. Dropping it tears it down.
#[derive(Debug)]
pub struct RunningSystem {
    pub record: SystemRecord,
    pub endpoint: SystemEndpoint,
    log: PathBuf,
    inner: Mutex<Option<Live>>,
    census: Census,
    census_key: u64,
}

impl RunningSystem {
    pub fn role(&self) -> Role {
        self.record.role
    }

    pub fn log_path(&self) -> &Path {
        &self.log
    }

    /// OS process id for process-backed systems.
    pub fn pid(&self) -> Option<u32> {
        match self
            .inner
            .lock()
            .expect("handle")
            .as_ref()
            .map(|l| &l.handle)
        {
            Some(Handle::Process(c)) => Some(c.id()),
            _ => None,
        }
    }

    /// `None` while running, `Some(detail)` once the system has exited.
    pub fn exited(&self) -> Option<String> {
        let mut guard = self.inner.lock().expect("handle");
        match guard.as_mut().map(|l| &mut l.handle) {
            None => Some("torn down".into()),
            Some(Handle::Process(c)) => match c.try_wait() {
                Ok(None) => None,
                Ok(Some(status)) => Some(format!("exited with {status}")),
                Err(e) => Some(e.to_string()),
            },
            Some(Handle::Container { runtime, name }) => {
                (!container::is_running(runtime, name)).then(|| "container not running".to_string())
            }
        }
    }

    pub fn is_alive(&self) -> bool {
        self.exited().is_none()
    }

    /// Last bytes of the captured output.
    pub fn log_tail(&self, max: u64) -> String {
        let Ok(mut f) = std::fs::File::open(&self.log) else {
            return String::new();
        };
        let len = f.metadata().map(|m| m.len()).unwrap_or(0);
        let _ = f.seek(SeekFrom::Start(len.saturating_sub(max)));
        let mut buf = Vec::new();
        let _ = f.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).trim().to_string()
    }

    /// Stop the system and free its port. Later calls are no-ops.
    pub fn teardown(&self) -> Result<(), RunnerError> {
        let mut guard = self.inner.lock().expect("handle");
        let Some(live) = guard.as_mut() else {
            return Ok(());
        };
        let result = match &mut live.handle {
            Handle::Process(child) => process::stop(child).map_err(|e| e.to_string()),
            Handle::Container { runtime, name } => container::remove(runtime, name, &self.log),
        };
        match result {
            Ok(()) => {
                *guard = None;
                self.census.lock().expect("census").remove(&self.census_key);
                tracing::info!(system = %self.record.id(), "torn down");
                Ok(())
            }
            Err(detail) => Err(RunnerError::TeardownFailure {
                system: self.record.id(),
                detail,
            }),
        }
    }
}

impl Drop for RunningSystem {
    fn drop(&mut self) {
        if let Err(e) = self.teardown() {
            tracing::error!(error = %e, "teardown on drop failed");
        }
    }
}

/// Wait until `rs` acknowledges a `configure` probe, polling with
/// exponential backoff from 100 ms. Returns the time it took.
pub fn await_ready(rs: &RunningSystem, deadline: Duration) -> Result<Duration, RunnerError> {
    let start = Instant::now();
    let mut backoff = FIRST_BACKOFF;
    loop {
        if let Some(exit) = rs.exited() {
            let tail = rs.log_tail(2048);
            return Err(RunnerError::NotReady {
                system: rs.record.id(),
                last_error: if tail.is_empty() {
                    exit
                } else {
                    format!("{exit}; output: {tail}")
                },
            });
        }
        let remaining = deadline.saturating_sub(start.elapsed());
        let client =
            ProtocolClient::new(remaining.clamp(Duration::from_millis(50), Duration::from_secs(2)));
        let last_error = match client.configure(&rs.endpoint, HEALTHCHECK_ID, Map::new()) {
            Ok(()) => return Ok(start.elapsed()),
            Err(e) => e.to_string(),
        };
        let remaining = deadline.saturating_sub(start.elapsed());
        if remaining.is_zero() {
            return Err(RunnerError::NotReady {
                system: rs.record.id(),
                last_error,
            });
        }
        std::thread::sleep(backoff.min(remaining));
        backoff = (backoff * 2).min(MAX_BACKOFF);
    }
}
