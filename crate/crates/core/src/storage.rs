//! File-backed artifact store.
//!
//! Layout under the root directory:
//!
//! ```text
//! registry/<name>@<version>.json
//! tasks/<name>.json
//! experiments/<id>/config.json
//!                  needs.json
//!                  conversations/<k>.json
//!                  results.json
//!                  state.json
//!                  logs/
//! quarantine/
//! ```
//!
//! Every document is written to a temporary file in the target directory and
//! renamed into place, so readers see either the previous or the new
//! complete file. A document that fails to parse is moved to `quarantine/`
//! and reported as [`StorageError::CorruptArtifact`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Conversation, SystemRef};
use crate::experiments::{ExperimentConfig, ExperimentState, Status};
use crate::metrics::{Aggregate, MetricResult};
use crate::protocol::InformationNeed;
use crate::runner::SystemRecord;
use crate::tasks::TaskManifest;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("already exists: {0}")]
    AlreadyExists(String),
    #[error("corrupt artifact {path}: {detail} (moved to {quarantined})")]
    CorruptArtifact {
        path: PathBuf,
        quarantined: PathBuf,
        detail: String,
    },
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("invalid key {0:?}")]
    InvalidKey(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Results document: `{"experiment_id", "task", "agent", "simulator", "metrics"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub experiment_id: String,
    pub task: String,
    pub agent: SystemRef,
    pub simulator: SystemRef,
    pub metrics: Vec<MetricResult>,
}

impl ResultsDocument {
    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.metric_name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub agent: SystemRef,
    pub simulator: SystemRef,
    /// Metric name to aggregate over the pooled conversations.
    pub metrics: BTreeMap<String, Aggregate>,
    pub experiments: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    Asc,
    #[default]
    Desc,
}

impl std::str::FromStr for SortOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "asc" => Ok(SortOrder::Asc),
            "desc" => Ok(SortOrder::Desc),
            other => Err(format!("order must be asc or desc, got {other:?}")),
        }
    }
}

/// Order rows by the mean of `metric`, ties (and rows lacking the metric,
/// which always go last) by agent name then simulator name.
pub fn sort_rows(rows: &mut [LeaderboardRow], metric: &str, order: SortOrder) {
    rows.sort_by(|a, b| {
        let ma = a.metrics.get(metric).map(|m| m.mean);
        let mb = b.metrics.get(metric).map(|m| m.mean);
        let by_metric = match (ma, mb) {
            (Some(x), Some(y)) => {
                let c = x.partial_cmp(&y).unwrap_or(Ordering::Equal);
                match order {
                    SortOrder::Asc => c,
                    SortOrder::Desc => c.reverse(),
                }
            }
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_metric
            .then_with(|| a.agent.name.cmp(&b.agent.name))
            .then_with(|| a.simulator.name.cmp(&b.simulator.name))
            .then_with(|| a.agent.version.cmp(&b.agent.version))
            .then_with(|| a.simulator.version.cmp(&b.simulator.version))
    });
}

fn check_key(key: &str) -> Result<&str, StorageError> {
    let ok = !key.is_empty()
        && !key.starts_with('.')
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '@'));
    if ok {
        Ok(key)
    } else {
        Err(StorageError::InvalidKey(key.to_string()))
    }
}

const TEMP_PREFIX: &str = ".tmp-";

/// Handle on a store root. Cheap to share behind an `Arc`.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    registry_lock: Mutex<()>,
}

impl Store {
    /// Open (creating if needed) a store at `root`. The built-in movie task
    /// manifest is written on first use.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StorageError> {
        let root = root.as_ref().to_path_buf();
        for dir in ["registry", "tasks", "experiments", "quarantine"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let store = Self {
            root,
            registry_lock: Mutex::new(()),
        };
        store.remove_stale_temps();
        let builtin = TaskManifest::movie_recommendation();
        if !store.task_path(&builtin.name).exists() {
            store.put_task(&builtin)?;
        }
        Ok(store)
    }

    /// Delete temporary files left behind by writes that never reached
    /// their rename. Call only while no other handle writes to the root.
    fn remove_stale_temps(&self) {
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else if entry.file_name().to_string_lossy().starts_with(TEMP_PREFIX) {
                    match fs::remove_file(&path) {
                        Ok(()) => {
                            tracing::warn!(path = %path.display(), "removed stale temporary file")
                        }
                        Err(e) => {
                            tracing::warn!(path = %path.display(), error = %e, "cannot remove temporary file")
                        }
                    }
                }
            }
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn task_path(&self, name: &str) -> PathBuf {
        self.root.join("tasks").join(format!("{name}.json"))
    }

    fn record_path(&self, system: &SystemRef) -> Result<PathBuf, StorageError> {
        let key = check_key(&system.to_string())?.to_string();
        Ok(self.root.join("registry").join(format!("{key}.json")))
    }

    pub fn experiment_dir(&self, id: &str) -> Result<PathBuf, StorageError> {
        Ok(self.root.join("experiments").join(check_key(id)?))
    }

    /// Private per-experiment log directory, created on demand.
    pub fn log_dir(&self, id: &str) -> Result<PathBuf, StorageError> {
        let dir = self.experiment_dir(id)?.join("logs");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    // --- generic documents ---

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
        let dir = path.parent().expect("artifact paths have a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut tmp = tempfile::Builder::new()
            .prefix(TEMP_PREFIX)
            .tempfile_in(dir)
            .map_err(io_err(dir))?;
        tmp.write_all(bytes).map_err(io_err(path))?;
        tmp.as_file().sync_all().map_err(io_err(path))?;
        tmp.persist(path).map_err(|e| StorageError::Io {
            path: path.to_path_buf(),
            source: e.error,
        })?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    fn put_json<T: Serialize + ?Sized>(&self, path: &Path, value: &T) -> Result<(), StorageError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact types serialize");
        bytes.push(b'\n');
        self.write_atomic(path, &bytes)
    }

    fn read_bytes(&self, path: &Path) -> Result<Vec<u8>, StorageError> {
        fs::read(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StorageError::NotFound(self.display(path)),
            _ => StorageError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })
    }

    fn get_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T, StorageError> {
        let bytes = self.read_bytes(path)?;
        serde_json::from_slice(&bytes).map_err(|e| self.quarantine(path, e.to_string()))
    }

    fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .display()
            .to_string()
    }

    /// Move a corrupt file aside, preserving its bytes.
    fn quarantine(&self, path: &Path, detail: String) -> StorageError {
        let flat = self.display(path).replace(['/', '\\'], "__");
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.6f");
        let target = self.root.join("quarantine").join(format!("{stamp}-{flat}"));
        match fs::rename(path, &target) {
            Ok(()) => {
                tracing::error!(path = %path.display(), to = %target.display(), "quarantined corrupt artifact")
            }
            Err(e) => {
                tracing::error!(path = %path.display(), error = %e, "failed to quarantine corrupt artifact")
            }
        }
        StorageError::CorruptArtifact {
            path: path.to_path_buf(),
            quarantined: target,
            detail,
        }
    }

    pub fn quarantined(&self) -> Result<Vec<PathBuf>, StorageError> {
        let dir = self.root.join("quarantine");
        let mut out: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        out.sort();
        Ok(out)
    }

    // --- registry ---

    /// Persist a new record; fails if `(name, version)` already exists.
    pub fn create_record(&self, record: &SystemRecord) -> Result<(), StorageError> {
        let path = self.record_path(&record.system_ref())?;
        let _guard = self.registry_lock.lock().expect("registry lock");
        if path.exists() {
            return Err(StorageError::AlreadyExists(record.id()));
        }
        self.put_json(&path, record)
    }

    pub fn get_record(&self, system: &SystemRef) -> Result<SystemRecord, StorageError> {
        self.get_json(&self.record_path(system)?)
    }

    pub fn list_records(&self) -> Result<Vec<SystemRecord>, StorageError> {
        let mut records: Vec<SystemRecord> = self
            .json_files(&self.root.join("registry"))?
            .iter()
            .map(|p| self.get_json(p))
            .collect::<Result<_, _>>()?;
        records.sort_by(|a, b| (&a.name, &a.version).cmp(&(&b.name, &b.version)));
        Ok(records)
    }

    // --- tasks ---

    pub fn put_task(&self, manifest: &TaskManifest) -> Result<(), StorageError> {
        check_key(&manifest.name)?;
        self.put_json(&self.task_path(&manifest.name), manifest)
    }

    pub fn get_task(&self, name: &str) -> Result<TaskManifest, StorageError> {
        check_key(name).map_err(|_| StorageError::UnknownTask(name.to_string()))?;
        match self.get_json(&self.task_path(name)) {
            Err(StorageError::NotFound(_)) => Err(StorageError::UnknownTask(name.to_string())),
            other => other,
        }
    }

    pub fn list_tasks(&self) -> Result<Vec<TaskManifest>, StorageError> {
        self.json_files(&self.root.join("tasks"))?
            .iter()
            .map(|p| self.get_json(p))
            .collect()
    }

    // --- experiments ---

    pub fn put_config(&self, config: &ExperimentConfig) -> Result<(), StorageError> {
        self.put_json(
            &self
                .experiment_dir(&config.experiment_id)?
                .join("config.json"),
            config,
        )
    }

    pub fn get_config(&self, id: &str) -> Result<ExperimentConfig, StorageError> {
        self.get_json(&self.experiment_dir(id)?.join("config.json"))
    }

    pub fn put_needs(&self, id: &str, needs: &[InformationNeed]) -> Result<(), StorageError> {
        self.put_json(&self.experiment_dir(id)?.join("needs.json"), needs)
    }

    pub fn get_needs(&self, id: &str) -> Result<Vec<InformationNeed>, StorageError> {
        self.get_json(&self.experiment_dir(id)?.join("needs.json"))
    }

    pub fn put_state(&self, state: &ExperimentState) -> Result<(), StorageError> {
        self.put_json(
            &self
                .experiment_dir(&state.experiment_id)?
                .join("state.json"),
            state,
        )
    }

    pub fn get_state(&self, id: &str) -> Result<ExperimentState, StorageError> {
        self.get_json(&self.experiment_dir(id)?.join("state.json"))
    }

    fn conversation_path(&self, id: &str, index: usize) -> Result<PathBuf, StorageError> {
        Ok(self
            .experiment_dir(id)?
            .join("conversations")
            .join(format!("{index:04}.json")))
    }

    pub fn put_conversation(
        &self,
        id: &str,
        index: usize,
        conversation: &Conversation,
    ) -> Result<(), StorageError> {
        self.put_json(&self.conversation_path(id, index)?, conversation)
    }

    pub fn get_conversation(&self, id: &str, index: usize) -> Result<Conversation, StorageError> {
        self.get_json(&self.conversation_path(id, index)?)
    }

    /// Stored conversations in index order.
    pub fn list_conversations(&self, id: &str) -> Result<Vec<Conversation>, StorageError> {
        let dir = self.experiment_dir(id)?;
        if !dir.exists() {
            return Err(StorageError::NotFound(format!("experiments/{id}")));
        }
        let conv_dir = dir.join("conversations");
        if !conv_dir.exists() {
            return Ok(Vec::new());
        }
        self.json_files(&conv_dir)?
            .iter()
            .map(|p| self.get_json(p))
            .collect()
    }

    pub fn put_results(&self, results: &ResultsDocument) -> Result<(), StorageError> {
        self.put_json(
            &self
                .experiment_dir(&results.experiment_id)?
                .join("results.json"),
            results,
        )
    }

    pub fn get_results(&self, id: &str) -> Result<ResultsDocument, StorageError> {
        self.get_json(&self.experiment_dir(id)?.join("results.json"))
    }

    /// The stored results document byte for byte, after checking it parses.
    pub fn results_bytes(&self, id: &str) -> Result<Vec<u8>, StorageError> {
        let path = self.experiment_dir(id)?.join("results.json");
        let bytes = self.read_bytes(&path)?;
        match serde_json::from_slice::<ResultsDocument>(&bytes) {
            Ok(_) => Ok(bytes),
            Err(e) => Err(self.quarantine(&path, e.to_string())),
        }
    }

    /// Experiment ids in creation (submission) order.
    pub fn list_experiments(&self) -> Result<Vec<String>, StorageError> {
        let dir = self.root.join("experiments");
        let mut entries = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let id = entry.file_name().to_string_lossy().into_owned();
            if check_key(&id).is_err() || !entry.path().join("config.json").exists() {
                continue;
            }
            let config = self.get_config(&id)?;
            entries.push((config.submitted_at, id));
        }
        entries.sort();
        Ok(entries.into_iter().map(|(_, id)| id).collect())
    }

    fn json_files(&self, dir: &Path) -> Result<Vec<PathBuf>, StorageError> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p
                        .file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        files.sort();
        Ok(files)
    }

    // --- leaderboard ---

    /// One row per (agent, simulator) pair with at least one DONE
    /// experiment on `task`; per-conversation scores of all of a pair's
    /// experiments are pooled before aggregating. Rows are in
    /// (agent, simulator) order.
    pub fn leaderboard_query(&self, task: &str) -> Result<Vec<LeaderboardRow>, StorageError> {
        self.get_task(task)?;
        type Pooled = (usize, BTreeMap<String, Vec<f64>>);
        let mut pairs: BTreeMap<(SystemRef, SystemRef), Pooled> = BTreeMap::new();
        for id in self.list_experiments()? {
            let config = self.get_config(&id)?;
            if config.task != task {
                continue;
            }
            match self.get_state(&id) {
                Ok(state) if state.status == Status::Done => {}
                Ok(_) | Err(StorageError::NotFound(_)) => continue,
                Err(e) => return Err(e),
            }
            let results = self.get_results(&id)?;
            let entry = pairs
                .entry((results.agent.clone(), results.simulator.clone()))
                .or_default();
            entry.0 += 1;
            for m in &results.metrics {
                entry
                    .1
                    .entry(m.metric_name.clone())
                    .or_default()
                    .extend(m.per_conversation.values().copied());
            }
        }
        Ok(pairs
            .into_iter()
            .map(
                |((agent, simulator), (experiments, scores))| LeaderboardRow {
                    agent,
                    simulator,
                    metrics: scores
                        .iter()
                        .map(|(k, v)| (k.clone(), Aggregate::of(v)))
                        .collect(),
                    experiments,
                },
            )
            .collect())
    }
}
