use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::{ExperimentConfig, ExperimentError, ExperimentState, Progress, Status};
use crate::dialogue::{Conversation, Dialogue, SystemRef, Termination};
use crate::metrics::{
    aspect_score, success_rate, AspectScorer, ConsistencyScorer, ConversationClassifier,
    OracleClassifier, UnderstandingScorer,
};
use crate::protocol::{ProtocolClient, Role};
use crate::runner::{await_ready, Launcher, Registry, RunnerError, RunningSystem, SystemRecord};
use crate::storage::{ResultsDocument, StorageError, Store};
use crate::tasks::{Task, TaskError, TaskRegistry};

const DEFAULT_SUBMITTER: &str = "anonymous";
const SHUTDOWN_REASON: &str = "shutdown";
const INTERRUPTED_REASON: &str = "interrupted";

#[derive(Clone)]
pub struct ManagerOptions {
    /// Worker slots.
    pub capacity: usize,
    /// Readiness deadline for each launched system.
    pub ready_timeout: Duration,
    /// `None` selects the oracle over the task catalog.
    pub classifier: Option<Arc<dyn ConversationClassifier>>,
    pub scorers: Vec<Arc<dyn AspectScorer>>,
    /// Relaunches of crashed systems allowed per experiment.
    pub relaunch_budget: usize,
}

impl Default for ManagerOptions {
    fn default() -> Self {
        Self {
            capacity: 2,
            ready_timeout: Duration::from_secs(10),
            classifier: None,
            scorers: vec![Arc::new(UnderstandingScorer), Arc::new(ConsistencyScorer)],
            relaunch_budget: 1,
        }
    }
}

impl std::fmt::Debug for ManagerOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManagerOptions")
            .field("capacity", &self.capacity)
            .field("ready_timeout", &self.ready_timeout)
            .field("external_classifier", &self.classifier.is_some())
            .field(
                "scorers",
                &self
                    .scorers
                    .iter()
                    .map(|s| s.metric_name().to_string())
                    .collect::<Vec<_>>(),
            )
            .field("relaunch_budget", &self.relaunch_budget)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub count: usize,
    pub mean_secs: f64,
    pub max_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub capacity: usize,
    pub queue_length: usize,
    pub running: usize,
    pub completed: usize,
    pub failed: usize,
    /// Stage name (`queued`, `provisioning`, `running`, `evaluating`) to
    /// time spent there by finished experiments.
    pub stages: BTreeMap<String, StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub experiment_id: String,
    pub status: Status,
    /// 0-based position for queued experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub submitter: String,
    pub agent: SystemRef,
    pub simulator: SystemRef,
    pub progress: Progress,
}

/// Non-terminal experiments in submission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSnapshot {
    pub capacity: usize,
    pub experiments: Vec<QueueEntry>,
}

struct Tracked {
    config: ExperimentConfig,
    status: Status,
    progress: Progress,
}

#[derive(Default)]
struct Sched {
    capacity: usize,
    queue: VecDeque<String>,
    active: usize,
    shutting_down: bool,
    tracked: BTreeMap<String, Tracked>,
    order: Vec<String>,
    seq: BTreeMap<String, u64>,
    workers: BTreeMap<String, JoinHandle<()>>,
    completed: usize,
    failed: usize,
    stage_secs: BTreeMap<&'static str, Vec<f64>>,
}

struct Inner {
    store: Arc<Store>,
    registry: Registry,
    tasks: Arc<TaskRegistry>,
    launcher: Arc<Launcher>,
    options: ManagerOptions,
    sched: Mutex<Sched>,
    changed: Condvar,
    stop: AtomicBool,
}

/// FIFO queue of experiments feeding a bounded pool of worker threads.
///
/// An experiment holds a slot from its `PROVISIONING` transition until its
/// terminal state is persisted, so at most `capacity` experiments are ever
/// recorded in an active state.
#[derive(Clone)]
pub struct ExperimentManager {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for ExperimentManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExperimentManager")
            .field("options", &self.inner.options)
            .finish()
    }
}

fn stage_secs(state: &ExperimentState) -> Vec<(&'static str, f64)> {
    let stages = [
        ("queued", Status::Queued),
        ("provisioning", Status::Provisioning),
        ("running", Status::Running),
        ("evaluating", Status::Evaluating),
    ];
    state
        .transitions
        .windows(2)
        .filter_map(|w| {
            let name = stages.iter().find(|(_, s)| *s == w[0].status)?.0;
            Some((
                name,
                (w[1].at - w[0].at).num_microseconds().unwrap_or(0) as f64 / 1e6,
            ))
        })
        .collect()
}

fn valid_submitter(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 32
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ExperimentManager {
    /// Start a manager over `store`. Experiments left active by a previous
    /// process are marked FAILED("interrupted"); queued ones are requeued.
    pub fn start(
        store: Arc<Store>,
        tasks: Arc<TaskRegistry>,
        launcher: Arc<Launcher>,
        options: ManagerOptions,
    ) -> Result<Self, ExperimentError> {
        if options.capacity == 0 {
            return Err(ExperimentError::InvalidCapacity);
        }
        let inner = Arc::new(Inner {
            registry: Registry::new(Arc::clone(&store)),
            store,
            tasks,
            launcher,
            sched: Mutex::new(Sched {
                capacity: options.capacity,
                ..Default::default()
            }),
            options,
            changed: Condvar::new(),
            stop: AtomicBool::new(false),
        });
        let manager = Self { inner };
        manager.recover()?;
        Ok(manager)
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.inner.store
    }

    pub fn registry(&self) -> &Registry {
        &self.inner.registry
    }

    pub fn launcher(&self) -> &Arc<Launcher> {
        &self.inner.launcher
    }

    fn lock(&self) -> MutexGuard<'_, Sched> {
        self.inner.sched.lock().expect("scheduler lock")
    }

    fn recover(&self) -> Result<(), ExperimentError> {
        let store = &self.inner.store;
        let mut sched = self.lock();
        for id in store.list_experiments()? {
            let config = store.get_config(&id)?;
            let mut state = match store.get_state(&id) {
                Ok(s) => s,
                Err(StorageError::NotFound(_)) => ExperimentState::queued(&id, config.num_needs),
                Err(e) => return Err(e.into()),
            };
            if let Some((seq, _)) = id
                .strip_prefix(&format!("{}-", config.submitter))
                .and_then(|rest| rest.split_once('-'))
            {
                if let Ok(n) = seq.parse::<u64>() {
                    let e = sched.seq.entry(config.submitter.clone()).or_default();
                    *e = (*e).max(n);
                }
            }
            match state.status {
                Status::Queued => sched.queue.push_back(id.clone()),
                s if s.is_active() => {
                    state
                        .fail(INTERRUPTED_REASON)
                        .expect("active states can fail");
                    store.put_state(&state)?;
                    tracing::warn!(experiment = %id, "marked interrupted experiment failed");
                }
                _ => {}
            }
            match state.status {
                Status::Done => sched.completed += 1,
                Status::Failed => sched.failed += 1,
                _ => {}
            }
            sched.order.push(id.clone());
            sched.tracked.insert(
                id,
                Tracked {
                    config,
                    status: state.status,
                    progress: state.progress,
                },
            );
        }
        self.dispatch(&mut sched);
        Ok(())
    }

    fn validate(&self, config: &ExperimentConfig) -> Result<(), ExperimentError> {
        if config.num_needs == 0 {
            return Err(ExperimentError::InvalidConfig(
                "num_needs must be at least 1".into(),
            ));
        }
        config
            .limits
            .validate()
            .map_err(ExperimentError::InvalidConfig)?;
        if !valid_submitter(&config.submitter) {
            return Err(ExperimentError::InvalidConfig(format!(
                "submitter must be 1-32 characters of [A-Za-z0-9_-], got {:?}",
                config.submitter
            )));
        }
        self.inner
            .tasks
            .get(&config.task)
            .map_err(|_| ExperimentError::UnknownTask(config.task.clone()))?;
        for (slot, system) in [
            (Role::Agent, &config.agent),
            (Role::Simulator, &config.simulator),
        ] {
            let record = self.inner.registry.resolve(system).map_err(|e| match e {
                RunnerError::UnknownSystem(s) => ExperimentError::UnknownSystem(s),
                RunnerError::Storage(s) => ExperimentError::Storage(s),
                other => ExperimentError::InvalidConfig(other.to_string()),
            })?;
            if record.role != slot {
                return Err(ExperimentError::RoleMismatch {
                    slot,
                    system: system.to_string(),
                    role: record.role,
                });
            }
        }
        Ok(())
    }

    /// Validate, persist and enqueue `config`; returns the experiment id.
    pub fn submit(&self, mut config: ExperimentConfig) -> Result<String, ExperimentError> {
        if config.submitter.is_empty() {
            config.submitter = DEFAULT_SUBMITTER.into();
        }
        self.validate(&config)?;
        let mut sched = self.lock();
        if sched.shutting_down {
            return Err(ExperimentError::ShuttingDown);
        }
        let seq = {
            let e = sched.seq.entry(config.submitter.clone()).or_default();
            *e += 1;
            *e
        };
        let id = format!(
            "{}-{seq:06}-{:04x}",
            config.submitter,
            rand::random::<u16>()
        );
        config.experiment_id = id.clone();
        config.submitted_at = Some(Utc::now());
        let state = ExperimentState::queued(&id, config.num_needs);
        self.inner.store.put_config(&config)?;
        self.inner.store.put_state(&state)?;
        tracing::info!(experiment = %id, agent = %config.agent, simulator = %config.simulator, "submitted");
        sched.order.push(id.clone());
        sched.tracked.insert(
            id.clone(),
            Tracked {
                config,
                status: Status::Queued,
                progress: state.progress,
            },
        );
        sched.queue.push_back(id.clone());
        self.dispatch(&mut sched);
        self.inner.changed.notify_all();
        Ok(id)
    }

    /// Start queued experiments while slots are free. Called with the lock
    /// held so the PROVISIONING transitions happen in queue order.
    fn dispatch(&self, sched: &mut Sched) {
        while !sched.shutting_down && sched.active < sched.capacity {
            let Some(id) = sched.queue.pop_front() else {
                break;
            };
            let mut state = match self.inner.store.get_state(&id) {
                Ok(s) => s,
                Err(e) => {
                    tracing::error!(experiment = %id, error = %e, "cannot load queued experiment");
                    continue;
                }
            };
            if state.transition(Status::Provisioning).is_err() {
                continue;
            }
            if let Err(e) = self.inner.store.put_state(&state) {
                tracing::error!(experiment = %id, error = %e, "cannot persist state");
                continue;
            }
            sched.active += 1;
            if let Some(t) = sched.tracked.get_mut(&id) {
                t.status = Status::Provisioning;
            }
            let worker = self.clone();
            let worker_id = id.clone();
            let handle = std::thread::Builder::new()
                .name(format!("exp-{id}"))
                .spawn(move || worker.run_lifecycle(&worker_id, state))
                .expect("spawn worker thread");
            sched.workers.insert(id, handle);
        }
    }

    fn record_state(&self, state: &ExperimentState) -> Result<(), StorageError> {
        self.inner.store.put_state(state)?;
        let mut sched = self.lock();
        if let Some(t) = sched.tracked.get_mut(&state.experiment_id) {
            t.status = state.status;
            t.progress = state.progress;
        }
        self.inner.changed.notify_all();
        Ok(())
    }

    fn finish(&self, mut state: ExperimentState, failure: Option<String>) {
        if let Some(reason) = failure {
            tracing::warn!(experiment = %state.experiment_id, reason = %reason, "experiment failed");
            if state.fail(reason).is_err() {
                tracing::error!(experiment = %state.experiment_id, "already terminal");
            }
        } else if let Err(e) = state.transition(Status::Done) {
            tracing::error!(experiment = %state.experiment_id, error = %e, "cannot finish");
        }
        if let Err(e) = self.inner.store.put_state(&state) {
            tracing::error!(experiment = %state.experiment_id, error = %e, "cannot persist terminal state");
        }
        let mut sched = self.lock();
        if let Some(t) = sched.tracked.get_mut(&state.experiment_id) {
            t.status = state.status;
            t.progress = state.progress;
        }
        match state.status {
            Status::Done => sched.completed += 1,
            _ => sched.failed += 1,
        }
        for (name, secs) in stage_secs(&state) {
            sched.stage_secs.entry(name).or_default().push(secs);
        }
        sched.active -= 1;
        if let Some(h) = sched.workers.remove(&state.experiment_id) {
            // the running thread is this one; detach
            drop(h);
        }
        self.dispatch(&mut sched);
        self.inner.changed.notify_all();
    }

    fn run_lifecycle(&self, id: &str, mut state: ExperimentState) {
        let mut env = Environment::default();
        let outcome = self.stages(id, &mut state, &mut env);
        // environment cleaning precedes the terminal state
        for rs in env.systems() {
            if let Err(e) = rs.teardown() {
                tracing::error!(experiment = %id, error = %e, "teardown failed");
            }
        }
        drop(env);
        self.finish(state, outcome.err());
    }

    fn check_stop(&self) -> Result<(), String> {
        if self.inner.stop.load(Ordering::SeqCst) {
            Err(SHUTDOWN_REASON.into())
        } else {
            Ok(())
        }
    }

    fn stages(
        &self,
        id: &str,
        state: &mut ExperimentState,
        env: &mut Environment,
    ) -> Result<(), String> {
        let store = &self.inner.store;
        let config = store.get_config(id).map_err(|e| e.to_string())?;

        // environment configuration
        let task = self
            .inner
            .tasks
            .get(&config.task)
            .map_err(|e| e.to_string())?;
        let needs = task
            .generate_needs(config.num_needs, config.seed)
            .map_err(|e: TaskError| e.to_string())?;
        store.put_needs(id, &needs).map_err(|e| e.to_string())?;
        let log_dir = store.log_dir(id).map_err(|e| e.to_string())?;
        let agent_record = self
            .inner
            .registry
            .resolve(&config.agent)
            .map_err(|e| e.to_string())?;
        let sim_record = self
            .inner
            .registry
            .resolve(&config.simulator)
            .map_err(|e| e.to_string())?;
        self.check_stop()?;
        env.agent = Some(self.bring_up(&agent_record, &log_dir)?);
        env.simulator = Some(self.bring_up(&sim_record, &log_dir)?);
        self.check_stop()?;
        state
            .transition(Status::Running)
            .map_err(|e| e.to_string())?;
        self.record_state(state).map_err(|e| e.to_string())?;

        // evaluation: collect conversations
        let client = ProtocolClient::new(config.limits.call_timeout());
        let mut relaunches = self.inner.options.relaunch_budget;
        for (k, need) in needs.iter().enumerate() {
            self.check_stop()?;
            let conversation = {
                let agent = env.agent.as_ref().expect("agent launched");
                let simulator = env.simulator.as_ref().expect("simulator launched");
                Dialogue {
                    client: &client,
                    agent: &agent.endpoint,
                    simulator: &simulator.endpoint,
                    agent_ref: config.agent.clone(),
                    simulator_ref: config.simulator.clone(),
                    max_turns: config.limits.max_turns,
                }
                .collect(&format!("{id}-c{k:04}"), need, &Map::new(), &Map::new())
            };
            store
                .put_conversation(id, k, &conversation)
                .map_err(|e| e.to_string())?;
            state.progress.completed = k + 1;
            self.record_state(state).map_err(|e| e.to_string())?;
            if matches!(
                conversation.termination,
                Termination::SystemError | Termination::Timeout
            ) {
                tracing::warn!(
                    experiment = %id,
                    conversation = %conversation.id,
                    error = conversation.error.as_deref().unwrap_or(""),
                    "conversation failed"
                );
                for slot in [Role::Agent, Role::Simulator] {
                    let (record, current) = match slot {
                        Role::Agent => (&agent_record, &mut env.agent),
                        Role::Simulator => (&sim_record, &mut env.simulator),
                    };
                    if current.as_ref().is_some_and(RunningSystem::is_alive) {
                        continue;
                    }
                    if relaunches == 0 {
                        return Err(format!(
                            "{} {} crashed; relaunch budget exhausted",
                            slot.as_str().to_lowercase(),
                            record.id()
                        ));
                    }
                    relaunches -= 1;
                    tracing::warn!(experiment = %id, system = %record.id(), "relaunching crashed system");
                    if let Some(old) = current.take() {
                        if let Err(e) = old.teardown() {
                            tracing::error!(error = %e, "teardown of crashed system failed");
                        }
                    }
                    *current = Some(self.bring_up(record, &log_dir)?);
                }
            }
        }

        // result storage
        state
            .transition(Status::Evaluating)
            .map_err(|e| e.to_string())?;
        self.record_state(state).map_err(|e| e.to_string())?;
        let conversations = store.list_conversations(id).map_err(|e| e.to_string())?;
        let results = self.evaluate(&config, &task, &conversations)?;
        store.put_results(&results).map_err(|e| e.to_string())?;
        Ok(())
    }

    fn bring_up(
        &self,
        record: &SystemRecord,
        log_dir: &std::path::Path,
    ) -> Result<RunningSystem, String> {
        let rs = self
            .inner
            .launcher
            .launch(record, log_dir)
            .map_err(|e| e.to_string())?;
        match await_ready(&rs, self.inner.options.ready_timeout) {
            Ok(_) => Ok(rs),
            Err(e) => {
                let _ = rs.teardown();
                Err(e.to_string())
            }
        }
    }

    fn evaluate(
        &self,
        config: &ExperimentConfig,
        task: &Task,
        conversations: &[Conversation],
    ) -> Result<ResultsDocument, String> {
        let oracle;
        let classifier: &dyn ConversationClassifier = match &self.inner.options.classifier {
            Some(c) => c.as_ref(),
            None => {
                oracle = OracleClassifier::new(Arc::clone(&task.catalog));
                &oracle
            }
        };
        let mut metrics = vec![success_rate(conversations, classifier).map_err(|e| e.to_string())?];
        for scorer in &self.inner.options.scorers {
            if task
                .manifest
                .metrics
                .iter()
                .any(|m| m == scorer.metric_name())
            {
                metrics
                    .push(aspect_score(conversations, scorer.as_ref()).map_err(|e| e.to_string())?);
            }
        }
        Ok(ResultsDocument {
            experiment_id: config.experiment_id.clone(),
            task: config.task.clone(),
            agent: config.agent.clone(),
            simulator: config.simulator.clone(),
            metrics,
        })
    }

    /// Change the number of worker slots. Running experiments are never
    /// interrupted; queued ones start as slots allow.
    pub fn pool_resize(&self, capacity: usize) -> Result<(), ExperimentError> {
        if capacity == 0 {
            return Err(ExperimentError::InvalidCapacity);
        }
        let mut sched = self.lock();
        sched.capacity = capacity;
        self.dispatch(&mut sched);
        self.inner.changed.notify_all();
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.lock().capacity
    }

    pub fn stats(&self) -> Stats {
        let sched = self.lock();
        Stats {
            capacity: sched.capacity,
            queue_length: sched.queue.len(),
            running: sched.active,
            completed: sched.completed,
            failed: sched.failed,
            stages: sched
                .stage_secs
                .iter()
                .map(|(name, v)| {
                    let timing = StageTiming {
                        count: v.len(),
                        mean_secs: v.iter().sum::<f64>() / v.len().max(1) as f64,
                        max_secs: v.iter().copied().fold(0.0, f64::max),
                    };
                    (name.to_string(), timing)
                })
                .collect(),
        }
    }

    /// Consistent view of all non-terminal experiments.
    pub fn queue(&self) -> QueueSnapshot {
        let sched = self.lock();
        let experiments = sched
            .order
            .iter()
            .filter_map(|id| {
                let t = sched.tracked.get(id)?;
                if t.status.is_terminal() {
                    return None;
                }
                Some(QueueEntry {
                    experiment_id: id.clone(),
                    status: t.status,
                    position: sched.queue.iter().position(|q| q == id),
                    submitter: t.config.submitter.clone(),
                    agent: t.config.agent.clone(),
                    simulator: t.config.simulator.clone(),
                    progress: t.progress,
                })
            })
            .collect();
        QueueSnapshot {
            capacity: sched.capacity,
            experiments,
        }
    }

    pub fn state(&self, id: &str) -> Result<ExperimentState, ExperimentError> {
        match self.inner.store.get_state(id) {
            Ok(s) => Ok(s),
            Err(StorageError::NotFound(_) | StorageError::InvalidKey(_)) => {
                Err(ExperimentError::NotFound(id.into()))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Block until `id` is terminal or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Result<ExperimentState, ExperimentError> {
        let deadline = Instant::now() + timeout;
        let mut sched = self.lock();
        loop {
            match sched.tracked.get(id) {
                None => return Err(ExperimentError::NotFound(id.into())),
                Some(t) if t.status.is_terminal() => {
                    drop(sched);
                    return self.state(id);
                }
                Some(_) => {}
            }
            let now = Instant::now();
            if now >= deadline {
                drop(sched);
                return self.state(id);
            }
            sched = self
                .inner
                .changed
                .wait_timeout(sched, deadline - now)
                .expect("scheduler lock")
                .0;
        }
    }

    /// Block until nothing is queued or active, or `timeout` passes.
    /// Returns whether the pool went idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut sched = self.lock();
        while !(sched.queue.is_empty() && sched.active == 0) {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            sched = self
                .inner
                .changed
                .wait_timeout(sched, deadline - now)
                .expect("scheduler lock")
                .0;
        }
        true
    }

    /// Stop accepting work. Queued experiments and running ones (at their
    /// next stage boundary or conversation) end FAILED("shutdown"); their
    /// systems are torn down and artifacts retained. Waits up to `timeout`
    /// for workers to finish.
    pub fn shutdown(&self, timeout: Duration) {
        self.inner.stop.store(true, Ordering::SeqCst);
        let queued: Vec<String> = {
            let mut sched = self.lock();
            sched.shutting_down = true;
            sched.queue.drain(..).collect()
        };
        for id in queued {
            if let Ok(mut state) = self.inner.store.get_state(&id) {
                if state.fail(SHUTDOWN_REASON).is_ok() {
                    let _ = self.inner.store.put_state(&state);
                    let mut sched = self.lock();
                    sched.failed += 1;
                    if let Some(t) = sched.tracked.get_mut(&id) {
                        t.status = Status::Failed;
                    }
                }
            }
        }
        self.inner.changed.notify_all();
        let idle = self.wait_idle(timeout);
        if !idle {
            tracing::error!("shutdown timed out with experiments still active");
        }
        let workers: Vec<JoinHandle<()>> = std::mem::take(&mut self.lock().workers)
            .into_values()
            .collect();
        if idle {
            for w in workers {
                let _ = w.join();
            }
        }
    }
}

#[derive(Default)]
struct Environment {
    agent: Option<RunningSystem>,
    simulator: Option<RunningSystem>,
}

impl Environment {
    fn systems(&self) -> impl Iterator<Item = &RunningSystem> {
        self.agent.iter().chain(self.simulator.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Limits;
    use crate::runner::LaunchSpec;

    fn setup(capacity: usize) -> (tempfile::TempDir, ExperimentManager) {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        let m = ExperimentManager::start(
            store,
            Arc::new(TaskRegistry::with_builtin()),
            Arc::new(Launcher::with_container_runtime(None)),
            ManagerOptions {
                capacity,
                ready_timeout: Duration::from_millis(300),
                ..Default::default()
            },
        )
        .unwrap();
        (dir, m)
    }

    fn register(m: &ExperimentManager, name: &str, role: Role, launch: LaunchSpec) {
        m.registry()
            .register(&SystemRecord::new(name, "1.0", role, launch, 8000))
            .unwrap();
    }

    fn config(agent: &str, sim: &str) -> ExperimentConfig {
        ExperimentConfig {
            experiment_id: String::new(),
            task: "movie_recommendation".into(),
            agent: SystemRef::new(agent, "1.0"),
            simulator: SystemRef::new(sim, "1.0"),
            num_needs: 2,
            seed: 1,
            limits: Limits::default(),
            submitter: "alice".into(),
            submitted_at: None,
        }
    }

    #[test]
    fn submit_validation() {
        let (_d, m) = setup(1);
        register(&m, "a", Role::Agent, LaunchSpec::process("true", &[]));
        register(&m, "s", Role::Simulator, LaunchSpec::process("true", &[]));
        assert!(matches!(
            m.submit(config("s", "s")),
            Err(ExperimentError::RoleMismatch { .. })
        ));
        assert!(matches!(
            m.submit(config("x", "s")),
            Err(ExperimentError::UnknownSystem(_))
        ));
        let mut c = config("a", "s");
        c.task = "chess".into();
        assert!(matches!(m.submit(c), Err(ExperimentError::UnknownTask(_))));
        let mut c = config("a", "s");
        c.num_needs = 0;
        assert!(matches!(
            m.submit(c),
            Err(ExperimentError::InvalidConfig(_))
        ));
        assert!(matches!(
            m.pool_resize(0),
            Err(ExperimentError::InvalidCapacity)
        ));
        assert_eq!(
            m.stats(),
            Stats {
                capacity: 1,
                ..Default::default()
            }
        );
    }

    #[test]
    fn unready_systems_fail_at_provisioning_with_cleanup() {
        let (_d, m) = setup(1);
        register(&m, "a", Role::Agent, LaunchSpec::process("sleep", &["30"]));
        register(
            &m,
            "s",
            Role::Simulator,
            LaunchSpec::process("sleep", &["30"]),
        );
        let ids: Vec<String> = (0..3)
            .map(|_| m.submit(config("a", "s")).unwrap())
            .collect();
        assert!(ids[0].starts_with("alice-000001-"));
        assert!(ids[2].starts_with("alice-000003-"));
        assert!(m.wait_idle(Duration::from_secs(20)));
        for id in &ids {
            let s = m.state(id).unwrap();
            assert_eq!(s.status, Status::Failed);
            assert_eq!(
                s.transitions[s.transitions.len() - 2].status,
                Status::Provisioning
            );
            assert!(m.store().list_conversations(id).unwrap().is_empty());
        }
        // FIFO start
        let starts: Vec<_> = ids
            .iter()
            .map(|id| m.state(id).unwrap().entered(Status::Provisioning).unwrap())
            .collect();
        assert!(starts.windows(2).all(|w| w[0] <= w[1]));
        assert!(m.launcher().live_handles().is_empty());
        let stats = m.stats();
        assert_eq!(
            (
                stats.failed,
                stats.completed,
                stats.queue_length,
                stats.running
            ),
            (3, 0, 0, 0)
        );
    }

    #[test]
    fn restart_marks_interrupted_and_requeues() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        let mut running = ExperimentState::queued("bob-000001-aaaa", 1);
        running.transition(Status::Provisioning).unwrap();
        let mut cfg = config("a", "s");
        cfg.submitter = "bob".into();
        cfg.experiment_id = running.experiment_id.clone();
        cfg.submitted_at = Some(Utc::now());
        store.put_config(&cfg).unwrap();
        store.put_state(&running).unwrap();

        let m = ExperimentManager::start(
            Arc::clone(&store),
            Arc::new(TaskRegistry::with_builtin()),
            Arc::new(Launcher::with_container_runtime(None)),
            ManagerOptions::default(),
        )
        .unwrap();
        let s = m.state("bob-000001-aaaa").unwrap();
        assert_eq!(s.status, Status::Failed);
        assert_eq!(s.failure_reason.as_deref(), Some("interrupted"));
        assert_eq!(m.stats().failed, 1);
        register(&m, "a", Role::Agent, LaunchSpec::process("sleep", &["30"]));
        register(
            &m,
            "s",
            Role::Simulator,
            LaunchSpec::process("sleep", &["30"]),
        );
        let mut c = config("a", "s");
        c.submitter = "bob".into();
        assert!(m.submit(c).unwrap().starts_with("bob-000002-"));
        m.shutdown(Duration::from_secs(10));
    }

    #[test]
    fn shutdown_fails_queued_work() {
        let (_d, m) = setup(1);
        register(&m, "a", Role::Agent, LaunchSpec::process("sleep", &["30"]));
        register(
            &m,
            "s",
            Role::Simulator,
            LaunchSpec::process("sleep", &["30"]),
        );
        let ids: Vec<String> = (0..3)
            .map(|_| m.submit(config("a", "s")).unwrap())
            .collect();
        m.shutdown(Duration::from_secs(10));
        for id in &ids {
            let s = m.state(id).unwrap();
            assert_eq!(s.status, Status::Failed, "{id}");
        }
        assert_eq!(
            m.state(&ids[2]).unwrap().failure_reason.as_deref(),
            Some("shutdown")
        );
        assert!(matches!(
            m.submit(config("a", "s")),
            Err(ExperimentError::ShuttingDown)
        ));
        assert!(m.launcher().live_handles().is_empty());
    }
}
