//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use common::*;
use simlab_cli::ApiClient;
use simlab_core::dialogue::Conversation;
use simlab_core::experiments::{ExperimentManager, ManagerOptions, Status};
use simlab_core::http::{HttpResponse, HttpServer};
use simlab_core::metrics::{oracle_classify, Label};
use simlab_core::protocol::conformance::check_conformance;
use simlab_core::protocol::{ProtocolClient, Role, StatusMessage, CONFIGURE};
use simlab_core::runner::{await_ready, Launcher};
use simlab_core::storage::Store;
use simlab_core::tasks::{Task, TaskRegistry, FED_CONSISTENCY, FED_UNDERSTANDING, SUCCESS_RATE};

const CONFORMANCE_BUDGET: Duration = Duration::from_secs(10);
const LIFECYCLE_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_TOLERANCE: f64 = 0.0;
const QUEUE_CAPACITY: usize = 2;
const QUEUE_EXPERIMENTS: usize = 5;
const GENERATED_NEEDS: usize = 1000;
const CLEANUP_GRACE: Duration = Duration::from_secs(2);
const KILL_INJECTIONS: usize = 3;

type Outcome = Result<String, String>;

/// Cleanup observations collected by every criterion that launches systems.
static CLEANUP: Mutex<Vec<String>> = Mutex::new(Vec::new());

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Record census and process-table state after `what` reached a terminal state.
fn observe_cleanup(what: &str, launcher: &Launcher, marker: &str) {
    let live = launcher.live_handles();
    let stray = no_marked_processes(marker, CLEANUP_GRACE)
        .err()
        .unwrap_or_default();
    let line = if live.is_empty() && stray.is_empty() {
        format!("ok {what}")
    } else {
        format!("LEAK {what}: census {live:?} processes {stray:?}")
    };
    CLEANUP.lock().unwrap().push(line);
}

fn conformance() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let launcher = Launcher::with_container_runtime(None);
    let m = marker();
    let client = ProtocolClient::new(Duration::from_secs(5));
    let mut checked = Vec::new();
    for (name, role, bin) in [
        ("ref-agent", Role::Agent, AGENT_BIN),
        ("ref-sim", Role::Simulator, SIM_BIN),
    ] {
        let rs = launcher
            .launch(&process_record(name, role, bin, &[], &m), dir.path())
            .map_err(|e| e.to_string())?;
        await_ready(&rs, Duration::from_secs(5)).map_err(|e| e.to_string())?;
        let report = check_conformance(&client, &rs.endpoint);
        rs.teardown().map_err(|e| e.to_string())?;
        ensure(report.passed(), format!("{name} failed:\n{report}"))?;
        checked.push(format!("{name} {} checks", report.checks.len()));
    }
    observe_cleanup("conformance", &launcher, &m);

    // acknowledges configure but answers utterances with a malformed body
    let stub = HttpServer::bind("127.0.0.1:0".parse().unwrap(), 2, |req| {
        if req.path == CONFIGURE {
            HttpResponse::json(200, &StatusMessage::ok())
        } else {
            HttpResponse::json(200, &serde_json::json!({"bogus": true}))
        }
    })
    .map_err(|e| e.to_string())?;
    let endpoint =
        simlab_core::protocol::SystemEndpoint::new(stub.local_addr().to_string(), Role::Agent);
    let report = check_conformance(&client, &endpoint);
    stub.shutdown();
    let violation = report
        .violation("receive_utterance.reply")
        .ok_or_else(|| format!("broken stub not flagged:\n{report}"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < CONFORMANCE_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{}; stub violation {} ({}); {elapsed:.2?}",
        checked.join(", "),
        violation.name,
        violation.detail
    ))
}

struct Finished {
    lab: Lab,
    id: String,
}

fn end_to_end(slot: &Mutex<Option<Finished>>) -> Outcome {
    let started = Instant::now();
    let lab = lab(2);
    let id = lab
        .manager
        .submit(config(20, 7))
        .map_err(|e| e.to_string())?;
    let state = lab
        .manager
        .wait(&id, LIFECYCLE_BUDGET)
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    observe_cleanup("end-to-end", lab.manager.launcher(), &lab.marker);
    ensure(
        state.status == Status::Done,
        format!("{:?} {:?}", state.status, state.failure_reason),
    )?;
    ensure(elapsed < LIFECYCLE_BUDGET, format!("took {elapsed:?}"))?;

    let store = lab.manager.store();
    let cfg = store.get_config(&id).map_err(|e| e.to_string())?;
    ensure(
        cfg.num_needs == 20 && cfg.seed == 7,
        "stored config differs",
    )?;
    let convs = store.list_conversations(&id).map_err(|e| e.to_string())?;
    ensure(convs.len() == 20, format!("{} conversations", convs.len()))?;
    for c in &convs {
        c.check_invariants(cfg.limits.max_turns)
            .map_err(|e| format!("{}: {e}", c.id))?;
    }
    let results = store.get_results(&id).map_err(|e| e.to_string())?;
    for m in [SUCCESS_RATE, FED_UNDERSTANDING, FED_CONSISTENCY] {
        let r = results.metric(m).ok_or_else(|| format!("missing {m}"))?;
        ensure(
            r.aggregate.count == 20,
            format!("{m} over {} conversations", r.aggregate.count),
        )?;
    }
    let detail = format!(
        "{id} DONE in {elapsed:.2?}; success_rate {:.3}",
        results.metric(SUCCESS_RATE).unwrap().aggregate.mean
    );
    *slot.lock().unwrap() = Some(Finished { lab, id });
    Ok(detail)
}

fn oracle_equivalence(slot: &Mutex<Option<Finished>>) -> Outcome {
    let guard = slot.lock().unwrap();
    let Finished { lab, id } = guard.as_ref().ok_or("end-to-end run unavailable")?;
    let store = lab.manager.store();
    let items = raw_catalog(MOVIES_TSV);
    let convs = store.list_conversations(id).map_err(|e| e.to_string())?;
    let hits = convs
        .iter()
        .filter(|c| brute_force_success(c, &items))
        .count();
    let scan = hits as f64 / convs.len() as f64;
    let reported = store
        .get_results(id)
        .map_err(|e| e.to_string())?
        .metric(SUCCESS_RATE)
        .ok_or("missing success_rate")?
        .aggregate
        .mean;
    ensure(
        (reported - scan).abs() <= ORACLE_TOLERANCE,
        format!("reported {reported} vs scan {scan}"),
    )?;
    // every transcript prefix, which includes failing conversations
    let catalog = simlab_core::tasks::Catalog::builtin_movies();
    let (mut prefixes, mut failing) = (0, 0);
    for c in &convs {
        for len in 0..=c.utterances.len() {
            let mut cut = c.clone();
            cut.utterances.truncate(len);
            let oracle = oracle_classify(&cut, &cut.need, &catalog) == Label::Success;
            let scan = brute_force_success(&cut, &items);
            ensure(
                oracle == scan,
                format!("{} prefix {len}: oracle {oracle}, scan {scan}", c.id),
            )?;
            prefixes += 1;
            failing += usize::from(!scan);
        }
    }
    Ok(format!(
        "{hits}/{} both ways, success_rate {reported}; {prefixes} prefixes agree ({failing} failing)",
        convs.len()
    ))
}

fn reproducibility() -> Outcome {
    let lab = lab(2);
    let a = lab
        .manager
        .submit(config(20, 7))
        .map_err(|e| e.to_string())?;
    let b = lab
        .manager
        .submit(config(20, 7))
        .map_err(|e| e.to_string())?;
    for id in [&a, &b] {
        let s = lab
            .manager
            .wait(id, LIFECYCLE_BUDGET)
            .map_err(|e| e.to_string())?;
        ensure(
            s.status == Status::Done,
            format!("{id} {:?}", s.failure_reason),
        )?;
    }
    observe_cleanup("reproducibility", lab.manager.launcher(), &lab.marker);
    let store = lab.manager.store();
    let norm = |id: &str| -> Result<Vec<Conversation>, String> {
        Ok(store
            .list_conversations(id)
            .map_err(|e| e.to_string())?
            .iter()
            .enumerate()
            .map(|(i, c)| normalized(c, i))
            .collect())
    };
    let (ca, cb) = (norm(&a)?, norm(&b)?);
    ensure(ca.len() == 20 && ca == cb, "transcripts differ")?;
    let (ra, rb) = (
        store.get_results(&a).map_err(|e| e.to_string())?,
        store.get_results(&b).map_err(|e| e.to_string())?,
    );
    let aggregates = |r: &simlab_core::storage::ResultsDocument| {
        r.metrics
            .iter()
            .map(|m| (m.metric_name.clone(), m.aggregate))
            .collect::<Vec<_>>()
    };
    ensure(aggregates(&ra) == aggregates(&rb), "aggregates differ")?;
    let turns: usize = ca.iter().map(|c| c.utterances.len()).sum();
    Ok(format!(
        "20 transcripts ({turns} utterances) and {} aggregates equal",
        ra.metrics.len()
    ))
}

fn queue_semantics() -> Outcome {
    let lab = lab(QUEUE_CAPACITY);
    let ids: Vec<String> = (0..QUEUE_EXPERIMENTS as u64)
        .map(|i| lab.manager.submit(config(6, i)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(120);
    let (mut samples, mut max_active) = (0usize, 0usize);
    loop {
        let snap = lab.manager.queue();
        let active = snap
            .experiments
            .iter()
            .filter(|e| e.status.is_active())
            .count();
        max_active = max_active.max(active);
        samples += 1;
        if snap.experiments.is_empty() {
            break;
        }
        ensure(Instant::now() < deadline, "queue did not drain")?;
        std::thread::sleep(Duration::from_millis(1));
    }
    ensure(
        lab.manager.wait_idle(Duration::from_secs(30)),
        "manager not idle",
    )?;
    observe_cleanup("queue", lab.manager.launcher(), &lab.marker);
    ensure(
        max_active <= QUEUE_CAPACITY,
        format!("{max_active} active at once"),
    )?;

    let mut entered = Vec::new();
    for id in &ids {
        let s = lab.manager.state(id).map_err(|e| e.to_string())?;
        ensure(
            s.status == Status::Done,
            format!("{id} {:?} {:?}", s.status, s.failure_reason),
        )?;
        entered.push(
            s.entered(Status::Provisioning)
                .ok_or(format!("{id} never provisioned"))?,
        );
    }
    ensure(
        entered.windows(2).all(|w| w[0] <= w[1]),
        format!("provisioning order {entered:?}"),
    )?;
    Ok(format!(
        "max {max_active} active over {samples} samples; provisioning in submission order; all {QUEUE_EXPERIMENTS} DONE"
    ))
}

fn need_generator() -> Outcome {
    let task = Task::movie_recommendation();
    let items = raw_catalog(MOVIES_TSV);
    let needs = task
        .generate_needs(GENERATED_NEEDS, 42)
        .map_err(|e| e.to_string())?;
    ensure(needs.len() == GENERATED_NEEDS, "wrong count")?;
    let mut smallest = usize::MAX;
    for (i, need) in needs.iter().enumerate() {
        let n = brute_force_matches(need, &items).len();
        ensure(n > 0, format!("need {i} unsatisfiable: {need:?}"))?;
        smallest = smallest.min(n);
    }
    let again = task
        .generate_needs(GENERATED_NEEDS, 42)
        .map_err(|e| e.to_string())?;
    ensure(needs == again, "same seed gave different needs")?;
    let other = task
        .generate_needs(GENERATED_NEEDS, 43)
        .map_err(|e| e.to_string())?;
    ensure(needs != other, "different seeds gave identical needs")?;
    Ok(format!(
        "{GENERATED_NEEDS} needs over {} items all satisfiable (min {smallest} matches); seed-deterministic",
        items.len()
    ))
}

fn cleanup() -> Outcome {
    // injected crash: the agent is killed once mid-run and relaunched
    let crash = lab(1);
    let id = crash
        .manager
        .submit(config(60, 3))
        .map_err(|e| e.to_string())?;
    wait_for_progress(&crash.manager, &id, 2)?;
    let pid = census_pid(&crash.manager.launcher().live_handles(), "ref-agent")
        .ok_or("agent not in census")?;
    unsafe {
        libc::kill(pid as i32, libc::SIGKILL);
    }
    let s = crash
        .manager
        .wait(&id, LIFECYCLE_BUDGET)
        .map_err(|e| e.to_string())?;
    ensure(s.status.is_terminal(), "crash run did not finish")?;
    observe_cleanup("injected crash", crash.manager.launcher(), &crash.marker);

    // injected failure during provisioning
    let failing = lab(1);
    failing
        .manager
        .registry()
        .register(&process_record(
            "broken-sim",
            Role::Simulator,
            "/nonexistent/simulator",
            &[],
            &failing.marker,
        ))
        .map_err(|e| e.to_string())?;
    let mut cfg = config(3, 1);
    cfg.simulator = simlab_core::dialogue::SystemRef::new("broken-sim", "1.0");
    let id = failing.manager.submit(cfg).map_err(|e| e.to_string())?;
    let s = failing
        .manager
        .wait(&id, LIFECYCLE_BUDGET)
        .map_err(|e| e.to_string())?;
    ensure(s.status == Status::Failed, "broken simulator did not fail")?;
    observe_cleanup(
        "provisioning failure",
        failing.manager.launcher(),
        &failing.marker,
    );

    // shutdown with one running and one queued experiment
    let down = lab(1);
    let running = down
        .manager
        .submit(config(400, 2))
        .map_err(|e| e.to_string())?;
    down.manager
        .submit(config(5, 2))
        .map_err(|e| e.to_string())?;
    wait_for_progress(&down.manager, &running, 2)?;
    down.manager.shutdown(Duration::from_secs(30));
    observe_cleanup("shutdown", down.manager.launcher(), &down.marker);

    let lines = CLEANUP.lock().unwrap().clone();
    let leaks: Vec<&String> = lines.iter().filter(|l| l.starts_with("LEAK")).collect();
    ensure(leaks.is_empty(), format!("{leaks:?}"))?;
    Ok(format!(
        "census and process table empty after {} terminal paths",
        lines.len()
    ))
}

fn wait_for_progress(manager: &ExperimentManager, id: &str, n: usize) -> Result<(), String> {
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let s = manager.state(id).map_err(|e| e.to_string())?;
        if s.progress.completed >= n {
            return Ok(());
        }
        ensure(
            !s.status.is_terminal(),
            format!("{id} ended early: {:?}", s.failure_reason),
        )?;
        ensure(Instant::now() < deadline, format!("{id} made no progress"))?;
        std::thread::sleep(Duration::from_millis(2));
    }
}

/// Start `simlab serve`, run one experiment and SIGKILL the service while
/// conversations are being written. Returns the data directory's document count.
fn kill_injection(round: usize) -> Result<usize, String> {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let m = marker();
    let mut child = Command::new(SIMLAB_BIN)
        .args(["serve", "--port", "0", "--max-workers", "1", "--data-dir"])
        .arg(&data)
        .env("SIMLAB_API_TOKEN", "acceptance")
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or("no listening line")?
        .to_string();
    let api = ApiClient::new(&url, Some("acceptance".into()));
    api.register_system(&process_record(
        "ref-agent",
        Role::Agent,
        AGENT_BIN,
        &[],
        &m,
    ))
    .map_err(|e| e.to_string())?;
    api.register_system(&process_record(
        "ref-sim",
        Role::Simulator,
        SIM_BIN,
        &[],
        &m,
    ))
    .map_err(|e| e.to_string())?;
    let id = api
        .submit(&config(2000, round as u64))
        .map_err(|e| e.to_string())?;

    let target = 3 + 7 * round as u64;
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let v = api.status(&id).map_err(|e| e.to_string())?;
        if v["state"]["progress"]["completed"].as_u64().unwrap_or(0) >= target {
            break;
        }
        ensure(Instant::now() < deadline, "no progress before kill")?;
        std::thread::sleep(Duration::from_millis(1));
    }
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;

    let stray = no_marked_processes(&m, CLEANUP_GRACE)
        .err()
        .unwrap_or_default();
    CLEANUP.lock().unwrap().push(if stray.is_empty() {
        format!("ok kill injection {round}")
    } else {
        format!("LEAK kill injection {round}: processes {stray:?}")
    });

    let docs = json_documents(&data);
    for path in &docs {
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        serde_json::from_slice::<serde_json::Value>(&bytes)
            .map_err(|e| format!("{} does not parse: {e}", path.display()))?;
    }
    let store = Arc::new(Store::open(&data).map_err(|e| e.to_string())?);
    let leftovers = temp_files(&data);
    ensure(
        leftovers.is_empty(),
        format!("temporary files survive reopen: {leftovers:?}"),
    )?;
    store.get_config(&id).map_err(|e| e.to_string())?;
    store.get_needs(&id).map_err(|e| e.to_string())?;
    let convs = store.list_conversations(&id).map_err(|e| e.to_string())?;
    ensure(
        convs.len() as u64 >= target,
        format!("only {} conversations stored", convs.len()),
    )?;
    ensure(
        store.quarantined().map_err(|e| e.to_string())?.is_empty(),
        "artifacts quarantined",
    )?;

    let manager = ExperimentManager::start(
        Arc::clone(&store),
        Arc::new(TaskRegistry::with_builtin()),
        Arc::new(Launcher::with_container_runtime(None)),
        ManagerOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let s = manager.state(&id).map_err(|e| e.to_string())?;
    ensure(
        s.status == Status::Failed && s.failure_reason.as_deref() == Some("interrupted"),
        format!("after restart {:?} {:?}", s.status, s.failure_reason),
    )?;
    manager.shutdown(Duration::from_secs(5));
    Ok(docs.len())
}

fn temp_files(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            if entry.path().is_dir() {
                stack.push(entry.path());
            } else if entry.file_name().to_string_lossy().starts_with(".tmp-") {
                out.push(entry.path());
            }
        }
    }
    out
}

fn crash_safety() -> Outcome {
    let mut counts = Vec::new();
    for round in 0..KILL_INJECTIONS {
        counts.push(kill_injection(round).map_err(|e| format!("round {round}: {e}"))?);
    }
    Ok(format!(
        "{KILL_INJECTIONS} kills while running; documents parsed per round {counts:?}; restart marks interrupted"
    ))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    // libtest-style arguments are accepted and ignored
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let e2e = Mutex::new(None);
    let results = [
        run("protocol conformance", conformance),
        run("end-to-end lifecycle", || end_to_end(&e2e)),
        run("oracle equivalence", || oracle_equivalence(&e2e)),
        run("reproducibility", reproducibility),
        run("queue semantics", queue_semantics),
        run("need generator", need_generator),
        run("crash safety", crash_safety),
        run("cleanup", cleanup),
    ];
    if results.iter().all(|ok| *ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
