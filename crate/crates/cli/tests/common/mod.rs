#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use simlab_core::dialogue::{Conversation, Limits, SystemRef};
use simlab_core::experiments::{ExperimentConfig, ExperimentManager, ManagerOptions};
use simlab_core::protocol::{InformationNeed, Role};
use simlab_core::runner::{LaunchSpec, Launcher, SystemRecord};
use simlab_core::storage::Store;
use simlab_core::tasks::{TaskRegistry, MOVIE_TASK};

pub const AGENT_BIN: &str = env!("CARGO_BIN_EXE_simlab-ref-agent");
pub const SIM_BIN: &str = env!("CARGO_BIN_EXE_simlab-ref-simulator");
pub const SIMLAB_BIN: &str = env!("CARGO_BIN_EXE_simlab");

/// Raw bundled catalog, parsed independently of the core crate.
pub const MOVIES_TSV: &str = include_str!("../../../core/data/movies.tsv");

pub const MARKER_ENV: &str = "SIMLAB_TEST_MARKER";

/// A data directory with a manager and the reference pair registered as
/// `ref-agent@1.0` and `ref-sim@1.0`. Every launched system carries a
/// unique marker in its environment so leftover processes can be found.
pub struct Lab {
    pub dir: tempfile::TempDir,
    pub manager: ExperimentManager,
    pub marker: String,
}

pub fn marker() -> String {
    format!("simlab-test-{:016x}", rand::random::<u64>())
}

pub fn process_record(
    name: &str,
    role: Role,
    command: &str,
    args: &[&str],
    marker: &str,
) -> SystemRecord {
    let mut launch = LaunchSpec::process(command, args);
    launch
        .process
        .as_mut()
        .unwrap()
        .env
        .insert(MARKER_ENV.into(), marker.into());
    SystemRecord::new(name, "1.0", role, launch, 8000)
}

pub fn lab(capacity: usize) -> Lab {
    lab_with(capacity, ManagerOptions::default())
}

pub fn lab_with(capacity: usize, options: ManagerOptions) -> Lab {
    let dir = tempfile::tempdir().unwrap();
    let marker = marker();
    let manager = ExperimentManager::start(
        Arc::new(Store::open(dir.path()).unwrap()),
        Arc::new(TaskRegistry::with_builtin()),
        Arc::new(Launcher::with_container_runtime(None)),
        ManagerOptions {
            capacity,
            ..options
        },
    )
    .unwrap();
    let reg = manager.registry();
    reg.register(&process_record(
        "ref-agent",
        Role::Agent,
        AGENT_BIN,
        &[],
        &marker,
    ))
    .unwrap();
    reg.register(&process_record(
        "ref-sim",
        Role::Simulator,
        SIM_BIN,
        &[],
        &marker,
    ))
    .unwrap();
    Lab {
        dir,
        manager,
        marker,
    }
}

pub fn config(num_needs: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: String::new(),
        task: MOVIE_TASK.into(),
        agent: SystemRef::new("ref-agent", "1.0"),
        simulator: SystemRef::new("ref-sim", "1.0"),
        num_needs,
        seed,
        limits: Limits {
            max_turns: 10,
            call_timeout_secs: 10.0,
        },
        submitter: "tester".into(),
        submitted_at: None,
    }
}

/// Pids of live processes whose environment contains `marker`.
pub fn marked_processes(marker: &str) -> Vec<u32> {
    let needle = format!("{MARKER_ENV}={marker}");
    let Ok(entries) = fs::read_dir("/proc") else {
        return Vec::new();
    };
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.parse::<u32>().ok())
        .filter(|pid| {
            let state = fs::read_to_string(format!("/proc/{pid}/stat")).unwrap_or_default();
            // zombies are dead already
            let zombie = state
                .rsplit(')')
                .next()
                .is_some_and(|r| r.trim_start().starts_with('Z'));
            !zombie
                && fs::read(format!("/proc/{pid}/environ"))
                    .map(|env| env.split(|b| *b == 0).any(|kv| kv == needle.as_bytes()))
                    .unwrap_or(false)
        })
        .collect()
}

/// Wait up to `timeout` for marked processes to disappear.
pub fn no_marked_processes(marker: &str, timeout: Duration) -> Result<(), Vec<u32>> {
    let deadline = std::time::Instant::now() + timeout;
    loop {
        let pids = marked_processes(marker);
        if pids.is_empty() {
            return Ok(());
        }
        if std::time::Instant::now() >= deadline {
            return Err(pids);
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Pid from a launcher census label such as `process ref-agent@1.0 pid 42`.
pub fn census_pid(labels: &[String], system: &str) -> Option<u32> {
    labels
        .iter()
        .find(|l| l.contains(system))
        .and_then(|l| l.rsplit(' ').next())
        .and_then(|p| p.parse().ok())
}

pub struct RawItem {
    pub title: String,
    pub attrs: BTreeMap<&'static str, Vec<String>>,
}

/// Parse the catalog TSV by hand: `item_id, title, genres, year, actors,
/// keywords, runtime` with `|`-separated lists.
pub fn raw_catalog(tsv: &str) -> Vec<RawItem> {
    tsv.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            let list = |s: &str| -> Vec<String> {
                s.split('|')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(str::to_string)
                    .collect()
            };
            let mut attrs = BTreeMap::new();
            attrs.insert("genre", list(cols[2]));
            attrs.insert("year", vec![cols[3].trim().to_string()]);
            attrs.insert("actors", list(cols[4]));
            attrs.insert("keywords", list(cols[5]));
            attrs.insert("runtime", vec![cols[6].trim().to_string()]);
            RawItem {
                title: cols[1].trim().to_string(),
                attrs,
            }
        })
        .collect()
}

pub fn brute_force_matches<'a>(need: &InformationNeed, items: &'a [RawItem]) -> Vec<&'a RawItem> {
    items
        .iter()
        .filter(|item| {
            need.constraints.iter().all(|(attr, accepted)| {
                item.attrs.get(attr.as_str()).is_some_and(|values| {
                    values.iter().any(|v| {
                        accepted
                            .iter()
                            .any(|a| a.trim().to_lowercase() == v.to_lowercase())
                    })
                })
            })
        })
        .collect()
}

/// Success scan over a transcript: some matching item is named by the
/// agent and every value of each requested attribute appears in agent text
/// from that mention on.
pub fn brute_force_success(conversation: &Conversation, items: &[RawItem]) -> bool {
    let agent_text: String = conversation
        .utterances
        .iter()
        .filter(|u| u.participant == Role::Agent)
        .map(|u| u.text.to_lowercase())
        .collect::<Vec<_>>()
        .join("\n");
    brute_force_matches(&conversation.need, items)
        .into_iter()
        .any(|item| {
            let Some(pos) = agent_text.find(&item.title.to_lowercase()) else {
                return false;
            };
            let tail = &agent_text[pos..];
            conversation.need.requested.iter().all(|attr| {
                item.attrs
                    .get(attr.as_str())
                    .is_some_and(|values| values.iter().all(|v| tail.contains(&v.to_lowercase())))
            })
        })
}

/// Every `.json` document under `root` (temporary files excluded).
pub fn json_documents(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if p.is_dir() {
                stack.push(p);
            } else if name.ends_with(".json") && !name.starts_with(".tmp-") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Conversation with its experiment-specific id replaced by its index and
/// timestamps removed.
pub fn normalized(conversation: &Conversation, index: usize) -> Conversation {
    let mut c = conversation.without_timestamps();
    c.id = format!("c{index:04}");
    c
}
