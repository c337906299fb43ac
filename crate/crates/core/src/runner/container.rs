use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use super::record::ContainerSpec;
use super::RunnerError;

/// Environment variable naming the container runtime binary.
pub const RUNTIME_ENV: &str = "SIMLAB_CONTAINER_RUNTIME";

/// `$SIMLAB_CONTAINER_RUNTIME`, else `docker` or `podman` on `PATH`.
pub fn detect_runtime() -> Option<PathBuf> {
    if let Some(v) = env::var_os(RUNTIME_ENV).filter(|v| !v.is_empty()) {
        let p = PathBuf::from(&v);
        return if p.components().count() > 1 {
            Some(p)
        } else {
            find_on_path(&v.to_string_lossy())
        };
    }
    ["docker", "podman"]
        .iter()
        .find_map(|name| find_on_path(name))
}

fn find_on_path(name: &str) -> Option<PathBuf> {
    let path = env::var_os("PATH")?;
    env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|p| p.is_file())
}

fn run(runtime: &Path, args: &[String]) -> std::io::Result<Output> {
    Command::new(runtime)
        .args(args)
        .stdin(Stdio::null())
        .output()
}

pub(super) fn start(
    runtime: &Path,
    system: &str,
    name: &str,
    spec: &ContainerSpec,
    host_port: u16,
    container_port: u16,
) -> Result<(), RunnerError> {
    let mut args: Vec<String> = vec![
        "run".into(),
        "-d".into(),
        "--name".into(),
        name.into(),
        "-p".into(),
        format!("127.0.0.1:{host_port}:{container_port}"),
        "-e".into(),
        format!("SIMLAB_PORT={container_port}"),
    ];
    for (k, v) in &spec.env {
        args.push("-e".into());
        args.push(format!("{k}={v}"));
    }
    args.push(spec.image.clone());
    let failure = |detail: String| RunnerError::SpawnFailure {
        system: system.to_string(),
        detail,
    };
    let out = run(runtime, &args).map_err(|e| failure(format!("{}: {e}", runtime.display())))?;
    if !out.status.success() {
        // a failed `run` may still leave a created container behind
        let _ = run(runtime, &["rm".into(), "-f".into(), name.into()]);
        return Err(failure(
            String::from_utf8_lossy(&out.stderr).trim().to_string(),
        ));
    }
    Ok(())
}

pub(super) fn is_running(runtime: &Path, name: &str) -> bool {
    let args = [
        "inspect".into(),
        "-f".into(),
        "{{.State.Running}}".into(),
        name.into(),
    ];
    run(runtime, &args)
        .map(|o| o.status.success() && String::from_utf8_lossy(&o.stdout).trim() == "true")
        .unwrap_or(false)
}

/// Save the container's output to `log`, then force-remove it.
pub(super) fn remove(runtime: &Path, name: &str, log: &Path) -> Result<(), String> {
    if let Ok(out) = run(runtime, &["logs".into(), name.into()]) {
        let mut bytes = out.stdout;
        bytes.extend_from_slice(&out.stderr);
        let _ = fs::write(log, bytes);
    }
    let out = run(runtime, &["rm".into(), "-f".into(), name.into()]).map_err(|e| e.to_string())?;
    if out.status.success() {
        return Ok(());
    }
    let stderr = String::from_utf8_lossy(&out.stderr);
    if stderr.to_lowercase().contains("no such container") {
        Ok(())
    } else {
        Err(stderr.trim().to_string())
    }
}
