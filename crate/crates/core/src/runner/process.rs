use std::fs::OpenOptions;
use std::path::Path;
use std::process::{Child, Command, Stdio};

use super::record::ProcessSpec;
use super::RunnerError;

/// Start `spec` with stdout and stderr appended to `log`.
pub(super) fn spawn(
    system: &str,
    spec: &ProcessSpec,
    host_port: u16,
    log: &Path,
) -> Result<Child, RunnerError> {
    let spawn_failure = |detail: String| RunnerError::SpawnFailure {
        system: system.to_string(),
        detail,
    };
    let out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(log)
        .map_err(|e| spawn_failure(format!("log file {}: {e}", log.display())))?;
    let err = out.try_clone().map_err(|e| spawn_failure(e.to_string()))?;

    let mut cmd = Command::new(&spec.command);
    cmd.args(&spec.args)
        .envs(&spec.env)
        .env("SIMLAB_PORT", host_port.to_string())
        .stdin(Stdio::null())
        .stdout(out)
        .stderr(err);
    #[cfg(target_os = "linux")]
    {
        use std::os::unix::process::CommandExt;
        // Kill the child if the spawning thread goes away without teardown.
        unsafe {
            cmd.pre_exec(|| {
                libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL);
                Ok(())
            });
        }
    }
    cmd.spawn()
        .map_err(|e| spawn_failure(format!("{}: {e}", spec.command)))
}

/// Kill and reap. Already-exited children are fine.
pub(super) fn stop(child: &mut Child) -> std::io::Result<()> {
    if child.try_wait()?.is_none() {
        match child.kill() {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::InvalidInput => {}
            Err(e) => return Err(e),
        }
    }
    child.wait().map(|_| ())
}
