//! Run directories: output root, per-run lock and manifests.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "SYNPROBE_OUT";
const DEFAULT_ROOT: &str = "runs";
const LOCK_FILE: &str = ".lock";

/// `git describe`-style version fixed at build time.
pub const VERSION: &str = env!("SYNPROBE_VERSION");

/// `--run-dir` if given, else `$SYNPROBE_OUT/seed-<seed>` (root `runs`).
pub fn run_dir(explicit: Option<&Path>, seed: u64) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from);
            root.join(format!("seed-{seed}"))
        }
    }
}

/// Exclusive lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> CliResult<RunLock> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("cannot create run directory {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::data(format!(
                "run directory {} is locked by another run (remove {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::data(format!("cannot lock {}: {e}", dir.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    version: String,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
}

/// Writes `manifest-<command>.json` into `dir`; called before any long
/// computation starts.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> CliResult<PathBuf> {
    let m = Manifest {
        command,
        args: std::env::args().skip(1).collect(),
        version: VERSION.to_string(),
        seed: cfg.experiment.seed,
        config_hash: cfg.hash(),
        config: cfg,
    };
    let path = dir.join(format!("manifest-{command}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        let e = RunLock::acquire(dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        drop(a);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn version_is_describe_style() {
        assert!(VERSION.starts_with('v'));
    }
}
