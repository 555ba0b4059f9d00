//! External task protocol: the table is written to a temporary CSV, the
//! command runs as `command <csv-path>`, and the last non-empty stdout line
//! is the utility.

use std::io::Read;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{check_utility, TaskResult, UtilityTask};
use crate::error::{Error, Result};
use crate::repository::Table;

pub const DEFAULT_TIMEOUT_SECS: u64 = 120;

#[derive(Clone, Debug)]
pub struct ExternalTask {
    pub command: String,
    pub target: Option<String>,
    pub timeout: Duration,
}

impl ExternalTask {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalTask {
            command: command.into(),
            target: None,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
        }
    }
}

fn parse_output(stdout: &str) -> Result<f64> {
    let line = stdout
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .ok_or_else(|| Error::TaskFailure("external task printed nothing".into()))?;
    let u: f64 = line
        .parse()
        .map_err(|_| Error::TaskFailure(format!("unparseable external output {line:?}")))?;
    check_utility(u).map_err(|_| Error::TaskFailure(format!("external utility {u} out of range")))
}

/// Runs `command <csv>` on a temporary copy of `table`.
pub fn external_utility(command: &str, table: &Table, timeout: Duration) -> Result<f64> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let path = dir.path().join("table.csv");
    table.write_csv(&path)?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(format!("{command} \"$1\""))
        .arg("sh")
        .arg(&path)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::TaskFailure(format!("cannot start {command}: {e}")))?;
    let mut out = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = out.read_to_string(&mut s);
        s
    });
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::TaskFailure(format!("external task timed out after {timeout:?}")));
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(Error::TaskFailure(format!("waiting for external task: {e}"))),
        }
    };
    let stdout = reader.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::TaskFailure(format!("external task exited with {status}")));
    }
    parse_output(&stdout)
}

impl UtilityTask for ExternalTask {
    fn name(&self) -> &str {
        "external"
    }

    fn target_column(&self) -> Option<&str> {
        self.target.as_deref()
    }

    fn evaluate(&self, table: &Table) -> Result<TaskResult> {
        let u = external_utility(&self.command, table, self.timeout)?;
        Ok(TaskResult::new(u).with("command", &self.command))
    }
}
