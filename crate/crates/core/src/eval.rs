//! Candidate splicing, sandboxed driver execution, and pass@k aggregation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkTask;
use crate::error::{Error, Result};
use crate::pyast::{self, PySource};

/// Unbiased pass@k: `1 - C(n-c, k) / C(n, k)` in product form.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n || k == 0 || k > n {
        return Err(Error::Domain(format!(
            "pass@k needs 0 <= c <= n and 1 <= k <= n (n={n}, c={c}, k={k})"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut prod = 1.0;
    for i in (n - c + 1)..=n {
        prod *= 1.0 - k as f64 / i as f64;
    }
    Ok(1.0 - prod)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Timeout,
    Crash,
    SetupError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub task_id: String,
    pub sample_index: usize,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: Status,
    pub wall_ms: u64,
    #[serde(default)]
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub stdout_tail: String,
    #[serde(default)]
    pub stderr_tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub task_id: String,
    pub sample_index: usize,
    pub status: Status,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub drivers: Vec<(String, Outcome)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Proc,
    Container { image: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub wall_s: f64,
    pub mem_mb: u64,
    pub no_network: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            wall_s: 10.0,
            mem_mb: 512,
            no_network: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandbox {
    pub backend: Backend,
    pub limits: Limits,
    pub python: String,
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox {
            backend: Backend::Proc,
            limits: Limits::default(),
            python: "python3".into(),
        }
    }
}

pub const DRIVER_DIR: &str = "_drivers";
const TAIL_BYTES: u64 = 4096;

/// Isolated directory holding the task's files (target possibly replaced)
/// and its drivers. Removed on drop.
pub struct Workspace {
    dir: tempfile::TempDir,
    pub drivers: Vec<(String, PathBuf)>,
}

impl Workspace {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

/// Replace the target's definition in its module with `code`, re-indented to
/// the original definition column.
pub fn splice_source(task: &BenchmarkTask, code: &str) -> std::result::Result<String, String> {
    let parsed = PySource::parse(code);
    if code.trim().is_empty() || parsed.has_error() {
        return Err("parse".into());
    }
    let def = parsed
        .root()
        .named_children(&mut parsed.root().walk())
        .find_map(|n| pyast::unwrap_decorated(n).filter(|d| d.kind() == "function_definition"))
        .ok_or_else(|| "parse".to_string())?;
    let name = def
        .child_by_field_name("name")
        .map(|n| parsed.node_text(n))
        .unwrap_or_default();
    if name != task.target.name {
        return Err("name mismatch".into());
    }
    let module = task
        .files
        .get(&task.target.module_path)
        .ok_or_else(|| format!("module {} missing from task files", task.target.module_path))?;
    let lines: Vec<&str> = module.split_inclusive('\n').collect();
    let (start, end) = (task.target.span_start, task.target.span_end);
    if start == 0 || end < start || end > lines.len() {
        return Err("target span outside module".into());
    }
    let indent: String = lines[start - 1].chars().take_while(|c| c.is_whitespace() && *c != '\n').collect();
    let min_indent = code
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let body = pyast::indent_all(&pyast::dedent_all(code.trim_end_matches('\n'), min_indent), &indent);
    let mut out = String::new();
    for l in &lines[..start - 1] {
        out.push_str(l);
    }
    out.push_str(&body);
    out.push('\n');
    for l in &lines[end..] {
        out.push_str(l);
    }
    Ok(out)
}

fn write_file(root: &Path, rel: &str, text: &str) -> Result<()> {
    let p = root.join(rel);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

/// Build a workspace; `code = None` keeps the reference implementation.
/// `Ok(Err(reason))` is a setup error attributable to the candidate.
pub fn build_workspace(task: &BenchmarkTask, code: Option<&str>) -> Result<std::result::Result<Workspace, String>> {
    let spliced = match code {
        Some(c) => match splice_source(task, c) {
            Ok(s) => Some(s),
            Err(reason) => return Ok(Err(reason)),
        },
        None => None,
    };
    let dir = tempfile::Builder::new()
        .prefix("callerkit-ws-")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    for (rel, text) in &task.files {
        if *rel == task.target.module_path {
            if let Some(s) = &spliced {
                write_file(dir.path(), rel, s)?;
                continue;
            }
        }
        write_file(dir.path(), rel, text)?;
    }
    let mut drivers = Vec::new();
    for d in &task.drivers {
        let rel = format!("{DRIVER_DIR}/{}", d.path);
        write_file(dir.path(), &rel, &d.text)?;
        drivers.push((d.path.clone(), dir.path().join(rel)));
    }
    Ok(Ok(Workspace { dir, drivers }))
}

fn tail(mut f: File) -> String {
    let len = f.seek(SeekFrom::End(0)).unwrap_or(0);
    let _ = f.seek(SeekFrom::Start(len.saturating_sub(TAIL_BYTES)));
    let mut buf = Vec::new();
    let _ = f.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

fn python_path(ws: &Path) -> String {
    let src = ws.join("src");
    if src.is_dir() {
        format!("{}:{}", ws.display(), src.display())
    } else {
        ws.display().to_string()
    }
}

fn proc_command(ws: &Path, driver: &Path, sandbox: &Sandbox) -> Command {
    let mut cmd = Command::new(&sandbox.python);
    cmd.arg(driver)
        .current_dir(ws)
        .env("PYTHONPATH", python_path(ws))
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0");
    let mem = sandbox.limits.mem_mb.saturating_mul(1024 * 1024);
    let cpu = sandbox.limits.wall_s.ceil() as u64 + 1;
    let no_net = sandbox.limits.no_network;
    // SAFETY: only async-signal-safe libc calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            libc::setsid();
            let as_lim = libc::rlimit { rlim_cur: mem, rlim_max: mem };
            libc::setrlimit(libc::RLIMIT_AS, &as_lim);
            let cpu_lim = libc::rlimit { rlim_cur: cpu, rlim_max: cpu };
            libc::setrlimit(libc::RLIMIT_CPU, &cpu_lim);
            if no_net {
                // best effort: needs CAP_SYS_ADMIN
                libc::unshare(libc::CLONE_NEWNET);
            }
            Ok(())
        });
    }
    cmd
}

fn container_command(ws: &Path, driver: &Path, sandbox: &Sandbox, image: &str, name: &str) -> Command {
    let rel = driver.strip_prefix(ws).unwrap_or(driver);
    let mut cmd = Command::new("docker");
    cmd.args(["run", "--rm", "--name", name]);
    if sandbox.limits.no_network {
        cmd.args(["--network", "none"]);
    }
    cmd.arg("--memory")
        .arg(format!("{}m", sandbox.limits.mem_mb))
        .arg("-v")
        .arg(format!("{}:/ws", ws.display()))
        .args(["-w", "/ws", "-e", "PYTHONPATH=/ws:/ws/src", "-e", "PYTHONDONTWRITEBYTECODE=1"])
        .arg(image)
        .arg("python3")
        .arg(rel);
    // SAFETY: setsid is async-signal-safe.
    unsafe {
        cmd.pre_exec(|| {
            libc::setsid();
            Ok(())
        });
    }
    cmd
}

/// Run one driver under the sandbox. Only backend failures are errors; any
/// driver behavior maps to an [`Outcome`].
pub fn run_driver(ws: &Path, driver: &Path, sandbox: &Sandbox) -> Result<Outcome> {
    let out_dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let out_path = out_dir.path().join("stdout");
    let err_path = out_dir.path().join("stderr");
    let stdout = File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
    let stderr = File::create(&err_path).map_err(|e| Error::io(&err_path, e))?;
    let container_name = format!("callerkit-{}", out_dir.path().file_name().unwrap_or_default().to_string_lossy());
    let mut cmd = match &sandbox.backend {
        Backend::Proc => proc_command(ws, driver, sandbox),
        Backend::Container { image } => container_command(ws, driver, sandbox, image, &container_name),
    };
    cmd.stdin(Stdio::null()).stdout(stdout).stderr(stderr);
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| {
        Error::SandboxUnavailable(format!("{:?}: {e}", cmd.get_program()))
    })?;
    let limit = Duration::from_secs_f64(sandbox.limits.wall_s);
    let pid = child.id() as i32;
    let (status, timed_out) = loop {
        match child.try_wait().map_err(|e| Error::SandboxUnavailable(e.to_string()))? {
            Some(s) => break (s, false),
            None if start.elapsed() >= limit => {
                // SAFETY: signalling the child's own process group.
                unsafe {
                    libc::killpg(pid, libc::SIGKILL);
                }
                if matches!(sandbox.backend, Backend::Container { .. }) {
                    let _ = Command::new("docker")
                        .args(["kill", &container_name])
                        .stdout(Stdio::null())
                        .stderr(Stdio::null())
                        .status();
                }
                let s = child.wait().map_err(|e| Error::SandboxUnavailable(e.to_string()))?;
                break (s, true);
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };
    let wall_ms = start.elapsed().as_millis() as u64;
    let status_kind = if timed_out {
        Status::Timeout
    } else if status.code() == Some(0) {
        Status::Pass
    } else if status.code().is_some() {
        Status::Fail
    } else if status.signal() == Some(libc::SIGXCPU) {
        Status::Timeout
    } else {
        Status::Crash
    };
    Ok(Outcome {
        status: status_kind,
        wall_ms,
        exit_code: status.code(),
        stdout_tail: File::open(&out_path).map(tail).unwrap_or_default(),
        stderr_tail: File::open(&err_path).map(tail).unwrap_or_default(),
    })
}

/// Run the task's drivers sequentially; the candidate passes only when every
/// driver passes. Stops at the first non-passing driver.
pub fn evaluate(task: &BenchmarkTask, code: Option<&str>, sandbox: &Sandbox) -> Result<CandidateOutcome> {
    let start = Instant::now();
    let mut result = CandidateOutcome {
        task_id: task.task_id.clone(),
        sample_index: 0,
        status: Status::Pass,
        wall_ms: 0,
        reason: None,
        drivers: Vec::new(),
    };
    let ws = match build_workspace(task, code)? {
        Ok(ws) => ws,
        Err(reason) => {
            result.status = Status::SetupError;
            result.reason = Some(reason);
            return Ok(result);
        }
    };
    if ws.drivers.is_empty() {
        result.status = Status::SetupError;
        result.reason = Some("task has no drivers".into());
    }
    for (name, path) in &ws.drivers {
        let o = run_driver(ws.path(), path, sandbox)?;
        let status = o.status;
        result.drivers.push((name.clone(), o));
        if status != Status::Pass {
            result.status = status;
            break;
        }
    }
    result.wall_ms = start.elapsed().as_millis() as u64;
    Ok(result)
}

pub fn evaluate_candidate(task: &BenchmarkTask, cand: &Candidate, sandbox: &Sandbox) -> Result<CandidateOutcome> {
    let mut o = evaluate(task, Some(&cand.code), sandbox)?;
    o.sample_index = cand.sample_index;
    Ok(o)
}

/// Evaluate all candidates on a bounded worker pool. Output order follows
/// the input order.
pub fn run_eval(
    tasks: &[BenchmarkTask],
    candidates: &[Candidate],
    sandbox: &Sandbox,
    workers: usize,
) -> Result<Vec<CandidateOutcome>> {
    let by_id: BTreeMap<&str, &BenchmarkTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    for c in candidates {
        if !by_id.contains_key(c.task_id.as_str()) {
            return Err(Error::Domain(format!("candidate for unknown task {:?}", c.task_id)));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Domain(e.to_string()))?;
    pool.install(|| {
        candidates
            .par_iter()
            .map(|c| evaluate_candidate(by_id[c.task_id.as_str()], c, sandbox))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub n: usize,
    pub c: usize,
    /// pass@k in [0, 1]; absent when k > n.
    pub pass_at: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: Vec<TaskScore>,
    /// Mean over tasks, as a percentage.
    pub aggregate: BTreeMap<String, f64>,
}

fn key(k: usize) -> String {
    format!("pass@{k}")
}

/// Per-task counts and pass@k; every task in `task_ids` is reported, tasks
/// whose sample count is below k are left out of that k's mean.
pub fn aggregate(task_ids: &[String], outcomes: &[CandidateOutcome], ks: &[usize]) -> EvalReport {
    let mut counts: BTreeMap<&str, (usize, usize)> = task_ids.iter().map(|t| (t.as_str(), (0, 0))).collect();
    for o in outcomes {
        let e = counts.entry(o.task_id.as_str()).or_insert((0, 0));
        e.0 += 1;
        if o.status == Status::Pass {
            e.1 += 1;
        }
    }
    let mut per_task = Vec::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (task, (n, c)) in counts {
        let mut pass_at = BTreeMap::new();
        for &k in ks {
            if let Ok(p) = pass_at_k(n, c, k) {
                pass_at.insert(key(k), p);
                let s = sums.entry(key(k)).or_insert((0.0, 0));
                s.0 += p;
                s.1 += 1;
            }
        }
        per_task.push(TaskScore {
            task_id: task.to_string(),
            n,
            c,
            pass_at,
        });
    }
    let aggregate = ks
        .iter()
        .map(|&k| {
            let (s, m) = sums.get(&key(k)).copied().unwrap_or((0.0, 0));
            (key(k), if m == 0 { 0.0 } else { 100.0 * s / m as f64 })
        })
        .collect();
    EvalReport { per_task, aggregate }
}

pub fn format_report(r: &EvalReport) -> String {
    let ks: Vec<&String> = r.aggregate.keys().collect();
    let mut s = format!("{:<32} {:>4} {:>4}", "task", "n", "c");
    for k in &ks {
        s.push_str(&format!(" {:>8}", k));
    }
    s.push('\n');
    for t in &r.per_task {
        s.push_str(&format!("{:<32} {:>4} {:>4}", t.task_id, t.n, t.c));
        for k in &ks {
            match t.pass_at.get(*k) {
                Some(p) => s.push_str(&format!(" {:>8.2}", 100.0 * p)),
                None => s.push_str(&format!(" {:>8}", "-")),
            }
        }
        s.push('\n');
    }
    s.push_str(&format!("{:<32} {:>4} {:>4}", "mean", "", ""));
    for k in &ks {
        s.push_str(&format!(" {:>8.2}", r.aggregate[*k]));
    }
    s.push('\n');
    s
}

/// Reference sanity: every driver must pass on the unmodified files.
pub fn reference_sanity(task: &BenchmarkTask, sandbox: &Sandbox) -> Result<std::result::Result<(), String>> {
    let o = evaluate(task, None, sandbox)?;
    if o.status == Status::Pass {
        return Ok(Ok(()));
    }
    let failing = o
        .drivers
        .iter()
        .find(|(_, d)| d.status != Status::Pass)
        .map(|(n, d)| format!("{n}: {:?}", d.status))
        .or(o.reason)
        .unwrap_or_default();
    Ok(Err(failing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binom(n: usize, k: usize) -> f64 {
        if k > n {
            return 0.0;
        }
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn estimator_examples() {
        assert_eq!(pass_at_k(1, 1, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(5, 0, 3).unwrap(), 0.0);
        assert!((pass_at_k(5, 2, 3).unwrap() - 0.9).abs() < 1e-12);
        assert!((pass_at_k(5, 2, 1).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(pass_at_k(5, 2, 5).unwrap(), 1.0);
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
    }

    proptest! {
        #[test]
        fn estimator_matches_closed_form(n in 1usize..=20, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
            let c = (c_frac * n as f64).round() as usize;
            let k = 1 + ((k_frac * (n - 1) as f64).round() as usize);
            let p = pass_at_k(n, c, k).unwrap();
            let closed = 1.0 - binom(n - c, k) / binom(n, k);
            prop_assert!((p - closed).abs() < 1e-9);
            if k < n {
                prop_assert!(pass_at_k(n, c, k + 1).unwrap() + 1e-12 >= p);
            }
            if c < n {
                prop_assert!(pass_at_k(n, c + 1, k).unwrap() + 1e-12 >= p);
            }
        }
    }

    #[test]
    fn aggregate_mean() {
        let o = |t: &str, s: Status| CandidateOutcome {
            task_id: t.into(),
            sample_index: 0,
            status: s,
            wall_ms: 0,
            reason: None,
            drivers: vec![],
        };
        let ids = vec!["a".to_string(), "b".to_string()];
        let r = aggregate(&ids, &[o("a", Status::Pass), o("b", Status::Fail)], &[1]);
        assert_eq!(r.aggregate["pass@1"], 50.0);
        let five: Vec<_> = (0..5)
            .map(|i| o("a", if i < 2 { Status::Pass } else { Status::Timeout }))
            .collect();
        let r = aggregate(&ids[..1], &five, &[1, 5]);
        assert!((r.per_task[0].pass_at["pass@1"] - 0.4).abs() < 1e-12);
        assert_eq!(r.per_task[0].pass_at["pass@5"], 1.0);
    }
}
