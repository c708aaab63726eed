//! Process-level sandbox for candidate programs.
//!
//! Each test runs in a fresh temporary directory with a cleared environment,
//! in its own process group, optionally inside a new network namespace, and
//! is killed when it exceeds the wall-clock or output budget. The bundled
//! Python guard adds an audit hook that refuses writes outside the working
//! directory, sockets and subprocesses. This is not container-grade
//! isolation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TaskInstance, TestCase, TestKind};

const GUARD: &str = include_str!("../../assets/sandbox/guard.py");
const HARNESS: &str = include_str!("../../assets/sandbox/harness.py");
const SYNTAX_CHECK: &str = include_str!("../../assets/sandbox/syntax_check.py");

/// Extra time allowed between the deadline and the process actually dying.
pub const KILL_GRACE_MS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    WrongOutput,
    RuntimeError,
    Timeout,
    SyntaxError,
    OutputOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateResult {
    /// `None` when no code could be extracted from the workflow output.
    pub code: Option<String>,
    pub verdicts: Vec<Verdict>,
    pub passed_all: bool,
    /// Code was extracted and passed the syntax check.
    pub syntax_ok: bool,
}

impl CandidateResult {
    pub fn from_verdicts(code: Option<String>, verdicts: Vec<Verdict>, syntax_ok: bool) -> Self {
        let passed_all = code.is_some() && !verdicts.is_empty() && verdicts.iter().all(|v| *v == Verdict::Pass);
        Self {
            code,
            verdicts,
            passed_all,
            syntax_ok,
        }
    }

    /// Failed candidate for a completion that contained no code.
    pub fn no_code(tests: usize) -> Self {
        Self::from_verdicts(None, vec![Verdict::RuntimeError; tests], false)
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox setup failed: {0}")]
    Setup(String),
    #[error("invalid sandbox policy: {0}")]
    Policy(String),
}

/// How candidates are written out and launched.
///
/// In command lines, `{source}` expands to the candidate file and
/// `{workdir}` to the per-test directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxPolicy {
    pub interpreter_command: Vec<String>,
    pub source_file: String,
    /// Files written next to the candidate before every run.
    pub support_files: BTreeMap<String, String>,
    /// Exit status 0 means the candidate compiles.
    pub syntax_check_command: Option<Vec<String>>,
    /// Appended to the candidate for functional tests. Placeholders:
    /// `{entry_point}`, `{input}`, `{expected}`, `{marker}`.
    pub functional_harness: String,
    pub wall_timeout_ms: u64,
    pub max_output_bytes: usize,
    pub workdir_isolation: bool,
    /// Run inside a fresh network namespace when the host allows it.
    pub network_namespace: bool,
    pub parallelism: usize,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            interpreter_command: ["python3", "-I", "-B", "_sew_guard.py", "{source}"]
                .map(String::from)
                .to_vec(),
            source_file: "main.py".into(),
            support_files: BTreeMap::from([
                ("_sew_guard.py".to_string(), GUARD.to_string()),
                ("_sew_syntax.py".to_string(), SYNTAX_CHECK.to_string()),
            ]),
            syntax_check_command: Some(
                ["python3", "-I", "-B", "_sew_syntax.py", "{source}"]
                    .map(String::from)
                    .to_vec(),
            ),
            functional_harness: HARNESS.into(),
            wall_timeout_ms: 10_000,
            max_output_bytes: 1 << 20,
            workdir_isolation: true,
            network_namespace: true,
            parallelism: thread::available_parallelism().map_or(4, |n| n.get()),
        }
    }
}

impl SandboxPolicy {
    pub fn check(&self) -> Result<(), SandboxError> {
        if self.wall_timeout_ms == 0 {
            return Err(SandboxError::Policy("wall_timeout_ms must be positive".into()));
        }
        if self.max_output_bytes == 0 {
            return Err(SandboxError::Policy("max_output_bytes must be positive".into()));
        }
        if self.interpreter_command.is_empty() {
            return Err(SandboxError::Policy("interpreter_command is empty".into()));
        }
        if self.parallelism == 0 {
            return Err(SandboxError::Policy("parallelism must be positive".into()));
        }
        Ok(())
    }
}

fn netns_available() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        Command::new("unshare")
            .args(["--net", "--map-root-user", "true"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success())
    })
}

/// Outcome of one process run.
#[derive(Debug)]
pub(crate) struct RunOutput {
    pub stdout: Vec<u8>,
    pub success: bool,
    pub timed_out: bool,
    pub overflow: bool,
}

fn kill_group(pid: i32) {
    // SAFETY: plain syscall; the child was made a process group leader.
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

fn drain<R: Read + Send + 'static>(mut pipe: R, cap: usize, overflow: Arc<AtomicBool>, pid: i32) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match pipe.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if buf.len() + n > cap {
                        overflow.store(true, Ordering::SeqCst);
                        kill_group(pid);
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                }
            }
        }
        buf
    })
}

fn expand(arg: &str, source: &Path, workdir: &Path) -> String {
    arg.replace("{source}", &source.to_string_lossy())
        .replace("{workdir}", &workdir.to_string_lossy())
}

/// Whether `program` names an existing file, directly or through `PATH`.
/// Checked up front because behind `unshare` a missing program would only
/// show up as exit status 127.
fn program_exists(program: &str) -> bool {
    if program.contains('/') {
        return Path::new(program).is_file();
    }
    std::env::var_os("PATH").is_some_and(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
}

pub(crate) fn run_process(
    argv: &[String],
    workdir: &Path,
    source: &Path,
    stdin: &str,
    policy: &SandboxPolicy,
) -> Result<RunOutput, SandboxError> {
    let argv: Vec<String> = argv.iter().map(|a| expand(a, source, workdir)).collect();
    if !program_exists(&argv[0]) {
        return Err(SandboxError::Setup(format!("cannot launch `{}`: program not found", argv[0])));
    }
    let mut cmd = if policy.network_namespace && netns_available() {
        let mut c = Command::new("unshare");
        c.args(["--net", "--map-root-user"]).args(&argv);
        c
    } else {
        let mut c = Command::new(&argv[0]);
        c.args(&argv[1..]);
        c
    };
    cmd.current_dir(workdir)
        .env_clear()
        .env(
            "PATH",
            std::env::var("PATH").unwrap_or_else(|_| "/usr/local/bin:/usr/bin:/bin".into()),
        )
        .env("HOME", workdir)
        .env("TMPDIR", workdir)
        .env("LANG", "C.UTF-8")
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    // SAFETY: setrlimit is async-signal-safe.
    unsafe {
        cmd.pre_exec(|| {
            let core = libc::rlimit {
                rlim_cur: 0,
                rlim_max: 0,
            };
            libc::setrlimit(libc::RLIMIT_CORE, &core);
            Ok(())
        });
    }

    let mut child = cmd
        .spawn()
        .map_err(|e| SandboxError::Setup(format!("cannot launch `{}`: {e}", argv[0])))?;
    let pid = child.id() as i32;
    let overflow = Arc::new(AtomicBool::new(false));
    let out = drain(
        child.stdout.take().expect("piped"),
        policy.max_output_bytes,
        overflow.clone(),
        pid,
    );
    let err = drain(
        child.stderr.take().expect("piped"),
        policy.max_output_bytes,
        Arc::new(AtomicBool::new(false)),
        pid,
    );
    let mut input = child.stdin.take().expect("piped");
    let payload = stdin.as_bytes().to_vec();
    let feeder = thread::spawn(move || {
        let _ = input.write_all(&payload);
    });

    let deadline = Instant::now() + Duration::from_millis(policy.wall_timeout_ms);
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                timed_out = true;
                kill_group(pid);
                break child.wait().ok();
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                kill_group(pid);
                return Err(SandboxError::Setup(format!("wait failed: {e}")));
            }
        }
    };
    // Stray grandchildren may hold the pipes open; make sure they go too.
    kill_group(pid);
    let stdout = out.join().unwrap_or_default();
    let _ = err.join();
    let _ = feeder.join();
    Ok(RunOutput {
        stdout,
        success: status.is_some_and(|s| s.success()),
        timed_out,
        overflow: overflow.load(Ordering::SeqCst),
    })
}

/// Strips trailing whitespace from every line and trailing blank lines.
pub fn normalize_output(s: &str) -> String {
    let lines: Vec<&str> = s.lines().map(str::trim_end).collect();
    let mut end = lines.len();
    while end > 0 && lines[end - 1].is_empty() {
        end -= 1;
    }
    lines[..end].join("\n")
}

fn fresh_workdir(policy: &SandboxPolicy) -> Result<tempfile::TempDir, SandboxError> {
    let dir = tempfile::Builder::new()
        .prefix("sew-sandbox-")
        .tempdir()
        .map_err(|e| SandboxError::Setup(format!("cannot create working directory: {e}")))?;
    for (name, content) in &policy.support_files {
        std::fs::write(dir.path().join(name), content).map_err(|e| SandboxError::Setup(format!("cannot write {name}: {e}")))?;
    }
    Ok(dir)
}

fn write_source(dir: &Path, policy: &SandboxPolicy, code: &str) -> Result<std::path::PathBuf, SandboxError> {
    let path = dir.join(&policy.source_file);
    std::fs::write(&path, code).map_err(|e| SandboxError::Setup(format!("cannot write candidate: {e}")))?;
    Ok(path)
}

/// Runs the policy's syntax check. `true` when there is none.
pub fn syntax_ok(code: &str, policy: &SandboxPolicy) -> Result<bool, SandboxError> {
    let Some(check) = &policy.syntax_check_command else {
        return Ok(true);
    };
    let dir = fresh_workdir(policy)?;
    let source = write_source(dir.path(), policy, code)?;
    let out = run_process(check, dir.path(), &source, "", policy)?;
    Ok(out.success)
}

fn fill_harness(template: &str, entry_point: &str, test: &TestCase, marker: &str) -> String {
    crate::evolution::fill_template(
        template,
        &[
            ("entry_point", entry_point),
            ("input", &test.input),
            ("expected", &test.expected),
            ("marker", marker),
        ],
    )
}

fn run_test(code: &str, task: &TaskInstance, test: &TestCase, policy: &SandboxPolicy) -> Result<Verdict, SandboxError> {
    let dir = fresh_workdir(policy)?;
    let marker = format!("SEW_VERDICT_{:016x}", rand::random::<u64>());
    let (program, stdin) = match test.kind {
        TestKind::Stdio => (code.to_string(), test.input.as_str()),
        TestKind::Functional => {
            let entry = task.entry_point.as_deref().unwrap_or_default();
            (
                format!("{code}\n{}", fill_harness(&policy.functional_harness, entry, test, &marker)),
                "",
            )
        }
    };
    let source = write_source(dir.path(), policy, &program)?;
    let out = run_process(&policy.interpreter_command, dir.path(), &source, stdin, policy)?;
    if out.timed_out {
        return Ok(Verdict::Timeout);
    }
    if out.overflow {
        return Ok(Verdict::OutputOverflow);
    }
    if !out.success {
        return Ok(Verdict::RuntimeError);
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    Ok(match test.kind {
        TestKind::Stdio if normalize_output(&stdout) == normalize_output(&test.expected) => Verdict::Pass,
        TestKind::Stdio => Verdict::WrongOutput,
        TestKind::Functional => {
            let line = stdout
                .lines()
                .rev()
                .find_map(|l| l.trim().strip_prefix(marker.as_str()).map(str::to_string));
            match line.as_deref() {
                Some(":PASS") => Verdict::Pass,
                Some(_) => Verdict::WrongOutput,
                None => Verdict::RuntimeError,
            }
        }
    })
}

/// Runs `f` over `items` on at most `parallelism` threads, keeping order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], parallelism: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let workers = parallelism.clamp(1, items.len().max(1));
    let results = std::sync::Mutex::new(&mut slots);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Syntax-checks `code`, then runs every test of `task` against it.
pub fn run_candidate(code: &str, task: &TaskInstance, policy: &SandboxPolicy) -> Result<CandidateResult, SandboxError> {
    policy.check()?;
    if !syntax_ok(code, policy)? {
        return Ok(CandidateResult::from_verdicts(
            Some(code.to_string()),
            vec![Verdict::SyntaxError; task.tests.len()],
            false,
        ));
    }
    let verdicts = parallel_map(&task.tests, policy.parallelism, |t| run_test(code, task, t, policy))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CandidateResult::from_verdicts(Some(code.to_string()), verdicts, true))
}
