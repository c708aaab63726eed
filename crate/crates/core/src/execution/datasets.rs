//! Task dataset loaders. The native format is JSON Lines of
//! [`TaskInstance`]; HumanEval, MBPP and LiveCodeBench rows are mapped into it.

use std::fs;
use std::io;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::{TaskError, TaskInstance, TestCase, TestKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("unknown dataset format `{0}` (expected native, humaneval, mbpp or lcb)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Native,
    HumanEval,
    Mbpp,
    Lcb,
}

impl std::str::FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "native" | "jsonl" => Ok(Self::Native),
            "humaneval" => Ok(Self::HumanEval),
            "mbpp" => Ok(Self::Mbpp),
            "lcb" | "livecodebench" => Ok(Self::Lcb),
            other => Err(DatasetError::UnknownFormat(other.into())),
        }
    }
}

/// Loaded tasks plus the ids of source rows that yielded no usable test.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub tasks: Vec<TaskInstance>,
    pub skipped: Vec<String>,
}

/// Five small function-completion tasks shipped with the crate.
pub const DESK_TASKS: &str = include_str!("../../assets/tasks/desk.jsonl");

pub fn desk_tasks() -> Vec<TaskInstance> {
    parse(DESK_TASKS, DatasetFormat::Native)
        .expect("bundled tasks are well-formed")
        .tasks
}

pub fn load(path: &Path, format: DatasetFormat) -> Result<Loaded, DatasetError> {
    parse(&fs::read_to_string(path)?, format)
}

pub fn parse(text: &str, format: DatasetFormat) -> Result<Loaded, DatasetError> {
    let loaded = match format {
        DatasetFormat::Native => Loaded {
            tasks: rows::<TaskInstance>(text)?.into_iter().map(|(_, t)| t).collect(),
            skipped: Vec::new(),
        },
        DatasetFormat::HumanEval => convert(rows::<HumanEvalRow>(text)?, humaneval_task)?,
        DatasetFormat::Mbpp => convert(rows::<MbppRow>(text)?, mbpp_task)?,
        DatasetFormat::Lcb => convert(rows::<LcbRow>(text)?, lcb_task)?,
    };
    let mut seen = std::collections::HashSet::new();
    for t in &loaded.tasks {
        t.check()?;
        if !seen.insert(t.id.as_str()) {
            return Err(DatasetError::DuplicateId(t.id.clone()));
        }
    }
    Ok(loaded)
}

fn rows<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<(usize, T)>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|row| (i + 1, row))
                .map_err(|e| DatasetError::Row {
                    line: i + 1,
                    reason: e.to_string(),
                })
        })
        .collect()
}

fn convert<T>(
    rows: Vec<(usize, T)>,
    f: impl Fn(T) -> Result<Result<TaskInstance, String>, String>,
) -> Result<Loaded, DatasetError> {
    let mut out = Loaded::default();
    for (line, row) in rows {
        match f(row).map_err(|reason| DatasetError::Row { line, reason })? {
            Ok(task) => out.tasks.push(task),
            Err(id) => out.skipped.push(id),
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct HumanEvalRow {
    task_id: String,
    prompt: String,
    entry_point: String,
    test: String,
}

fn humaneval_task(row: HumanEvalRow) -> Result<Result<TaskInstance, String>, String> {
    let tests = assertion_tests(&row.test, "candidate");
    if tests.is_empty() {
        return Ok(Err(row.task_id));
    }
    Ok(Ok(TaskInstance {
        id: row.task_id,
        description: row.prompt,
        entry_point: Some(row.entry_point),
        tests,
    }))
}

#[derive(Deserialize)]
struct MbppRow {
    task_id: Value,
    text: String,
    test_list: Vec<String>,
}

fn mbpp_task(row: MbppRow) -> Result<Result<TaskInstance, String>, String> {
    let id = match &row.task_id {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let Some(entry) = row.test_list.iter().find_map(|t| asserted_call(t).map(|(name, ..)| name)) else {
        return Ok(Err(id));
    };
    let tests = assertion_tests(&row.test_list.join("\n"), &entry);
    if tests.is_empty() {
        return Ok(Err(id));
    }
    let description = format!(
        "{}\nYour code should pass this test:\n{}",
        row.text.trim(),
        row.test_list[0].trim()
    );
    Ok(Ok(TaskInstance {
        id,
        description,
        entry_point: Some(entry),
        tests,
    }))
}

#[derive(Deserialize)]
struct LcbRow {
    question_id: Value,
    question_content: String,
    #[serde(default)]
    starter_code: String,
    public_test_cases: Value,
    #[serde(default)]
    private_test_cases: Value,
    #[serde(default)]
    metadata: Value,
}

#[derive(Deserialize)]
struct LcbTest {
    input: String,
    output: String,
    testtype: String,
}

/// Test lists arrive either as arrays or as JSON-encoded strings. Strings
/// that are not JSON (compressed private tests) are ignored.
fn lcb_tests(v: &Value) -> Result<Vec<LcbTest>, String> {
    match v {
        Value::Null => Ok(Vec::new()),
        Value::String(s) if s.trim().is_empty() => Ok(Vec::new()),
        Value::String(s) => Ok(serde_json::from_str(s).unwrap_or_default()),
        other => serde_json::from_value(other.clone()).map_err(|e| e.to_string()),
    }
}

fn lcb_task(row: LcbRow) -> Result<Result<TaskInstance, String>, String> {
    let id = match &row.question_id {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let metadata = match &row.metadata {
        Value::String(s) => serde_json::from_str(s).unwrap_or(Value::Null),
        other => other.clone(),
    };
    let mut raw = lcb_tests(&row.public_test_cases)?;
    raw.extend(lcb_tests(&row.private_test_cases)?);

    let func = metadata.get("func_name").and_then(Value::as_str);
    let entry_point = func.map(|f| {
        if row.starter_code.contains("class Solution") {
            format!("Solution().{f}")
        } else {
            f.to_string()
        }
    });
    let mut tests = Vec::new();
    for t in raw {
        match (t.testtype.as_str(), &entry_point) {
            ("stdin", None) => tests.push(TestCase {
                kind: TestKind::Stdio,
                input: t.input,
                expected: t.output,
            }),
            ("functional", Some(_)) => {
                let args: Result<Vec<String>, _> = t
                    .input
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| serde_json::from_str::<Value>(l).map(|v| python_literal(&v)))
                    .collect();
                let expected = serde_json::from_str::<Value>(&t.output).map(|v| python_literal(&v));
                if let (Ok(args), Ok(expected)) = (args, expected) {
                    tests.push(TestCase {
                        kind: TestKind::Functional,
                        input: args.join(", "),
                        expected,
                    });
                }
            }
            _ => {}
        }
    }
    if tests.is_empty() {
        return Ok(Err(id));
    }
    let mut description = row.question_content;
    if !row.starter_code.trim().is_empty() {
        description.push_str("\n\nStarter code:\n");
        description.push_str(&row.starter_code);
    }
    Ok(Ok(TaskInstance {
        id,
        description,
        entry_point,
        tests,
    }))
}

/// Renders a JSON value as a Python literal.
pub fn python_literal(v: &Value) -> String {
    match v {
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Number(n) => n.to_string(),
        Value::String(_) => v.to_string(),
        Value::Array(items) => format!("[{}]", items.iter().map(python_literal).collect::<Vec<_>>().join(", ")),
        Value::Object(map) => format!(
            "{{{}}}",
            map.iter()
                .map(|(k, v)| format!("{}: {}", Value::String(k.clone()), python_literal(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

/// Walks `s` from `from`, skipping string literals, and returns the first
/// index where `stop(byte, depth)` holds. Depth starts at `depth`.
fn scan(s: &str, from: usize, mut depth: usize, stop: impl Fn(u8, usize) -> bool) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = from;
    while i < bytes.len() {
        match bytes[i] {
            q @ (b'\'' | b'"') => {
                let triple = bytes[i..].starts_with(&[q, q, q]);
                i += if triple { 3 } else { 1 };
                loop {
                    if i >= bytes.len() || (!triple && bytes[i] == b'\n') {
                        return None;
                    }
                    if bytes[i] == b'\\' {
                        i += 2;
                        continue;
                    }
                    if triple && bytes[i..].starts_with(&[q, q, q]) {
                        i += 3;
                        break;
                    }
                    if !triple && bytes[i] == q {
                        i += 1;
                        break;
                    }
                    i += 1;
                }
                continue;
            }
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => {
                depth = depth.checked_sub(1)?;
                if stop(b')', depth) {
                    return Some(i);
                }
            }
            b if stop(b, depth) => return Some(i),
            _ => {}
        }
        i += 1;
    }
    None
}

/// Index of the bracket closing the one opened just before `from`.
fn matching_close(s: &str, from: usize) -> Option<usize> {
    scan(s, from, 1, |b, depth| b == b')' && depth == 0)
}

/// Splits `assert NAME(ARGS) == EXPECTED` into its parts.
fn asserted_call(line: &str) -> Option<(String, String, String)> {
    let rest = line.trim().strip_prefix("assert")?.trim_start();
    let open = rest.find('(')?;
    let name = rest[..open].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    let close = matching_close(rest, open + 1)?;
    let args = rest[open + 1..close].trim().to_string();
    let expected = rest[close + 1..].trim_start().strip_prefix("==")?.trim();
    // A trailing assertion message is not part of the expected value.
    let expected = match scan(expected, 0, 0, |b, depth| b == b',' && depth == 0) {
        Some(i) => expected[..i].trim(),
        None => expected,
    };
    if expected.is_empty() {
        return None;
    }
    Some((name.to_string(), args, expected.to_string()))
}

/// Functional tests from every `assert <callee>(...) == ...` line.
fn assertion_tests(source: &str, callee: &str) -> Vec<TestCase> {
    source
        .lines()
        .filter_map(asserted_call)
        .filter(|(name, ..)| name == callee)
        .map(|(_, input, expected)| TestCase {
            kind: TestKind::Functional,
            input,
            expected,
        })
        .collect()
}
