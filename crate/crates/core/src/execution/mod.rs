//! Running workflows on coding tasks and judging the code they produce.

pub mod datasets;
mod sandbox;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use sandbox::{
    normalize_output, run_candidate, syntax_ok, CandidateResult, SandboxError, SandboxPolicy, Verdict, KILL_GRACE_MS,
};

use crate::backend::{BackendError, Decoding, RecordingBackend};
use crate::ir::{topo_order, AgentSpec, CodeProducers, OrderError, StepSpec, WorkflowIr, TASK_DESCRIPTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestKind {
    Stdio,
    Functional,
}

/// One test. For `STDIO`, `input` is fed on stdin and `expected` is compared
/// to stdout after normalization. For `FUNCTIONAL`, `input` is the argument
/// list of a call to the entry point and `expected` an expression for its
/// result, both in the candidate language's syntax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub kind: TestKind,
    pub input: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
    pub tests: Vec<TestCase>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("task `{0}` has no tests")]
    NoTests(String),
    #[error("task `{0}` has functional tests but no entry point")]
    MissingEntryPoint(String),
    #[error("task `{0}` has stdio tests and an entry point")]
    UnexpectedEntryPoint(String),
}

impl TaskInstance {
    pub fn check(&self) -> Result<(), TaskError> {
        if self.tests.is_empty() {
            return Err(TaskError::NoTests(self.id.clone()));
        }
        for t in &self.tests {
            match (t.kind, &self.entry_point) {
                (TestKind::Functional, None) => return Err(TaskError::MissingEntryPoint(self.id.clone())),
                (TestKind::Stdio, Some(_)) => return Err(TaskError::UnexpectedEntryPoint(self.id.clone())),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ExecutionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no agent prompt for step `{0}`")]
    MissingAgent(String),
    #[error("step {step_index} argument `{arg}` is unbound")]
    UnboundArg { step_index: usize, arg: String },
    #[error("workflow cannot be ordered: {0}")]
    Order(#[from] OrderError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("n must be at least 1")]
    ZeroSamples,
}

/// Agent prompt, then one `== arg ==` section per argument, in argument
/// order, joined with `separator`.
pub fn assemble_prompt(
    agent: &AgentSpec,
    step: &StepSpec,
    bindings: &BTreeMap<String, String>,
    separator: &str,
) -> Result<String, ExecutionError> {
    let mut parts = vec![agent.prompt.clone()];
    for (i, arg) in step.args.iter().enumerate() {
        let Some(text) = bindings.get(arg) else {
            return Err(ExecutionError::UnboundArg {
                step_index: i,
                arg: arg.clone(),
            });
        };
        parts.push(format!("== {arg} ==\n{text}"));
    }
    Ok(parts.join(separator))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopPolicy {
    /// Upper bound on rewriter invocations, the first pass included.
    pub max_iterations: usize,
}

impl Default for LoopPolicy {
    fn default() -> Self {
        Self { max_iterations: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step_index: usize,
    pub agent_name: String,
    /// 0 on the linear pass, then 1, 2, ... for review/rewrite re-entries.
    pub iteration: usize,
    pub call_id: u64,
    pub assembled_prompt: String,
    pub completion_text: String,
    pub bindings_after: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowRun {
    pub final_output: String,
    pub traces: Vec<StepTrace>,
}

fn is_reviewer(name: &str) -> bool {
    name.starts_with("code_review")
}

fn is_rewriter(name: &str) -> bool {
    name.starts_with("code_rewrit") || name.starts_with("code_refine")
}

/// Index of the first reviewer immediately followed by a rewriter.
pub fn review_pair(w: &WorkflowIr) -> Option<usize> {
    w.steps
        .windows(2)
        .position(|p| is_reviewer(&p[0].name) && is_rewriter(&p[1].name))
}

/// Backend, decoding and loop settings for running workflows.
pub struct Executor<'a> {
    pub backend: &'a RecordingBackend,
    pub decoding: Decoding,
    pub separator: String,
    pub loop_policy: LoopPolicy,
    pub producers: CodeProducers,
    pub sandbox: SandboxPolicy,
    /// Mixed into the per-sample seed so repeated samples get distinct
    /// requests.
    pub seed: u64,
}

impl<'a> Executor<'a> {
    pub fn new(backend: &'a RecordingBackend, decoding: Decoding, sandbox: SandboxPolicy) -> Self {
        Self {
            backend,
            decoding,
            separator: crate::evolution::DEFAULT_SEPARATOR.into(),
            loop_policy: LoopPolicy::default(),
            producers: CodeProducers::default(),
            sandbox,
            seed: 0,
        }
    }

    fn agent<'b>(&self, agents: &'b [AgentSpec], name: &str) -> Result<&'b AgentSpec, ExecutionError> {
        agents
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ExecutionError::MissingAgent(name.into()))
    }

    #[allow(clippy::too_many_arguments)]
    fn run_step(
        &self,
        decoding: &Decoding,
        index: usize,
        step: &StepSpec,
        agents: &[AgentSpec],
        inputs: &BTreeMap<String, String>,
        bindings: &mut BTreeMap<String, String>,
        iteration: usize,
    ) -> Result<StepTrace, ExecutionError> {
        let agent = self.agent(agents, &step.name)?;
        let prompt = assemble_prompt(agent, step, inputs, &self.separator).map_err(|e| match e {
            ExecutionError::UnboundArg { arg, .. } => ExecutionError::UnboundArg { step_index: index, arg },
            other => other,
        })?;
        let record = self
            .backend
            .complete(&format!("agent:{}", step.name), &decoding.request(prompt.clone()))?;
        bindings.insert(step.output.clone(), record.response.text.clone());
        Ok(StepTrace {
            step_index: index,
            agent_name: step.name.clone(),
            iteration,
            call_id: record.call_id,
            assembled_prompt: prompt,
            completion_text: record.response.text,
            bindings_after: bindings.clone(),
        })
    }

    /// Runs every step once in order. When a reviewer is immediately
    /// followed by a rewriter and the reviewer answered `0`, the reviewer is
    /// asked again about the latest rewrite, and the rewriter runs again
    /// while the answer stays `0`, up to `loop_policy.max_iterations`
    /// rewrites in total.
    pub fn execute_workflow(
        &self,
        w: &WorkflowIr,
        agents: &[AgentSpec],
        task: &TaskInstance,
    ) -> Result<WorkflowRun, ExecutionError> {
        self.execute_with(&self.decoding, w, agents, task)
    }

    fn execute_with(
        &self,
        decoding: &Decoding,
        w: &WorkflowIr,
        agents: &[AgentSpec],
        task: &TaskInstance,
    ) -> Result<WorkflowRun, ExecutionError> {
        let order = topo_order(w)?;
        for step in &w.steps {
            self.agent(agents, &step.name)?;
        }
        let pair = review_pair(w);
        let mut bindings = BTreeMap::from([(TASK_DESCRIPTION.to_string(), task.description.clone())]);
        let mut traces = Vec::new();

        for &i in &order {
            let step = &w.steps[i];
            let inputs = bindings.clone();
            traces.push(self.run_step(decoding, i, step, agents, &inputs, &mut bindings, 0)?);

            if pair.map(|p| p + 1) != Some(i) {
                continue;
            }
            let reviewer = &w.steps[i - 1];
            let rewriter = step;
            // Outputs of earlier code producers stand for "the current code".
            let code_args: Vec<&str> = w.steps[..i - 1]
                .iter()
                .filter(|s| self.producers.matches(&s.name))
                .map(|s| s.output.as_str())
                .collect();
            let mut rewrites = 1;
            let mut iteration = 0;
            while rewrites < self.loop_policy.max_iterations && bindings[&reviewer.output].trim() == "0" {
                iteration += 1;
                let mut inputs = bindings.clone();
                for arg in &code_args {
                    inputs.insert(arg.to_string(), bindings[&rewriter.output].clone());
                }
                traces.push(self.run_step(decoding, i - 1, reviewer, agents, &inputs, &mut bindings, iteration)?);
                if bindings[&reviewer.output].trim() != "0" {
                    break;
                }
                inputs.insert(reviewer.output.clone(), bindings[&reviewer.output].clone());
                traces.push(self.run_step(decoding, i, rewriter, agents, &inputs, &mut bindings, iteration)?);
                rewrites += 1;
            }
        }

        let terminal = w.terminal().expect("ordered workflow is non-empty");
        Ok(WorkflowRun {
            final_output: bindings[&terminal.output].clone(),
            traces,
        })
    }

    /// Seed for the `k`-th sample of `task_id`.
    pub fn sample_seed(&self, task_id: &str, k: usize) -> u64 {
        let digest = Sha256::digest(format!("{}:{task_id}:{k}", self.seed).as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Runs the workflow `n` times, extracts code from every final output and
    /// judges it. Backend calls are made sequentially so transcripts are
    /// reproducible; sandbox runs happen in parallel afterwards.
    pub fn sample_candidates(
        &self,
        w: &WorkflowIr,
        agents: &[AgentSpec],
        task: &TaskInstance,
        n: usize,
    ) -> Result<Vec<CandidateResult>, ExecutionError> {
        if n == 0 {
            return Err(ExecutionError::ZeroSamples);
        }
        let mut codes = Vec::with_capacity(n);
        for k in 0..n {
            let decoding = self.decoding.with_seed(self.sample_seed(&task.id, k));
            let run = self.execute_with(&decoding, w, agents, task)?;
            codes.push(extract_code(&run.final_output).ok());
        }
        let per_candidate = (self.sandbox.parallelism / n).max(1);
        let policy = SandboxPolicy {
            parallelism: per_candidate,
            ..self.sandbox.clone()
        };
        sandbox::parallel_map(&codes, self.sandbox.parallelism.min(n), |code| match code {
            Some(code) => run_candidate(code, task, &policy),
            None => Ok(CandidateResult::no_code(task.tests.len())),
        })
        .into_iter()
        .map(|r| r.map_err(ExecutionError::from))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no code found in completion")]
pub struct NoCodeFound;

fn fence_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[^\n`]*\n(.*?)```").expect("valid regex"))
}

fn bare_program_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // First line of a bare program: an import, a definition, a decorator, a
    // main guard, a compound statement, a call, or an assignment.
    RE.get_or_init(|| {
        Regex::new(concat!(
            r"^(import\s+\w|from\s+[\w.]+\s+import\s|def\s+\w+\s*\(|class\s+\w+|@\w|",
            r"if\s+__name__\s*==|for\s+\w.*:\s*$|while\s.*:\s*$|try\s*:|with\s.*:\s*$|",
            r"print\s*\(|[A-Za-z_][\w.]*\s*\(.*\)\s*$|[A-Za-z_][\w,\s]*\s*[+\-*/]?=[^=])"
        ))
        .expect("valid regex")
    })
}

/// Contents of the last fenced block; failing that, the whole text when it
/// looks like a bare program; failing that, the text after an unclosed
/// opening fence.
pub fn extract_code(completion: &str) -> Result<String, NoCodeFound> {
    if let Some(m) = fence_regex().captures_iter(completion).last() {
        let body = m[1].to_string();
        if !body.trim().is_empty() {
            return Ok(body);
        }
    }
    let first = completion.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if !first.starts_with(char::is_whitespace) && bare_program_regex().is_match(first) {
        return Ok(completion.to_string());
    }
    if completion.matches("```").count() % 2 == 1 {
        let open = completion.rfind("```").expect("odd count");
        if let Some(nl) = completion[open..].find('\n') {
            let body = &completion[open + nl + 1..];
            if !body.trim().is_empty() {
                return Ok(body.to_string());
            }
        }
    }
    Err(NoCodeFound)
}
