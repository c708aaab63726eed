//! Canonical in-memory workflow: a linear pipeline of agent steps that pass
//! text to each other through named bindings.
//!
//! Every textual representation parses into [`WorkflowIr`], and structural
//! validity (the predicate behind the logical success rate) is decided here by
//! [`validate`].

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repr::Scheme;

/// The single external input every workflow may reference.
pub const TASK_DESCRIPTION: &str = "task_description";

/// Name stems that mark an agent as code-producing by default.
pub const DEFAULT_CODE_PRODUCERS: [&str; 3] = ["code_generation", "code_refinement", "code_rewriting"];

/// One agent invocation: `name(args...) -> output`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepSpec {
    pub name: String,
    pub args: Vec<String>,
    pub output: String,
}

impl StepSpec {
    pub fn new<N, A, O>(name: N, args: A, output: O) -> Self
    where
        N: Into<String>,
        A: IntoIterator,
        A::Item: Into<String>,
        O: Into<String>,
    {
        Self {
            name: name.into(),
            args: args.into_iter().map(Into::into).collect(),
            output: output.into(),
        }
    }
}

/// An ordered step pipeline.
///
/// `scheme_hint` records which textual scheme the workflow was parsed from.
/// It is provenance only and does not take part in equality.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WorkflowIr {
    pub steps: Vec<StepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme_hint: Option<Scheme>,
}

impl PartialEq for WorkflowIr {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps
    }
}

impl Eq for WorkflowIr {}

impl WorkflowIr {
    pub fn new(steps: Vec<StepSpec>) -> Self {
        Self {
            steps,
            scheme_hint: None,
        }
    }

    pub fn with_hint(mut self, scheme: Scheme) -> Self {
        self.scheme_hint = Some(scheme);
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Distinct agent names in first-appearance order.
    pub fn agent_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.steps
            .iter()
            .filter(|s| seen.insert(s.name.as_str()))
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn terminal(&self) -> Option<&StepSpec> {
        self.steps.last()
    }
}

/// A named agent and the prompt it runs with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("agent `{0}` has an empty prompt")]
pub struct EmptyPrompt(pub String);

impl AgentSpec {
    pub fn new(name: impl Into<String>, prompt: impl Into<String>) -> Result<Self, EmptyPrompt> {
        let name = name.into();
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(EmptyPrompt(name));
        }
        Ok(Self { name, prompt })
    }
}

/// Set of name stems identifying code-producing agents. A step name matches
/// when it contains any stem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeProducers(Vec<String>);

impl Default for CodeProducers {
    fn default() -> Self {
        Self(DEFAULT_CODE_PRODUCERS.iter().map(|s| s.to_string()).collect())
    }
}

impl CodeProducers {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(stems: I) -> Self {
        Self(stems.into_iter().map(Into::into).collect())
    }

    pub fn matches(&self, agent_name: &str) -> bool {
        self.0.iter().any(|stem| agent_name.contains(stem.as_str()))
    }

    pub fn stems(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    Empty,
    DuplicateOutput,
    UnboundArg,
    NonterminalCoder,
    BadToken,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Empty => "EMPTY",
            Rule::DuplicateOutput => "DUPLICATE_OUTPUT",
            Rule::UnboundArg => "UNBOUND_ARG",
            Rule::NonterminalCoder => "NONTERMINAL_CODER",
            Rule::BadToken => "BAD_TOKEN",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub step_index: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            valid: violations.is_empty(),
            violations,
        }
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn rules(&self) -> Vec<Rule> {
        self.violations.iter().map(|v| v.rule).collect()
    }

    /// True when nothing but the terminal-coder rule is violated.
    pub fn structurally_sound(&self) -> bool {
        self.violations.iter().all(|v| v.rule == Rule::NonterminalCoder)
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} at step {}: {}", v.rule, v.step_index, v.detail)?;
        }
        Ok(())
    }
}

/// `[a-z][a-z0-9_]*`
pub fn is_token(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Checks every structural rule and reports all violations in step order.
pub fn validate(w: &WorkflowIr, producers: &CodeProducers) -> ValidityReport {
    let mut violations = Vec::new();
    if w.steps.is_empty() {
        violations.push(Violation {
            rule: Rule::Empty,
            step_index: 0,
            detail: "workflow has no steps".into(),
        });
        return ValidityReport::from_violations(violations);
    }

    let mut defined: HashSet<&str> = HashSet::new();
    for (i, step) in w.steps.iter().enumerate() {
        for (field, value) in [("name", &step.name), ("output", &step.output)] {
            if !is_token(value) {
                violations.push(Violation {
                    rule: Rule::BadToken,
                    step_index: i,
                    detail: format!("{field} `{value}` is not a lowercase token"),
                });
            }
        }
        for arg in &step.args {
            if !is_token(arg) {
                violations.push(Violation {
                    rule: Rule::BadToken,
                    step_index: i,
                    detail: format!("arg `{arg}` is not a lowercase token"),
                });
            }
            if arg != TASK_DESCRIPTION && !defined.contains(arg.as_str()) {
                violations.push(Violation {
                    rule: Rule::UnboundArg,
                    step_index: i,
                    detail: format!("`{arg}` is not produced by an earlier step"),
                });
            }
        }
        if step.output == TASK_DESCRIPTION || defined.contains(step.output.as_str()) {
            violations.push(Violation {
                rule: Rule::DuplicateOutput,
                step_index: i,
                detail: format!("output `{}` is already bound", step.output),
            });
        }
        defined.insert(step.output.as_str());
    }

    let last = w.steps.len() - 1;
    if !producers.matches(&w.steps[last].name) {
        violations.push(Violation {
            rule: Rule::NonterminalCoder,
            step_index: last,
            detail: format!("terminal agent `{}` does not produce code", w.steps[last].name),
        });
    }
    ValidityReport::from_violations(violations)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderError {
    #[error("workflow has no steps")]
    Empty,
    #[error("step {step_index}: output `{output}` is bound twice")]
    DuplicateOutput { step_index: usize, output: String },
    #[error("step {step_index}: `{arg}` is used before it is defined")]
    Unbound { step_index: usize, arg: String },
}

/// Execution order of the pipeline. The listed order is already topological
/// when def-before-use holds, so this checks that and returns `0..len`.
pub fn topo_order(w: &WorkflowIr) -> Result<Vec<usize>, OrderError> {
    if w.steps.is_empty() {
        return Err(OrderError::Empty);
    }
    let mut defined: HashSet<&str> = HashSet::new();
    for (i, step) in w.steps.iter().enumerate() {
        if let Some(arg) = step
            .args
            .iter()
            .find(|a| a.as_str() != TASK_DESCRIPTION && !defined.contains(a.as_str()))
        {
            return Err(OrderError::Unbound {
                step_index: i,
                arg: arg.clone(),
            });
        }
        if step.output == TASK_DESCRIPTION || !defined.insert(step.output.as_str()) {
            return Err(OrderError::DuplicateOutput {
                step_index: i,
                output: step.output.clone(),
            });
        }
    }
    Ok((0..w.steps.len()).collect())
}

/// The five-step template pipeline used throughout as `W^temp`.
pub fn template_workflow() -> WorkflowIr {
    WorkflowIr::new(vec![
        StepSpec::new("task_parsing_agent", [TASK_DESCRIPTION], "parsed_task"),
        StepSpec::new("task_refinement_agent", [TASK_DESCRIPTION, "parsed_task"], "refined_task"),
        StepSpec::new("code_generation_agent", ["refined_task"], "generated_code"),
        StepSpec::new("code_reviewer_agent", ["refined_task", "generated_code"], "review_comments"),
        StepSpec::new("code_refinement_agent", ["refined_task", "review_comments"], "refined_code"),
    ])
}
