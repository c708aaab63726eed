//! Workflow generation, workflow evolution and agent-prompt evolution.
//!
//! Every operator is a fixed prompt-assembly rule followed by one or two
//! backend calls; [`Evolver`] carries the backend, decoding parameters and
//! the separator that joins an evolutionary prompt to its payload.

mod corpus;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{CorpusError, PromptCorpus, Section};

use crate::backend::{BackendError, Decoding, RecordingBackend};
use crate::ir::{validate, AgentSpec, CodeProducers, ValidityReport, WorkflowIr};
use crate::repr::{self, ParseFailure, Scheme, SerializeError, WorkflowDoc};

pub const WORKFLOW_GENERATION_PROMPT: &str = include_str!("../../assets/prompts/workflow_generation.txt");
pub const AGENT_GENERATION_PROMPT: &str = include_str!("../../assets/prompts/agent_generation.txt");
const TEMPLATE_PYSTEPS: &str = include_str!("../../assets/templates/template.pysteps");

pub const DEFAULT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvolutionMethod {
    DE1,
    DE2,
    HE0,
    HE1,
}

impl EvolutionMethod {
    pub const ALL: [EvolutionMethod; 4] = [Self::DE1, Self::DE2, Self::HE0, Self::HE1];

    /// Backend calls the operator makes per agent.
    pub fn calls_per_agent(self) -> usize {
        match self {
            Self::DE1 => 1,
            Self::DE2 | Self::HE0 | Self::HE1 => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::DE1 => "DE1",
            Self::DE2 => "DE2",
            Self::HE0 => "HE0",
            Self::HE1 => "HE1",
        }
    }
}

impl std::fmt::Display for EvolutionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for EvolutionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown evolution method `{s}` (expected DE1, DE2, HE0 or HE1)"))
    }
}

/// The template workflow given to the generator. Always parses and validates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowTemplate {
    doc: WorkflowDoc,
    ir: WorkflowIr,
}

impl WorkflowTemplate {
    pub fn new(doc: WorkflowDoc) -> Result<Self, EvolutionError> {
        let ir = parse_checked(&doc, &CodeProducers::default())?;
        Ok(Self { doc, ir })
    }

    /// The five-step template shipped with the crate.
    pub fn bundled() -> Self {
        Self::new(WorkflowDoc::new(TEMPLATE_PYSTEPS, Scheme::Pysteps)).expect("bundled template is valid")
    }

    pub fn doc(&self) -> &WorkflowDoc {
        &self.doc
    }

    pub fn ir(&self) -> &WorkflowIr {
        &self.ir
    }

    /// The template rendered in `scheme`: the original text when the scheme
    /// matches, the canonical serialization otherwise.
    pub fn render(&self, scheme: Scheme) -> Result<String, SerializeError> {
        if scheme == self.doc.scheme {
            Ok(self.doc.text.clone())
        } else {
            Ok(repr::serialize(&self.ir, scheme)?.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum InvalidCause {
    Parse(ParseFailure),
    Rules(ValidityReport),
}

impl std::fmt::Display for InvalidCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InvalidCause::Parse(p) => write!(f, "{p}"),
            InvalidCause::Rules(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("`{role}` returned an empty completion")]
    EmptyCompletion { role: String },
    #[error("invalid workflow: {cause}")]
    InvalidWorkflow { doc: WorkflowDoc, cause: InvalidCause },
    #[error("template cannot be rendered: {0}")]
    Template(#[from] SerializeError),
    #[error("no prompt could be built for agent `{0}`")]
    MissingAgent(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Parses a completion (after stripping an enclosing code fence) and
/// validates it.
pub fn parse_checked(doc: &WorkflowDoc, producers: &CodeProducers) -> Result<WorkflowIr, EvolutionError> {
    let stripped = WorkflowDoc::new(repr::strip_fence(&doc.text), doc.scheme);
    let ir = repr::parse(&stripped).map_err(|p| EvolutionError::InvalidWorkflow {
        doc: doc.clone(),
        cause: InvalidCause::Parse(p),
    })?;
    let report = validate(&ir, producers);
    if !report.valid {
        return Err(EvolutionError::InvalidWorkflow {
            doc: doc.clone(),
            cause: InvalidCause::Rules(report),
        });
    }
    Ok(ir)
}

/// Substitutes `{key}` placeholders in one left-to-right pass, so values
/// that happen to contain placeholder text are left alone.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (key, value) in values {
            if tail.len() > key.len() + 1 && tail[1..].starts_with(key) && tail[key.len() + 1..].starts_with('}') {
                out.push_str(value);
                rest = &tail[key.len() + 2..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArtifactKind {
    Workflow,
    Agent,
}

/// Which operator produced an artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArtifactMethod {
    #[serde(rename = "WORKFLOW_MUT")]
    WorkflowMut,
    #[serde(untagged)]
    Agent(EvolutionMethod),
}

/// One lineage entry: what went in, what came out, and which calls did it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolvedArtifact {
    pub kind: ArtifactKind,
    /// Agent name for agent artifacts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub before: String,
    pub after: String,
    pub method: ArtifactMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_prompt_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper_mutation_prompt_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_style_id: Option<usize>,
    pub call_ids: Vec<u64>,
}

/// An operator result together with the transcript calls that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Traced<T> {
    pub value: T,
    pub call_ids: Vec<u64>,
}

/// Corpus entries used by one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub mutation: usize,
    #[serde(default)]
    pub hyper_mutation: usize,
    #[serde(default)]
    pub thinking_style: usize,
}

#[derive(Debug, Clone)]
pub struct SewRun {
    pub default_workflow: WorkflowDoc,
    pub evolved_workflow: WorkflowDoc,
    pub workflow: WorkflowIr,
    pub default_agents: Vec<AgentSpec>,
    pub agents: Vec<AgentSpec>,
    pub lineage: Vec<EvolvedArtifact>,
}

pub struct Evolver<'a> {
    pub backend: &'a RecordingBackend,
    pub decoding: Decoding,
    pub separator: String,
    pub producers: CodeProducers,
}

impl<'a> Evolver<'a> {
    pub fn new(backend: &'a RecordingBackend, decoding: Decoding) -> Self {
        Self {
            backend,
            decoding,
            separator: DEFAULT_SEPARATOR.into(),
            producers: CodeProducers::default(),
        }
    }

    fn join(&self, head: &str, payload: &str) -> String {
        format!("{head}{}{payload}", self.separator)
    }

    fn call(&self, role: &str, prompt: String) -> Result<Traced<String>, EvolutionError> {
        let record = self.backend.complete(role, &self.decoding.request(prompt))?;
        Ok(Traced {
            value: record.response.text,
            call_ids: vec![record.call_id],
        })
    }

    fn call_nonempty(&self, role: &str, prompt: String) -> Result<Traced<String>, EvolutionError> {
        let out = self.call(role, prompt)?;
        if out.value.trim().is_empty() {
            return Err(EvolutionError::EmptyCompletion { role: role.into() });
        }
        Ok(out)
    }

    pub fn workflow_generation_prompt(
        &self,
        task_desc: &str,
        template: &WorkflowTemplate,
        scheme: Scheme,
    ) -> Result<String, EvolutionError> {
        let rendered = template.render(scheme)?;
        Ok(fill_template(
            WORKFLOW_GENERATION_PROMPT.trim_end(),
            &[("workflow_template", &rendered), ("dataset_description", task_desc)],
        ))
    }

    /// One call; the completion is returned raw and parsed downstream.
    pub fn generate_default_workflow(
        &self,
        task_desc: &str,
        template: &WorkflowTemplate,
        scheme: Scheme,
    ) -> Result<Traced<WorkflowDoc>, EvolutionError> {
        let prompt = self.workflow_generation_prompt(task_desc, template, scheme)?;
        let out = self.call("workflow_generation", prompt)?;
        Ok(Traced {
            value: WorkflowDoc::new(out.value, scheme),
            call_ids: out.call_ids,
        })
    }

    pub fn evolve_workflow(&self, w_def: &WorkflowDoc, t_mut: &str) -> Result<Traced<WorkflowDoc>, EvolutionError> {
        let out = self.call("workflow_evolution", self.join(t_mut, &w_def.text))?;
        Ok(Traced {
            value: WorkflowDoc::new(out.value, w_def.scheme),
            call_ids: out.call_ids,
        })
    }

    pub fn agent_de_first(&self, a: &AgentSpec, t_mut: &str) -> Result<Traced<AgentSpec>, EvolutionError> {
        let out = self.call_nonempty("de1", self.join(t_mut, &a.prompt))?;
        Ok(Traced {
            value: renamed(a, out.value),
            call_ids: out.call_ids,
        })
    }

    pub fn agent_de_second(&self, a: &AgentSpec, t_mut: &str) -> Result<Traced<AgentSpec>, EvolutionError> {
        let first = self.call_nonempty("de2", self.join(t_mut, &a.prompt))?;
        let second = self.call_nonempty("de2", self.join(t_mut, &first.value))?;
        Ok(Traced {
            value: renamed(a, second.value),
            call_ids: [first.call_ids, second.call_ids].concat(),
        })
    }

    pub fn agent_he_zero(&self, a: &AgentSpec, t_des: &str, t_think: &str) -> Result<Traced<AgentSpec>, EvolutionError> {
        let generated = self.call_nonempty("he0:gen", self.join(t_think, t_des))?;
        let applied = self.call_nonempty("he0:apply", self.join(&generated.value, &a.prompt))?;
        Ok(Traced {
            value: renamed(a, applied.value),
            call_ids: [generated.call_ids, applied.call_ids].concat(),
        })
    }

    pub fn agent_he_first(&self, a: &AgentSpec, t_mut: &str, t_hmut: &str) -> Result<Traced<AgentSpec>, EvolutionError> {
        let mutated = self.call_nonempty("he1:gen", self.join(t_hmut, t_mut))?;
        let applied = self.call_nonempty("he1:apply", self.join(&mutated.value, &a.prompt))?;
        Ok(Traced {
            value: renamed(a, applied.value),
            call_ids: [mutated.call_ids, applied.call_ids].concat(),
        })
    }

    pub fn agent_generation_prompt(&self, workflow_text: &str, agent_name: &str) -> String {
        fill_template(
            AGENT_GENERATION_PROMPT.trim_end(),
            &[("workflow", workflow_text), ("agent_name", agent_name)],
        )
    }

    /// One call per distinct agent, in step order.
    pub fn generate_agent_prompts(&self, w: &WorkflowIr) -> Result<Vec<Traced<AgentSpec>>, EvolutionError> {
        let scheme = w.scheme_hint.unwrap_or(Scheme::Pseudo);
        let text = repr::serialize(w, scheme)?.text;
        let mut agents = Vec::new();
        for name in w.agent_names() {
            let role = format!("agent_prompt:{name}");
            let out = self.call_nonempty(&role, self.agent_generation_prompt(&text, name))?;
            let spec = AgentSpec::new(name, out.value).map_err(|_| EvolutionError::MissingAgent(name.into()))?;
            agents.push(Traced {
                value: spec,
                call_ids: out.call_ids,
            });
        }
        Ok(agents)
    }

    /// Applies `method` to one agent with the selected corpus entries.
    pub fn evolve_agent(
        &self,
        a: &AgentSpec,
        method: EvolutionMethod,
        corpus: &PromptCorpus,
        selection: Selection,
        task_desc: &str,
    ) -> Result<EvolvedArtifact, EvolutionError> {
        let t_mut = corpus.get(Section::Mutation, selection.mutation)?;
        let (out, hyper, think) = match method {
            EvolutionMethod::DE1 => (self.agent_de_first(a, t_mut)?, None, None),
            EvolutionMethod::DE2 => (self.agent_de_second(a, t_mut)?, None, None),
            EvolutionMethod::HE0 => {
                let t_think = corpus.get(Section::ThinkingStyle, selection.thinking_style)?;
                (
                    self.agent_he_zero(a, task_desc, t_think)?,
                    None,
                    Some(selection.thinking_style),
                )
            }
            EvolutionMethod::HE1 => {
                let t_hmut = corpus.get(Section::HyperMutation, selection.hyper_mutation)?;
                (self.agent_he_first(a, t_mut, t_hmut)?, Some(selection.hyper_mutation), None)
            }
        };
        Ok(EvolvedArtifact {
            kind: ArtifactKind::Agent,
            subject: Some(a.name.clone()),
            before: a.prompt.clone(),
            after: out.value.prompt,
            method: ArtifactMethod::Agent(method),
            mutation_prompt_id: (method != EvolutionMethod::HE0).then_some(selection.mutation),
            hyper_mutation_prompt_id: hyper,
            thinking_style_id: think,
            call_ids: out.call_ids,
        })
    }

    /// Generate a default workflow, evolve it once, validate it, generate
    /// agent prompts and evolve every agent with `method`.
    pub fn run_sew(
        &self,
        task_desc: &str,
        template: &WorkflowTemplate,
        scheme: Scheme,
        method: EvolutionMethod,
        corpus: &PromptCorpus,
        selection: Selection,
    ) -> Result<SewRun, EvolutionError> {
        let t_mut = corpus.get(Section::Mutation, selection.mutation)?.to_string();
        // Fail on bad indices before spending any calls.
        match method {
            EvolutionMethod::HE0 => drop(corpus.get(Section::ThinkingStyle, selection.thinking_style)?),
            EvolutionMethod::HE1 => drop(corpus.get(Section::HyperMutation, selection.hyper_mutation)?),
            _ => {}
        }

        let w_def = self.generate_default_workflow(task_desc, template, scheme)?;
        let evolved = self.evolve_workflow(&w_def.value, &t_mut)?;
        let mut lineage = vec![EvolvedArtifact {
            kind: ArtifactKind::Workflow,
            subject: None,
            before: w_def.value.text.clone(),
            after: evolved.value.text.clone(),
            method: ArtifactMethod::WorkflowMut,
            mutation_prompt_id: Some(selection.mutation),
            hyper_mutation_prompt_id: None,
            thinking_style_id: None,
            call_ids: evolved.call_ids.clone(),
        }];
        let workflow = parse_checked(&evolved.value, &self.producers)?;

        let default_agents: Vec<AgentSpec> = self.generate_agent_prompts(&workflow)?.into_iter().map(|t| t.value).collect();
        let mut agents = Vec::with_capacity(default_agents.len());
        for a in &default_agents {
            let artifact = self.evolve_agent(a, method, corpus, selection, task_desc)?;
            agents.push(AgentSpec {
                name: a.name.clone(),
                prompt: artifact.after.clone(),
            });
            lineage.push(artifact);
        }

        Ok(SewRun {
            default_workflow: w_def.value,
            evolved_workflow: evolved.value,
            workflow,
            default_agents,
            agents,
            lineage,
        })
    }
}

fn renamed(a: &AgentSpec, prompt: String) -> AgentSpec {
    AgentSpec {
        name: a.name.clone(),
        prompt,
    }
}
