//! The `generate`, `evolve`, `eval` and `search` commands and the artifact
//! directory each of them writes.
//!
//! Every command writes `config.resolved.json` (the config without its
//! output directory), `fingerprint.txt` and `transcript.jsonl` next to its
//! own artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::backend::{totals_by_role, transcript_totals, write_transcript, BackendError, RecordingBackend, TokenTotals};
use crate::config::{ConfigError, RunConfig, Split};
use crate::evaluation::{self, compare, EvalReport, EvaluationError, SearchGrid};
use crate::evolution::{parse_checked, EvolutionError, EvolvedArtifact, Evolver, Selection, WorkflowTemplate};
use crate::execution::{ExecutionError, Executor, LoopPolicy};
use crate::ir::{AgentSpec, CodeProducers, WorkflowIr};
use crate::repr::{Scheme, WorkflowDoc};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend error: {0}")]
    Backend(BackendError),
    #[error("{0}")]
    InvalidWorkflow(String),
    #[error("sandbox error: {0}")]
    Sandbox(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

impl CommandError {
    /// 2 config, 3 backend, 4 invalid workflow, 5 sandbox.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Io { .. } | CommandError::Other(_) => 2,
            CommandError::Backend(_) => 3,
            CommandError::InvalidWorkflow(_) => 4,
            CommandError::Sandbox(_) => 5,
        }
    }
}

impl From<EvolutionError> for CommandError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::Backend(b) => CommandError::Backend(b),
            EvolutionError::InvalidWorkflow { cause, .. } => CommandError::InvalidWorkflow(format!("invalid workflow: {cause}")),
            EvolutionError::Corpus(c) => CommandError::Config(ConfigError::Invalid(c.to_string())),
            other => CommandError::Other(other.to_string()),
        }
    }
}

impl From<EvaluationError> for CommandError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Execution(ExecutionError::Sandbox(s)) => CommandError::Sandbox(s.to_string()),
            EvaluationError::Execution(ExecutionError::Backend(b)) => CommandError::Backend(b),
            other => CommandError::Other(other.to_string()),
        }
    }
}

/// Per-invocation overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub baseline: bool,
}

/// A loaded config plus the resolved output directory.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(mut config: RunConfig, opts: &Options) -> Result<Self, CommandError> {
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        let out = match (&opts.out_dir, &config.out_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => config.resolve(o),
            (None, None) => return Err(ConfigError::Invalid("no output directory (set out_dir or pass --out)".into()).into()),
        };
        Ok(Self { config, out })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&self, rel: &str, contents: &str) -> Result<PathBuf, CommandError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CommandError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, contents).map_err(|source| CommandError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf, CommandError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(rel, &text)
    }

    fn write_jsonl<T: Serialize>(&self, rel: &str, rows: &[T]) -> Result<PathBuf, CommandError> {
        let mut buf = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut buf, row).expect("artifact serializes");
            buf.write_all(b"\n").expect("in-memory write");
        }
        self.write(rel, &String::from_utf8(buf).expect("json is utf-8"))
    }

    fn write_common(&self, backend: &RecordingBackend) -> Result<(), CommandError> {
        let mut resolved = self.config.resolved_json();
        resolved.push('\n');
        self.write("config.resolved.json", &resolved)?;
        self.write("fingerprint.txt", &format!("{}\n", self.config.fingerprint()))?;
        let path = self.path("transcript.jsonl");
        fs::create_dir_all(&self.out).map_err(|source| CommandError::Io {
            path: self.out.clone(),
            source,
        })?;
        write_transcript(&path, &backend.records()).map_err(|source| CommandError::Io { path, source })
    }

    fn producers(&self) -> CodeProducers {
        match &self.config.workflow.code_producers {
            Some(stems) => CodeProducers::new(stems.clone()),
            None => CodeProducers::default(),
        }
    }

    fn evolver<'a>(&self, backend: &'a RecordingBackend) -> Evolver<'a> {
        let mut ev = Evolver::new(backend, self.config.evolution_decoding());
        ev.separator = self.config.evolution.separator.clone();
        ev.producers = self.producers();
        ev
    }

    fn executor<'a>(&self, backend: &'a RecordingBackend) -> Executor<'a> {
        let mut ex = Executor::new(backend, self.config.sampling_decoding(), self.config.sandbox.clone());
        ex.separator = self.config.evolution.separator.clone();
        ex.loop_policy = LoopPolicy {
            max_iterations: self.config.eval.max_iterations,
        };
        ex.producers = self.producers();
        ex.seed = self.config.seed;
        ex
    }

    fn template(&self) -> Result<WorkflowTemplate, CommandError> {
        match &self.config.workflow.template {
            None => Ok(WorkflowTemplate::bundled()),
            Some(p) => {
                let doc = read_doc(&self.config.resolve(p))?;
                WorkflowTemplate::new(doc).map_err(|e| ConfigError::Invalid(format!("template: {e}")).into())
            }
        }
    }
}

/// Reads a workflow document; the file extension names its scheme.
pub fn read_doc(path: &Path) -> Result<WorkflowDoc, CommandError> {
    let scheme: Scheme = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .parse()
        .map_err(|e| ConfigError::Input {
            path: path.to_path_buf(),
            message: format!("{e}"),
        })?;
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(WorkflowDoc::new(text, scheme))
}

/// Reads every `<name>.prompt.txt` in `dir`.
pub fn read_agents(dir: &Path) -> Result<Vec<AgentSpec>, CommandError> {
    let entries = fs::read_dir(dir).map_err(|source| ConfigError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut agents = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| ConfigError::Read {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let Some(name) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".prompt.txt"))
        else {
            continue;
        };
        let prompt = fs::read_to_string(&path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        let spec = AgentSpec::new(name, prompt).map_err(|e| ConfigError::Input {
            path: path.clone(),
            message: e.to_string(),
        })?;
        agents.push(spec);
    }
    agents.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(agents)
}

fn agents_files(run: &Run, dir: &str, agents: &[AgentSpec]) -> Result<(), CommandError> {
    for a in agents {
        run.write(&format!("{dir}/{}.prompt.txt", a.name), &a.prompt)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub files: Vec<PathBuf>,
    pub calls: usize,
    pub tokens: TokenTotals,
    pub notes: Vec<String>,
}

impl Summary {
    fn new(command: &'static str, backend: &RecordingBackend) -> Self {
        Self {
            command,
            files: Vec::new(),
            calls: backend.len(),
            tokens: transcript_totals(&backend.records()),
            notes: Vec::new(),
        }
    }
}

/// One default workflow per configured scheme.
pub fn cmd_generate(config: RunConfig, opts: &Options) -> Result<Summary, CommandError> {
    let run = Run::new(config, opts)?;
    let corpus = run.config.corpus()?;
    let task_desc = run.config.task_description(&corpus)?;
    let template = run.template()?;
    let backend = run.config.backend()?;
    let ev = run.evolver(&backend);

    let mut files = Vec::new();
    let result = (|| {
        for &scheme in &run.config.workflow.schemes {
            let doc = ev.generate_default_workflow(&task_desc, &template, scheme)?.value;
            files.push(run.write(&format!("workflows/default.{scheme}"), &doc.text)?);
        }
        Ok::<_, CommandError>(())
    })();
    run.write_common(&backend)?;
    result?;
    let mut s = Summary::new("generate", &backend);
    s.files = files;
    Ok(s)
}

#[derive(Serialize)]
struct InvalidReport<'a> {
    scheme: Scheme,
    cause: &'a crate::evolution::InvalidCause,
}

/// Generate, evolve and validate one workflow, then generate and evolve its
/// agents. Uses the first configured scheme, method and mutation prompt.
pub fn cmd_evolve(config: RunConfig, opts: &Options) -> Result<Summary, CommandError> {
    let run = Run::new(config, opts)?;
    let corpus = run.config.corpus()?;
    let task_desc = run.config.task_description(&corpus)?;
    let template = run.template()?;
    let mutation = run.config.mutation_ids(&corpus)?[0];
    let scheme = run.config.workflow.schemes[0];
    let method = run.config.evolution.methods[0];
    let selection = Selection {
        mutation,
        hyper_mutation: run.config.corpus.hyper_mutation_id,
        thinking_style: run.config.corpus.thinking_style_id,
    };
    let backend = run.config.backend()?;
    let ev = run.evolver(&backend);

    let outcome = ev.run_sew(&task_desc, &template, scheme, method, &corpus, selection);
    let mut s = Summary::new("evolve", &backend);
    match outcome {
        Ok(sew) => {
            s.files
                .push(run.write(&format!("workflows/default.{scheme}"), &sew.default_workflow.text)?);
            s.files
                .push(run.write(&format!("workflows/evolved.{scheme}"), &sew.evolved_workflow.text)?);
            agents_files(&run, "agents", &sew.agents)?;
            agents_files(&run, "agents/default", &sew.default_agents)?;
            s.files.push(run.write_jsonl("lineage.jsonl", &sew.lineage)?);
            run.write_common(&backend)?;
            s.notes.push(format!("{} agents evolved with {method}", sew.agents.len()));
            Ok(s)
        }
        Err(EvolutionError::InvalidWorkflow { doc, cause }) => {
            // Keep what was produced so the failure can be inspected.
            run.write(&format!("workflows/evolved.{scheme}"), &doc.text)?;
            run.write_json("validity.json", &InvalidReport { scheme, cause: &cause })?;
            let lineage: Vec<EvolvedArtifact> = Vec::new();
            run.write_jsonl("lineage.jsonl", &lineage)?;
            run.write_common(&backend)?;
            Err(CommandError::InvalidWorkflow(format!("invalid workflow: {cause}")))
        }
        Err(e) => {
            run.write_common(&backend)?;
            Err(e.into())
        }
    }
}

#[derive(Serialize)]
struct TokenReport {
    totals: TokenTotals,
    by_role: std::collections::BTreeMap<String, TokenTotals>,
}

fn eval_target(run: &Run) -> Result<(WorkflowIr, Vec<AgentSpec>), CommandError> {
    let wf = run
        .config
        .eval
        .workflow
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("eval.workflow is required".into()))?;
    let doc = read_doc(&run.config.resolve(wf))?;
    let w = parse_checked(&doc, &run.producers()).map_err(CommandError::from)?;
    let dir = match &run.config.eval.agents {
        Some(d) => run.config.resolve(d),
        None => run.config.resolve(wf).parent().map(|p| p.join("agents")).unwrap_or_default(),
    };
    Ok((w, read_agents(&dir)?))
}

/// Evaluates the configured workflow (or the single-agent baseline with
/// `--baseline`) on the configured split.
pub fn cmd_eval(config: RunConfig, opts: &Options) -> Result<Summary, CommandError> {
    let run = Run::new(config, opts)?;
    let (validation, test) = run.config.tasks()?;
    let tasks = match run.config.eval.split {
        Split::Validation => validation,
        Split::Test => test,
        Split::All => {
            let mut all = validation;
            all.extend(test);
            all.sort_by(|a, b| a.id.cmp(&b.id));
            all.dedup_by(|a, b| a.id == b.id);
            all
        }
    };
    let target = if opts.baseline { None } else { Some(eval_target(&run)?) };
    let backend = run.config.backend()?;
    let exec = run.executor(&backend);
    let fp = run.config.fingerprint();
    let set_id = run.config.dataset.as_ref().map_or("tasks", |d| d.id.as_str()).to_string();
    let (n, ks) = (run.config.eval.n, run.config.eval.ks.clone());

    let result = (|| -> Result<(EvalReport, Option<evaluation::Comparison>), CommandError> {
        match &target {
            None => Ok((evaluation::baseline_single_agent(&exec, &tasks, n, &ks, &set_id, &fp)?, None)),
            Some((w, agents)) => {
                let report = evaluation::evaluate(&exec, w, agents, &tasks, n, &ks, &set_id, &fp)?;
                let comparison = if run.config.eval.compare_baseline {
                    let base = evaluation::baseline_single_agent(&exec, &tasks, n, &ks, &set_id, &fp)?;
                    Some(compare(base, report.clone()))
                } else {
                    None
                };
                Ok((report, comparison))
            }
        }
    })();
    let (report, comparison) = match result {
        Ok(r) => r,
        Err(e) => {
            run.write_common(&backend)?;
            return Err(e);
        }
    };

    let mut s = Summary::new("eval", &backend);
    s.files.push(run.write_json("report.json", &report)?);
    s.files.push(run.write("report.csv", &report.to_csv())?);
    let records = backend.records();
    s.files.push(run.write_json(
        "tokens.json",
        &TokenReport {
            totals: transcript_totals(&records),
            by_role: totals_by_role(&records),
        },
    )?);
    if let Some(c) = comparison {
        s.files.push(run.write_json("comparison.json", &c)?);
    }
    if !report.excluded.is_empty() {
        s.notes
            .push(format!("{} task(s) excluded after backend errors", report.excluded.len()));
    }
    run.write_common(&backend)?;
    Ok(s)
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    points: usize,
    valid: usize,
    evaluated: usize,
    failures: usize,
    best: Option<&'a evaluation::SearchRecord>,
}

/// Exhaustive sweep over schemes x mutation prompts x methods, scored on
/// the validation split. Grid-point failures are recorded, not fatal.
pub fn cmd_search(config: RunConfig, opts: &Options) -> Result<Summary, CommandError> {
    let run = Run::new(config, opts)?;
    let corpus = run.config.corpus()?;
    let task_desc = run.config.task_description(&corpus)?;
    let template = run.template()?;
    let (validation, _) = run.config.tasks()?;
    let grid = SearchGrid {
        schemes: run.config.workflow.schemes.clone(),
        mutation_prompt_ids: run.config.mutation_ids(&corpus)?,
        methods: run.config.evolution.methods.clone(),
        hyper_mutation_prompt_id: run.config.corpus.hyper_mutation_id,
        thinking_style_id: run.config.corpus.thinking_style_id,
        n: run.config.eval.n,
        ks: run.config.eval.ks.clone(),
    };
    let backend = run.config.backend()?;
    let ev = run.evolver(&backend);
    let exec = run.executor(&backend);
    let fp = run.config.fingerprint();

    let outcome = evaluation::search(&ev, &exec, &grid, &template, &task_desc, &corpus, &validation, &fp);

    let mut s = Summary::new("search", &backend);
    for (id, sew) in &outcome.runs {
        let dir = format!("search/points/{id}");
        let scheme = sew.evolved_workflow.scheme;
        run.write(&format!("{dir}/workflow.{scheme}"), &sew.evolved_workflow.text)?;
        agents_files(&run, &format!("{dir}/agents"), &sew.agents)?;
        run.write_jsonl(&format!("{dir}/lineage.jsonl"), &sew.lineage)?;
    }
    s.files.push(run.write_jsonl("search/records.jsonl", &outcome.records)?);
    s.files
        .push(run.write("search/rates.csv", &evaluation::rates_csv(&outcome.rate_reports))?);
    s.files
        .push(run.write("search/methods.csv", &evaluation::methods_csv(&outcome.records))?);
    if let Some(best) = outcome.best_record() {
        let sew = &outcome.runs[&best.point_id()];
        let scheme = sew.evolved_workflow.scheme;
        s.files
            .push(run.write(&format!("search/best/workflow.{scheme}"), &sew.evolved_workflow.text)?);
        agents_files(&run, "search/best/agents", &sew.agents)?;
        run.write_json("search/best/record.json", best)?;
    } else {
        s.notes.push("no grid point produced a scored workflow".into());
    }
    let summary = SearchSummary {
        points: outcome.records.len(),
        valid: outcome.records.iter().filter(|r| r.validity.is_valid()).count(),
        evaluated: outcome.records.iter().filter(|r| r.validation_score.is_some()).count(),
        failures: outcome.failures(),
        best: outcome.best_record(),
    };
    run.write_json("search/summary.json", &summary)?;
    s.notes.push(format!(
        "{} points, {} valid, {} failed",
        summary.points, summary.valid, summary.failures
    ));
    run.write_common(&backend)?;
    Ok(s)
}
