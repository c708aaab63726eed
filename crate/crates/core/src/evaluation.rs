//! pass@k, success rates, evaluation reports and the exhaustive search.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{transcript_totals, TokenTotals};
use crate::evolution::{
    EvolutionError, EvolutionMethod, Evolver, InvalidCause, PromptCorpus, Selection, SewRun, WorkflowTemplate,
};
use crate::execution::{ExecutionError, Executor, TaskInstance};
use crate::ir::{AgentSpec, StepSpec, ValidityReport, WorkflowIr, TASK_DESCRIPTION};
use crate::repr::{ParseFailure, Scheme, WorkflowDoc};

pub const BASELINE_PROMPT: &str = include_str!("../assets/prompts/baseline_agent.txt");
pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pass@k needs 1 <= k <= n and c <= n (n={n}, c={c}, k={k})")]
pub struct DomainError {
    pub n: u64,
    pub c: u64,
    pub k: u64,
}

/// Unbiased estimator `1 - C(n-c, k) / C(n, k)`, evaluated as the product
/// `prod_{i=n-c+1}^{n} (1 - k/i)` so no binomial is ever formed.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, DomainError> {
    if k == 0 || k > n || c > n {
        return Err(DomainError { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// One evolved workflow document and what became of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub doc: WorkflowDoc,
    pub validity: Result<ValidityReport, ParseFailure>,
    /// An end-to-end run produced extractable, syntax-valid code.
    pub executed_ok: bool,
}

impl Variant {
    pub fn is_valid(&self) -> bool {
        matches!(&self.validity, Ok(r) if r.valid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scheme: Scheme,
    pub total_variants: usize,
    pub valid_count: usize,
    pub executable_count: usize,
    pub lsr: f64,
    pub gsr: f64,
}

impl RateReport {
    pub fn from_counts(scheme: Scheme, total: usize, valid: usize, executable: usize) -> Self {
        Self {
            scheme,
            total_variants: total,
            valid_count: valid,
            executable_count: executable,
            lsr: valid as f64 / total as f64,
            gsr: executable as f64 / total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RateError {
    #[error("no variants to rate")]
    EmptyInput,
    #[error("variants mix schemes {0} and {1}")]
    MixedSchemes(Scheme, Scheme),
}

/// Valid means parsed and validated; executable additionally requires
/// `executed_ok`, so executable never exceeds valid.
pub fn compute_rates(variants: &[Variant]) -> Result<RateReport, RateError> {
    let first = variants.first().ok_or(RateError::EmptyInput)?.doc.scheme;
    if let Some(v) = variants.iter().find(|v| v.doc.scheme != first) {
        return Err(RateError::MixedSchemes(first, v.doc.scheme));
    }
    let valid = variants.iter().filter(|v| v.is_valid()).count();
    let executable = variants.iter().filter(|v| v.is_valid() && v.executed_ok).count();
    Ok(RateReport::from_counts(first, variants.len(), valid, executable))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskScore {
    pub n: usize,
    pub c: usize,
    /// Some candidate had extractable, syntax-valid code.
    pub any_code: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_set_id: String,
    pub per_task: BTreeMap<String, TaskScore>,
    pub pass_at: BTreeMap<usize, f64>,
    pub token_totals: TokenTotals,
    pub config_fingerprint: String,
    /// Tasks dropped because the backend failed for them.
    pub excluded: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn pass1(&self) -> Option<f64> {
        self.pass_at.get(&1).copied()
    }

    pub fn any_code(&self) -> bool {
        self.per_task.values().any(|s| s.any_code)
    }

    /// One row per task, then one per k.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_id,n,c\n");
        for (id, s) in &self.per_task {
            let _ = writeln!(out, "{},{},{}", csv_field(id), s.n, s.c);
        }
        out.push_str("\nk,pass_at_k\n");
        for (k, v) in &self.pass_at {
            let _ = writeln!(out, "{k},{v:.6}");
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("n = {n} is smaller than k = {k}")]
    SampleCount { n: usize, k: usize },
    #[error(transparent)]
    Execution(#[from] ExecutionError),
}

/// Samples `n` candidates per task and averages pass@k over the tasks that
/// completed. Backend failures exclude a task; sandbox failures abort.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    exec: &Executor<'_>,
    w: &WorkflowIr,
    agents: &[AgentSpec],
    tasks: &[TaskInstance],
    n: usize,
    ks: &[usize],
    task_set_id: &str,
    config_fingerprint: &str,
) -> Result<EvalReport, EvaluationError> {
    if let Some(&k) = ks.iter().find(|&&k| k > n || k == 0) {
        return Err(EvaluationError::SampleCount { n, k });
    }
    let first_call = exec.backend.last_call_id();
    let mut sorted: Vec<&TaskInstance> = tasks.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut per_task = BTreeMap::new();
    let mut excluded = BTreeMap::new();
    for task in sorted {
        match exec.sample_candidates(w, agents, task, n) {
            Ok(results) => {
                per_task.insert(
                    task.id.clone(),
                    TaskScore {
                        n,
                        c: results.iter().filter(|r| r.passed_all).count(),
                        any_code: results.iter().any(|r| r.syntax_ok),
                    },
                );
            }
            Err(ExecutionError::Backend(e)) => {
                excluded.insert(task.id.clone(), e.to_string());
            }
            Err(e) => return Err(e.into()),
        }
    }

    let mut pass_at = BTreeMap::new();
    for &k in ks {
        let sum: f64 = per_task
            .values()
            .map(|s| pass_at_k(s.n as u64, s.c as u64, k as u64).expect("k <= n checked above"))
            .sum();
        let mean = if per_task.is_empty() {
            0.0
        } else {
            sum / per_task.len() as f64
        };
        pass_at.insert(k, mean);
    }

    Ok(EvalReport {
        task_set_id: task_set_id.to_string(),
        per_task,
        pass_at,
        token_totals: transcript_totals(&exec.backend.records_after(first_call)),
        config_fingerprint: config_fingerprint.to_string(),
        excluded,
    })
}

/// The one-step workflow used as the single-agent baseline.
pub fn baseline_workflow() -> (WorkflowIr, Vec<AgentSpec>) {
    let w = WorkflowIr::new(vec![StepSpec::new(
        "code_generation_agent",
        [TASK_DESCRIPTION],
        "generated_code",
    )]);
    let agent = AgentSpec::new("code_generation_agent", BASELINE_PROMPT.trim()).expect("baseline prompt is non-empty");
    (w, vec![agent])
}

pub fn baseline_single_agent(
    exec: &Executor<'_>,
    tasks: &[TaskInstance],
    n: usize,
    ks: &[usize],
    task_set_id: &str,
    config_fingerprint: &str,
) -> Result<EvalReport, EvaluationError> {
    let (w, agents) = baseline_workflow();
    evaluate(exec, &w, &agents, tasks, n, ks, task_set_id, config_fingerprint)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub k: usize,
    pub baseline: f64,
    pub sew: f64,
    /// Relative change in percent; absent when the baseline is zero.
    pub improvement_pct: Option<f64>,
}

/// Baseline and SEW reports side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: EvalReport,
    pub sew: EvalReport,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(baseline: EvalReport, sew: EvalReport) -> Comparison {
    let rows = baseline
        .pass_at
        .iter()
        .filter_map(|(&k, &b)| {
            sew.pass_at.get(&k).map(|&s| ComparisonRow {
                k,
                baseline: b,
                sew: s,
                improvement_pct: (b > 0.0).then(|| (s - b) / b * 100.0),
            })
        })
        .collect();
    Comparison { baseline, sew, rows }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointValidity {
    Valid {
        report: ValidityReport,
    },
    Invalid {
        report: ValidityReport,
    },
    ParseFailure {
        failure: ParseFailure,
    },
    /// The point could not be completed (backend or sandbox trouble).
    Error {
        message: String,
    },
}

impl PointValidity {
    pub fn is_valid(&self) -> bool {
        matches!(self, PointValidity::Valid { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub scheme: Scheme,
    pub mutation_prompt_id: usize,
    pub method: EvolutionMethod,
    pub validity: PointValidity,
    pub executed_ok: bool,
    pub validation_score: Option<f64>,
    #[serde(default)]
    pub validation_pass_at: BTreeMap<usize, f64>,
    /// Tokens spent on this grid point, evolution and validation together.
    pub tokens: u64,
    pub artifact_path: String,
}

impl SearchRecord {
    pub fn point_id(&self) -> String {
        point_id(self.scheme, self.mutation_prompt_id, self.method)
    }
}

pub fn point_id(scheme: Scheme, mutation_prompt_id: usize, method: EvolutionMethod) -> String {
    format!("{scheme}-m{mutation_prompt_id}-{method}")
}

#[derive(Debug, Clone)]
pub struct SearchGrid {
    pub schemes: Vec<Scheme>,
    pub mutation_prompt_ids: Vec<usize>,
    pub methods: Vec<EvolutionMethod>,
    /// Corpus entries for the hyper-evolution methods.
    pub hyper_mutation_prompt_id: usize,
    pub thinking_style_id: usize,
    pub n: usize,
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub records: Vec<SearchRecord>,
    /// Index into `records`.
    pub best: Option<usize>,
    pub rate_reports: BTreeMap<Scheme, RateReport>,
    /// Evolved workflow and agents per valid point, keyed by point id.
    pub runs: BTreeMap<String, SewRun>,
}

impl SearchOutcome {
    pub fn best_record(&self) -> Option<&SearchRecord> {
        self.best.map(|i| &self.records[i])
    }

    pub fn failures(&self) -> usize {
        self.records
            .iter()
            .filter(|r| !r.validity.is_valid() || r.validation_score.is_none())
            .count()
    }
}

/// Highest validation pass@1; ties go to fewer tokens, then to the smaller
/// (scheme tag, mutation prompt id, method tag).
pub fn select_best(records: &[SearchRecord]) -> Option<usize> {
    records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.validation_score.map(|s| (i, s, r)))
        .min_by(|(_, sa, a), (_, sb, b)| {
            sb.total_cmp(sa)
                .then(a.tokens.cmp(&b.tokens))
                .then(a.scheme.tag().cmp(b.scheme.tag()))
                .then(a.mutation_prompt_id.cmp(&b.mutation_prompt_id))
                .then(a.method.tag().cmp(b.method.tag()))
        })
        .map(|(i, ..)| i)
}

/// Runs every grid point in order (scheme, mutation prompt, method),
/// evaluating valid workflows on the validation tasks. Failed points are
/// recorded and the sweep continues.
#[allow(clippy::too_many_arguments)]
pub fn search(
    evolver: &Evolver<'_>,
    exec: &Executor<'_>,
    grid: &SearchGrid,
    template: &WorkflowTemplate,
    task_desc: &str,
    corpus: &PromptCorpus,
    validation_tasks: &[TaskInstance],
    config_fingerprint: &str,
) -> SearchOutcome {
    let mut records = Vec::new();
    let mut variants: BTreeMap<Scheme, Vec<Variant>> = BTreeMap::new();
    let mut runs = BTreeMap::new();

    for &scheme in &grid.schemes {
        for &mutation in &grid.mutation_prompt_ids {
            for &method in &grid.methods {
                let before = evolver.backend.last_call_id();
                let selection = Selection {
                    mutation,
                    hyper_mutation: grid.hyper_mutation_prompt_id,
                    thinking_style: grid.thinking_style_id,
                };
                let id = point_id(scheme, mutation, method);
                let mut record = SearchRecord {
                    scheme,
                    mutation_prompt_id: mutation,
                    method,
                    validity: PointValidity::Error { message: String::new() },
                    executed_ok: false,
                    validation_score: None,
                    validation_pass_at: BTreeMap::new(),
                    tokens: 0,
                    artifact_path: format!("search/points/{id}"),
                };
                let variant_doc;
                match evolver.run_sew(task_desc, template, scheme, method, corpus, selection) {
                    Ok(run) => {
                        let report = crate::ir::validate(&run.workflow, &evolver.producers);
                        variant_doc = Some((run.evolved_workflow.clone(), Ok(report.clone())));
                        record.validity = PointValidity::Valid { report };
                        match evaluate(
                            exec,
                            &run.workflow,
                            &run.agents,
                            validation_tasks,
                            grid.n,
                            &grid.ks,
                            "validation",
                            config_fingerprint,
                        ) {
                            Ok(eval) if eval.per_task.is_empty() => {
                                record.validity = PointValidity::Error {
                                    message: format!("every validation task failed ({} excluded)", eval.excluded.len()),
                                };
                            }
                            Ok(eval) => {
                                record.executed_ok = eval.any_code();
                                record.validation_score = eval.pass1();
                                record.validation_pass_at = eval.pass_at;
                            }
                            Err(e) => {
                                record.validity = PointValidity::Error { message: e.to_string() };
                            }
                        }
                        runs.insert(id, run);
                    }
                    Err(EvolutionError::InvalidWorkflow { doc, cause }) => {
                        record.validity = match &cause {
                            InvalidCause::Parse(p) => PointValidity::ParseFailure { failure: p.clone() },
                            InvalidCause::Rules(r) => PointValidity::Invalid { report: r.clone() },
                        };
                        variant_doc = Some((
                            doc,
                            match cause {
                                InvalidCause::Parse(p) => Err(p),
                                InvalidCause::Rules(r) => Ok(r),
                            },
                        ));
                    }
                    Err(e) => {
                        record.validity = PointValidity::Error { message: e.to_string() };
                        variant_doc = None;
                    }
                }
                if let Some((doc, validity)) = variant_doc {
                    variants.entry(scheme).or_default().push(Variant {
                        doc,
                        validity,
                        executed_ok: record.executed_ok,
                    });
                }
                record.tokens = transcript_totals(&evolver.backend.records_after(before)).total;
                records.push(record);
            }
        }
    }

    let rate_reports = variants
        .iter()
        .filter_map(|(&s, v)| compute_rates(v).ok().map(|r| (s, r)))
        .collect();
    SearchOutcome {
        best: select_best(&records),
        records,
        rate_reports,
        runs,
    }
}

/// `scheme,total,valid,executable,lsr,gsr`
pub fn rates_csv(reports: &BTreeMap<Scheme, RateReport>) -> String {
    let mut out = String::from("scheme,total,valid,executable,lsr,gsr\n");
    for r in reports.values() {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{:.4}",
            r.scheme, r.total_variants, r.valid_count, r.executable_count, r.lsr, r.gsr
        );
    }
    out
}

/// `workflow_fixture,method,pass@k...`, one row per evaluated grid point and
/// one column per k computed anywhere in the sweep (the default ks when
/// nothing was evaluated). A cell is empty when that k is missing for a row.
pub fn methods_csv(records: &[SearchRecord]) -> String {
    let evaluated: Vec<&SearchRecord> = records.iter().filter(|r| r.validation_score.is_some()).collect();
    let mut ks: Vec<usize> = evaluated.iter().flat_map(|r| r.validation_pass_at.keys().copied()).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        ks = DEFAULT_KS.to_vec();
    }
    let mut out = String::from("workflow_fixture,method");
    for k in &ks {
        let _ = write!(out, ",pass@{k}");
    }
    out.push('\n');
    for r in evaluated {
        let _ = write!(out, "{}-m{},{}", r.scheme, r.mutation_prompt_id, r.method);
        for k in &ks {
            let cell = r.validation_pass_at.get(k).map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = write!(out, ",{cell}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(10, 0, 1).unwrap(), 0.0);
        assert_eq!(pass_at_k(10, 10, 5).unwrap(), 1.0);
        assert!((pass_at_k(5, 2, 2).unwrap() - 0.7).abs() < 1e-12);
        assert!((pass_at_k(10, 3, 1).unwrap() - 0.3).abs() < 1e-12);
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
    }

    #[test]
    fn rates_worked_example() {
        let r = RateReport::from_counts(Scheme::Pysteps, 100, 50, 30);
        assert_eq!((r.lsr, r.gsr), (0.5, 0.3));
        assert!(matches!(compute_rates(&[]), Err(RateError::EmptyInput)));
    }

    fn record(scheme: Scheme, m: usize, method: EvolutionMethod, score: Option<f64>, tokens: u64) -> SearchRecord {
        SearchRecord {
            scheme,
            mutation_prompt_id: m,
            method,
            validity: PointValidity::Error { message: String::new() },
            executed_ok: false,
            validation_score: score,
            validation_pass_at: BTreeMap::new(),
            tokens,
            artifact_path: String::new(),
        }
    }

    #[test]
    fn best_selection_tie_breaks() {
        let recs = vec![
            record(Scheme::Yaml, 0, EvolutionMethod::DE1, Some(0.5), 100),
            record(Scheme::Core, 1, EvolutionMethod::DE1, Some(0.5), 90),
            record(Scheme::Bpmn, 0, EvolutionMethod::DE1, None, 1),
        ];
        assert_eq!(select_best(&recs), Some(1));
        let tie = vec![
            record(Scheme::Yaml, 0, EvolutionMethod::DE1, Some(0.5), 90),
            record(Scheme::Core, 1, EvolutionMethod::HE0, Some(0.5), 90),
            record(Scheme::Core, 1, EvolutionMethod::DE2, Some(0.5), 90),
        ];
        assert_eq!(select_best(&tie), Some(2));
        assert_eq!(select_best(&recs[2..]), None);
    }

    #[test]
    fn comparison_percentages() {
        let report = |p: f64| EvalReport {
            task_set_id: "t".into(),
            per_task: BTreeMap::new(),
            pass_at: BTreeMap::from([(1, p)]),
            token_totals: TokenTotals::default(),
            config_fingerprint: String::new(),
            excluded: BTreeMap::new(),
        };
        let c = compare(report(0.2), report(0.6));
        assert!((c.rows[0].improvement_pct.unwrap() - 200.0).abs() < 1e-9);
        assert_eq!(compare(report(0.0), report(0.6)).rows[0].improvement_pct, None);
    }
}
