//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::sample::Index;
use sew_core::ir::{StepSpec, WorkflowIr, TASK_DESCRIPTION};

pub fn asset(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(rel)
}

pub fn workspace_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,9}"
}

const TERMINALS: [&str; 4] = [
    "code_generation_agent",
    "code_refinement_agent",
    "code_rewriting_agent",
    "final_code_generation",
];

/// Valid workflows of 1..=`max_steps` steps. Every arg is bound by the task
/// description or an earlier output, outputs are unique, and the last agent
/// produces code.
pub fn valid_ir(max_steps: usize) -> impl Strategy<Value = WorkflowIr> {
    prop::collection::vec((token(), token(), prop::collection::vec(any::<Index>(), 0..4)), 1..=max_steps)
        .prop_flat_map(|raw| (Just(raw), prop::sample::select(TERMINALS.to_vec())))
        .prop_map(|(raw, terminal)| {
            let n = raw.len();
            let mut outputs: Vec<String> = Vec::new();
            let mut steps = Vec::new();
            for (i, (name, out, picks)) in raw.into_iter().enumerate() {
                let pool: Vec<String> = std::iter::once(TASK_DESCRIPTION.to_string())
                    .chain(outputs.iter().cloned())
                    .collect();
                let args: Vec<String> = picks.iter().map(|ix| ix.get(&pool).clone()).collect();
                let output = format!("{out}_{i}");
                let name = if i + 1 == n { terminal.to_string() } else { name };
                outputs.push(output.clone());
                steps.push(StepSpec::new(name, args, output));
            }
            WorkflowIr::new(steps)
        })
}

fn wild_token() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => prop::sample::select(vec!["a", "b", "c", "parsed", "code", TASK_DESCRIPTION]).prop_map(str::to_string),
        1 => prop::sample::select(vec!["Bad", "9lives", "has-dash", "_x", ""]).prop_map(str::to_string),
    ]
}

fn wild_name() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => prop::sample::select(vec!["task_parsing_agent", "code_reviewer_agent", "code_generation_agent", "code_refinement_agent"])
            .prop_map(str::to_string),
        1 => wild_token(),
    ]
}

/// Arbitrary workflows over small name pools, so collisions, unbound
/// args and bad tokens are common.
pub fn wild_ir() -> impl Strategy<Value = WorkflowIr> {
    prop::collection::vec((wild_name(), prop::collection::vec(wild_token(), 0..4), wild_token()), 0..=8)
        .prop_map(|steps| WorkflowIr::new(steps.into_iter().map(|(n, a, o)| StepSpec::new(n, a, o)).collect()))
}

/// Half valid workflows, half arbitrary ones.
pub fn any_ir() -> impl Strategy<Value = WorkflowIr> {
    prop_oneof![valid_ir(8), wild_ir()]
}

/// Brute-force validity check returning sorted `(RULE, step_index)` pairs.
pub fn oracle_violations(w: &WorkflowIr, producer_stems: &[&str]) -> Vec<(String, usize)> {
    let token = regex::Regex::new(r"^[a-z][a-z0-9_]*$").unwrap();
    let mut found = Vec::new();
    if w.steps.is_empty() {
        return vec![("EMPTY".to_string(), 0)];
    }
    for (i, step) in w.steps.iter().enumerate() {
        if !token.is_match(&step.name) {
            found.push(("BAD_TOKEN".to_string(), i));
        }
        if !token.is_match(&step.output) {
            found.push(("BAD_TOKEN".to_string(), i));
        }
        for arg in &step.args {
            if !token.is_match(arg) {
                found.push(("BAD_TOKEN".to_string(), i));
            }
            let mut bound = arg == TASK_DESCRIPTION;
            for j in 0..i {
                if w.steps[j].output == *arg {
                    bound = true;
                }
            }
            if !bound {
                found.push(("UNBOUND_ARG".to_string(), i));
            }
        }
        let mut clash = step.output == TASK_DESCRIPTION;
        for j in 0..i {
            if w.steps[j].output == step.output {
                clash = true;
            }
        }
        if clash {
            found.push(("DUPLICATE_OUTPUT".to_string(), i));
        }
    }
    let last = w.steps.len() - 1;
    if !producer_stems.iter().any(|s| w.steps[last].name.contains(s)) {
        found.push(("NONTERMINAL_CODER".to_string(), last));
    }
    found.sort();
    found
}

/// pass@k by enumerating every k-subset of n samples, c of which pass.
pub fn pass_at_k_by_subsets(n: usize, c: usize, k: usize) -> f64 {
    let mut total = 0u64;
    let mut hit = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        total += 1;
        // Samples 0..c are the passing ones.
        if (0..c).any(|i| mask & (1 << i) != 0) {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

pub fn distinct<T: Ord + Clone>(items: &[T]) -> BTreeSet<T> {
    items.iter().cloned().collect()
}
