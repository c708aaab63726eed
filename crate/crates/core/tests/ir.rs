mod common;

use proptest::prelude::*;
use sew_core::ir::{topo_order, validate, CodeProducers, DEFAULT_CODE_PRODUCERS};

fn violations(w: &sew_core::ir::WorkflowIr) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = validate(w, &CodeProducers::default())
        .violations
        .iter()
        .map(|v| (v.rule.to_string(), v.step_index))
        .collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn validate_matches_brute_force(w in common::any_ir()) {
        let expected = common::oracle_violations(&w, &DEFAULT_CODE_PRODUCERS);
        prop_assert_eq!(violations(&w), expected.clone());
        prop_assert_eq!(validate(&w, &CodeProducers::default()).valid, expected.is_empty());
    }

    #[test]
    fn validate_is_pure(w in common::any_ir()) {
        let p = CodeProducers::default();
        prop_assert_eq!(validate(&w, &p), validate(&w, &p));
    }

    #[test]
    fn valid_workflows_have_an_order(w in common::any_ir()) {
        if validate(&w, &CodeProducers::default()).valid {
            prop_assert_eq!(topo_order(&w).unwrap(), (0..w.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn generated_valid_workflows_are_valid(w in common::valid_ir(8)) {
        prop_assert!(validate(&w, &CodeProducers::default()).valid);
    }
}
