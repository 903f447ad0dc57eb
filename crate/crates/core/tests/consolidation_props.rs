//! Properties of the greedy descent on random matrix-oracle instances.

use proptest::prelude::*;

use rulekit_core::case::{FailureCase, ToolSpec, TraceStep};
use rulekit_core::consolidation::{
    consolidate, count_corrected, improving_edit, mdl, ConsolidationParams, EditSchedule,
    MatrixOracle,
};
use rulekit_core::retrieval::ToolCategoryMap;
use rulekit_core::rule::{parse_symbolic_syntax, ErrorType, Rule, RuleLibrary, Token, ToolScope};

const TOOLS: [&str; 4] = ["t0", "t1", "t2", "t3"];

fn tool_map() -> ToolCategoryMap {
    [("t0", "C0"), ("t1", "C0"), ("t2", "C1")]
        .into_iter()
        .map(|(t, c)| (t.to_string(), Token::new(c).unwrap()))
        .collect()
}

#[derive(Debug, Clone)]
struct Spec {
    rules: Vec<(usize, u8, bool)>,
    failure_tools: Vec<u8>,
    bits: Vec<Vec<bool>>,
    alpha: f64,
}

fn spec() -> impl Strategy<Value = Spec> {
    (1usize..9, 1usize..16).prop_flat_map(|(m, n)| {
        (
            proptest::collection::vec((1usize..5, 1u8..16, any::<bool>()), m),
            proptest::collection::vec(1u8..16, n),
            proptest::collection::vec(
                proptest::collection::vec(proptest::bool::weighted(0.3), n),
                m,
            ),
            prop_oneof![Just(0.1), Just(0.3), Just(0.5), Just(1.0)],
        )
            .prop_map(|(rules, failure_tools, bits, alpha)| Spec {
                rules,
                failure_tools,
                bits,
                alpha,
            })
    })
}

fn names(mask: u8) -> Vec<String> {
    (0..4)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| TOOLS[i].to_string())
        .collect()
}

struct Built {
    library: RuleLibrary,
    failures: Vec<FailureCase>,
    oracle: MatrixOracle,
}

fn build(s: &Spec) -> Built {
    let rules: Vec<Rule> = s
        .rules
        .iter()
        .enumerate()
        .map(|(i, &(actions, tools, scoped))| {
            let acts: Vec<String> = (0..actions).map(|a| format!("A{a}")).collect();
            let form = parse_symbolic_syntax(&format!(
                "if (domain=D) then (action=[{}]) with strength=MANDATORY",
                acts.join(", ")
            ))
            .unwrap();
            let (et, scope) = if scoped {
                (ErrorType::ToolSelection, ToolScope::tools(names(tools)))
            } else {
                (ErrorType::Decomposition, ToolScope::Unscoped)
            };
            Rule::new(
                &format!("If case {i} holds, then act."),
                et,
                scope,
                Vec::<String>::new(),
            )
            .unwrap()
            .with_symbolic(form)
        })
        .collect();
    let failures: Vec<FailureCase> = s
        .failure_tools
        .iter()
        .enumerate()
        .map(|(i, &mask)| FailureCase {
            id: format!("f{i:02}"),
            query: format!("q{i}"),
            tools: names(mask).into_iter().map(ToolSpec::new).collect(),
            incorrect_trace: vec![TraceStep::default()],
            gold_trace: vec![TraceStep::default()],
            gold_answer: "a".into(),
        })
        .collect();
    let ids: Vec<_> = rules.iter().map(|r| r.id.clone()).collect();
    let fids: Vec<String> = failures.iter().map(|f| f.id.clone()).collect();
    let oracle = MatrixOracle::from_bits(&ids, &fids, &s.bits).with_tool_categories(tool_map());
    Built {
        library: RuleLibrary::from_rules(rules, "").unwrap(),
        failures,
        oracle,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn descent_properties(s in spec(), per_rule in any::<bool>()) {
        let schedule = if per_rule { EditSchedule::PerRule } else { EditSchedule::Steepest };
        let b = build(&s);
        let params = ConsolidationParams::new(s.alpha).with_schedule(schedule);
        let map = tool_map();
        let (out, trace) = consolidate(&b.library, &b.failures, params, &b.oracle, &map).unwrap();

        let initial = trace.initial_mdl.unwrap();
        let fin = trace.final_mdl.unwrap();
        prop_assert!(fin.total <= initial.total + 1e-9);
        prop_assert!((mdl(&out, &b.failures, s.alpha, &b.oracle).unwrap().total - fin.total).abs() < 1e-9);

        let mut prev = initial.total;
        for e in &trace.edits {
            prop_assert!((e.mdl_before - prev).abs() < 1e-9);
            prop_assert!(e.mdl_after < e.mdl_before - 1e-9);
            prev = e.mdl_after;
        }

        prop_assert!(trace.converged);
        prop_assert!(improving_edit(&out, &b.failures, s.alpha, &b.oracle, &map).unwrap().is_none());

        // Each rule can be generalized at most once and pruned at most once.
        let h0 = b.library.len();
        prop_assert!(trace.edits.len() <= 2 * h0);
        prop_assert!(trace.passes <= 2 * h0 + 1);
        if b.library.rules().iter().all(|r| r.tool_scope.is_unscoped()) {
            prop_assert!(trace.passes <= h0 + 1);
        }

        prop_assert!(fin.k >= initial.k.min(fin.n.div_ceil(2)));

        let (again, trace2) = consolidate(&b.library, &b.failures, params, &b.oracle, &map).unwrap();
        prop_assert_eq!(again.hash(), out.hash());
        prop_assert_eq!(trace2, trace);
    }

    #[test]
    fn matrix_oracle_is_monotone(s in spec(), drop in any::<prop::sample::Index>()) {
        let b = build(&s);
        let id = b.library.sorted_ids()[drop.index(b.library.len())].clone();
        let smaller = b.library.without(&id);
        let k_full = count_corrected(&b.oracle, &b.library, &b.failures).unwrap();
        let k_small = count_corrected(&b.oracle, &smaller, &b.failures).unwrap();
        prop_assert!(k_small <= k_full);
    }
}
