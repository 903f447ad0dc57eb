//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the summary lines are always shown.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rulekit_core::case::{Case, FailureCase, ToolSpec, TraceStep};
use rulekit_core::consolidation::{
    bernoulli_code_length, consolidate, count_corrected, data_cost, mdl, select_alpha,
    ConsolidationParams, EditSchedule, MatrixOracle,
};
use rulekit_core::eval::{load_dataset, make_splits, Dataset};
use rulekit_core::retrieval::{
    coarse_filter, retrieve, QueryState, ToolCategoryMap, VocabIndicatorEmbedder,
};
use rulekit_core::rule::{
    parse_symbolic_syntax, symbolic_token_length, ConditionClause, Connective, ErrorType, Field,
    Rule, RuleId, RuleLibrary, SymbolicForm, Token, ToolScope, Vocabulary,
};

const TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn tok(s: &str) -> Token {
    Token::new(s).unwrap()
}

fn failure(id: &str) -> FailureCase {
    let step = vec![TraceStep::default()];
    FailureCase {
        id: id.to_string(),
        query: format!("query {id}"),
        tools: Vec::new(),
        incorrect_trace: step.clone(),
        gold_trace: step,
        gold_answer: "x".into(),
    }
}

fn failure_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i:02}")).collect()
}

/// Unscoped decomposition rule whose symbolic length is exactly `len` (>= 3).
fn rule_of_len(text: &str, len: usize) -> Rule {
    assert!(len >= 3);
    let actions: Vec<Token> = (0..len - 2).map(|i| tok(&format!("A{i}"))).collect();
    let form = SymbolicForm::new(
        vec![ConditionClause::DomainIs(tok("D"))],
        vec![],
        actions,
        tok("MANDATORY"),
    )
    .unwrap();
    Rule::new(
        text,
        ErrorType::Decomposition,
        ToolScope::Unscoped,
        Vec::<String>::new(),
    )
    .unwrap()
    .with_symbolic(form)
}

/// Plug-in Bernoulli code length, written independently of the library:
/// n ln n - k ln k - (n-k) ln(n-k).
fn reference_code_length(n: usize, k: usize) -> f64 {
    let xlx = |x: usize| {
        if x == 0 {
            0.0
        } else {
            x as f64 * (x as f64).ln()
        }
    };
    xlx(n) - xlx(k) - xlx(n - k)
}

fn criterion_1() -> Outcome {
    let got = bernoulli_code_length(10, 7);
    check((got - 6.108643).abs() <= 1e-6, format!("L(10,7) = {got}"))?;
    check(
        (got - reference_code_length(10, 7)).abs() <= 1e-12,
        "disagrees with reference",
    )?;
    for n in 1..=40 {
        check(
            bernoulli_code_length(n, 0) == 0.0 && bernoulli_code_length(n, n) == 0.0,
            format!("endpoints n={n}"),
        )?;
    }
    let ids = failure_ids(10);
    let failures: Vec<FailureCase> = ids.iter().map(|i| failure(i)).collect();
    let rule = rule_of_len("If x, then y.", 3);
    let oracle = MatrixOracle::from_bits(
        &[rule.id.clone()],
        &ids,
        &[(0..10).map(|i| i < 7).collect()],
    );
    let lib = RuleLibrary::from_rules(vec![rule], "").unwrap();
    let data = data_cost(&lib, &failures, &oracle).unwrap();
    check(
        (data - 6.108643).abs() <= 1e-6,
        format!("data_cost = {data}"),
    )?;
    Ok(format!("L(D|H) = {got:.6} nats at n=10, k=7"))
}

struct Instance {
    lengths: Vec<usize>,
    bits: Vec<Vec<bool>>,
    n: usize,
    alpha: f64,
}

impl Instance {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(2..=12);
        let n = rng.random_range(1..=32);
        let density = [0.05, 0.15, 0.3][rng.random_range(0..3)];
        let alpha = [0.1, 0.3, 0.5, 1.0][rng.random_range(0..4)];
        let lengths = (0..m).map(|_| rng.random_range(3..=8)).collect();
        let bits = (0..m)
            .map(|_| (0..n).map(|_| rng.random_bool(density)).collect())
            .collect();
        Instance {
            lengths,
            bits,
            n,
            alpha,
        }
    }

    fn k_of(&self, subset: &[usize]) -> usize {
        (0..self.n)
            .filter(|&i| subset.iter().any(|&r| self.bits[r][i]))
            .count()
    }

    fn mdl_of(&self, subset: &[usize]) -> f64 {
        let len: usize = subset.iter().map(|&r| self.lengths[r]).sum();
        self.alpha * len as f64 + reference_code_length(self.n, self.k_of(subset))
    }

    /// Exhaustive optimum over prune subsets in the admissible region.
    fn brute_force(&self) -> f64 {
        let m = self.lengths.len();
        let all: Vec<usize> = (0..m).collect();
        let k0 = self.k_of(&all);
        let floor = k0.min(self.n.div_ceil(2));
        (0u32..1 << m)
            .map(|mask| (0..m).filter(|r| mask & (1 << r) != 0).collect::<Vec<_>>())
            .filter(|s| self.k_of(s) >= floor)
            .map(|s| self.mdl_of(&s))
            .fold(f64::INFINITY, f64::min)
    }
}

const INSTANCES: u64 = 60;

/// Number of instances on which `schedule` reaches the exhaustive optimum,
/// after checking descent and local optimality on every instance.
fn greedy_vs_brute_force(schedule: EditSchedule) -> Result<(usize, Vec<String>), String> {
    let mut matched = 0;
    let mut gaps = Vec::new();
    for seed in 0..INSTANCES {
        let inst = Instance::random(seed);
        let ids = failure_ids(inst.n);
        let failures: Vec<FailureCase> = ids.iter().map(|i| failure(i)).collect();
        let rules: Vec<Rule> = inst
            .lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| rule_of_len(&format!("If case {i} holds, then act on it."), l))
            .collect();
        let index: BTreeMap<RuleId, usize> = rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let oracle = MatrixOracle::from_bits(
            &rules.iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
            &ids,
            &inst.bits,
        );
        let lib = RuleLibrary::from_rules(rules, "").unwrap();
        let (out, trace) = consolidate(
            &lib,
            &failures,
            ConsolidationParams::new(inst.alpha).with_schedule(schedule),
            &oracle,
            &ToolCategoryMap::new(),
        )
        .map_err(|e| e.to_string())?;
        let kept: Vec<usize> = out.rules().iter().map(|r| index[&r.id]).collect();
        let all: Vec<usize> = (0..inst.lengths.len()).collect();
        let initial = inst.mdl_of(&all);
        let final_mdl = inst.mdl_of(&kept);
        check(final_mdl <= initial + TOL, format!("seed {seed}: MDL rose"))?;
        check(
            (trace.final_mdl.as_ref().unwrap().total - final_mdl).abs() < 1e-6,
            format!("seed {seed}: trace MDL disagrees with reference"),
        )?;
        let k = inst.k_of(&kept);
        for &r in &kept {
            let rest: Vec<usize> = kept.iter().copied().filter(|&x| x != r).collect();
            let k2 = inst.k_of(&rest);
            if k2 < k && 2 * k2 < inst.n {
                continue;
            }
            check(
                inst.mdl_of(&rest) >= final_mdl - TOL,
                format!("seed {seed}: pruning rule {r} still improves"),
            )?;
        }
        let best = inst.brute_force();
        if (final_mdl - best).abs() <= 1e-6 {
            matched += 1;
        } else {
            gaps.push(format!("seed {seed}: gap {:.4}", final_mdl - best));
        }
    }
    Ok((matched, gaps))
}

fn criterion_2() -> Outcome {
    let (matched, gaps) = greedy_vs_brute_force(EditSchedule::Steepest)?;
    for g in &gaps {
        eprintln!("    {g}");
    }
    let (per_rule, _) = greedy_vs_brute_force(EditSchedule::PerRule)?;
    let n = INSTANCES as usize;
    check(
        matched as f64 / n as f64 >= 0.8,
        format!("matched {matched}/{n}"),
    )?;
    Ok(format!(
        "{matched}/{n} instances match the exhaustive optimum (per-rule schedule: {per_rule}/{n})"
    ))
}

fn criterion_3() -> Outcome {
    let ids = failure_ids(20);
    let failures: Vec<FailureCase> = ids.iter().map(|i| failure(i)).collect();
    let a = rule_of_len("If the first half applies, then act.", 6);
    let b = rule_of_len("If the second half applies, then act.", 6);
    let rows = vec![
        (0..20).map(|i| i < 10).collect(),
        (0..20).map(|i| i >= 10).collect(),
    ];
    let oracle = MatrixOracle::from_bits(&[a.id.clone(), b.id.clone()], &ids, &rows);
    let lib = RuleLibrary::from_rules(vec![a.clone(), b], "").unwrap();
    let alpha = 0.1;
    let before = mdl(&lib, &failures, alpha, &oracle).unwrap();
    let after = mdl(&lib.without(&a.id), &failures, alpha, &oracle).unwrap();
    check((before.k, after.k) == (20, 10), "fixture k values")?;
    let delta = after.total - before.total;
    check(delta > 0.0, format!("prune delta {delta}"))?;
    let (out, trace) = consolidate(
        &lib,
        &failures,
        ConsolidationParams::new(alpha),
        &oracle,
        &ToolCategoryMap::new(),
    )
    .map_err(|e| e.to_string())?;
    check(
        out.len() == 2 && trace.edits.is_empty(),
        "a prune was applied",
    )?;
    Ok(format!("prune rejected, dMDL = +{delta:.4}"))
}

fn criterion_4() -> Outcome {
    let dir = fixtures().join("redundant_pool");
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap();
    let lib = RuleLibrary::from_json(&read("library.json"), None).map_err(|e| e.to_string())?;
    let oracle = MatrixOracle::from_json(&read("oracle.json")).map_err(|e| e.to_string())?;
    let failures =
        rulekit_core::case::parse_failures(&read("failures.jsonl")).map_err(|e| e.to_string())?;
    check(lib.len() == 30, "pool size")?;
    let k0 = count_corrected(&oracle, &lib, &failures).unwrap();
    let (out, _) = consolidate(
        &lib,
        &failures,
        ConsolidationParams::new(0.5),
        &oracle,
        &ToolCategoryMap::new(),
    )
    .map_err(|e| e.to_string())?;
    let k1 = count_corrected(&oracle, &out, &failures).unwrap();
    check(out.len() < lib.len(), "rule count did not drop")?;
    check(k1 == k0, format!("k changed {k0} -> {k1}"))?;
    Ok(format!(
        "{} -> {} rules, k = {k0}/{}",
        lib.len(),
        out.len(),
        failures.len()
    ))
}

fn criterion_5() -> Outcome {
    let text = std::fs::read_to_string(fixtures().join("sample_rules.txt")).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    check(lines.len() == 24, format!("{} sample rules", lines.len()))?;
    for line in &lines {
        let form = parse_symbolic_syntax(line).map_err(|e| format!("{line}: {e}"))?;
        let canonical = form.to_canonical_string();
        let again = parse_symbolic_syntax(&canonical).map_err(|e| format!("{canonical}: {e}"))?;
        check(again == form, format!("round trip changed {line}"))?;
        check(
            again.to_canonical_string() == canonical,
            "canonical form not stable",
        )?;
    }
    let t4 = "if (domain=FAMILIAL_RELATIONSHIP or tool_category=GENEALOGY_QUERY) then \
              (action=[DECOMPOSE_QUERY, RESOLVE_INTERMEDIATE_ENTITY, SEQUENCE_SUBTASKS]) with strength=MANDATORY";
    let form = parse_symbolic_syntax(t4).map_err(|e| e.to_string())?;
    check(form.connectives == vec![Connective::Or], "connective")?;
    check(
        form.clauses[1] == ConditionClause::ToolCategoryIs(tok("GENEALOGY_QUERY")),
        "tool_category clause",
    )?;
    let rule = Rule::new(
        "r",
        ErrorType::Decomposition,
        ToolScope::Unscoped,
        Vec::<String>::new(),
    )
    .unwrap()
    .with_symbolic(form.clone());
    check(symbolic_token_length(&rule).unwrap() == 6, "token length")?;
    check(
        parse_symbolic_syntax(&form.to_canonical_string()).unwrap() == form,
        "case-study round trip",
    )?;
    Ok("24 sample rules and the case-study form round-trip".into())
}

#[derive(Debug, Clone)]
struct RuleSpec {
    kind: u8,
    scope: u8,
    tools: u8,
    category: usize,
    domain: usize,
    qualifiers: u8,
    actions: u8,
    clause_category: Option<usize>,
}

#[derive(Debug, Clone)]
struct StateSpec {
    tools: u8,
    categories: u8,
    domain: Option<usize>,
    qualifiers: u8,
}

fn pick(mask: u8, n: usize, prefix: &str) -> Vec<String> {
    (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| format!("{prefix}{i}"))
        .collect()
}

fn build_rule(i: usize, s: &RuleSpec) -> Rule {
    let error_type = [
        ErrorType::Decomposition,
        ErrorType::ToolSelection,
        ErrorType::ToolArguments,
    ][s.kind as usize];
    let scope = match s.scope {
        0 => ToolScope::Unscoped,
        1 => ToolScope::tools(pick(s.tools, 5, "t")),
        _ => ToolScope::Category(tok(&format!("C{}", s.category))),
    };
    let mut clauses = vec![ConditionClause::DomainIs(tok(&format!("D{}", s.domain)))];
    let mut connectives = Vec::new();
    let quals: Vec<Token> = pick(s.qualifiers, 4, "Q").iter().map(|q| tok(q)).collect();
    if !quals.is_empty() {
        clauses.push(ConditionClause::QualifierAnyOf(quals));
        connectives.push(Connective::And);
    }
    if let Some(c) = s.clause_category {
        clauses.push(ConditionClause::ToolCategoryIs(tok(&format!("C{c}"))));
        connectives.push(Connective::Or);
    }
    let actions: Vec<Token> = pick(s.actions.max(1), 4, "A")
        .iter()
        .map(|a| tok(a))
        .collect();
    let form = SymbolicForm::new(clauses, connectives, actions, tok("MANDATORY")).unwrap();
    Rule::new(
        &format!("If rule {i} applies, then follow it."),
        error_type,
        scope,
        Vec::<String>::new(),
    )
    .unwrap()
    .with_symbolic(form)
}

fn build_state(s: &StateSpec) -> QueryState {
    QueryState {
        query_text: "q".into(),
        available_tools: pick(s.tools, 5, "t").into_iter().collect(),
        tool_categories: pick(s.categories, 4, "C").iter().map(|c| tok(c)).collect(),
        domain: s.domain.map(|d| tok(&format!("D{d}"))),
        qualifiers: pick(s.qualifiers, 4, "Q").iter().map(|q| tok(q)).collect(),
    }
}

fn test_vocab() -> Vocabulary {
    let mut v = Vocabulary::new("test");
    for i in 0..4 {
        v.insert(Field::Domain, tok(&format!("D{i}")));
        v.insert(Field::Qualifier, tok(&format!("Q{i}")));
        v.insert(Field::Action, tok(&format!("A{i}")));
        v.insert(Field::ToolCategory, tok(&format!("C{i}")));
    }
    v.insert(Field::Strength, tok("MANDATORY"));
    v
}

/// The scope predicate, restated independently of the filter.
fn in_scope(rule: &Rule, state: &QueryState) -> bool {
    if rule.error_type == ErrorType::Decomposition {
        return true;
    }
    match &rule.tool_scope {
        ToolScope::Tools(t) => t.iter().any(|n| state.available_tools.contains(n)),
        ToolScope::Category(c) => state.tool_categories.contains(c),
        ToolScope::Unscoped => {
            let cats: Vec<&Token> = rule
                .symbolic
                .as_ref()
                .unwrap()
                .clauses
                .iter()
                .filter_map(|c| match c {
                    ConditionClause::ToolCategoryIs(t) => Some(t),
                    _ => None,
                })
                .collect();
            cats.is_empty() || cats.iter().any(|c| state.tool_categories.contains(*c))
        }
    }
}

fn criterion_6() -> Outcome {
    let rule_spec = (
        0u8..3,
        0u8..3,
        1u8..32,
        0usize..4,
        0usize..4,
        0u8..16,
        0u8..16,
        proptest::option::of(0usize..4),
    )
        .prop_map(
            |(kind, scope, tools, category, domain, qualifiers, actions, clause_category)| {
                RuleSpec {
                    kind,
                    scope,
                    tools,
                    category,
                    domain,
                    qualifiers,
                    actions,
                    clause_category,
                }
            },
        );
    let state_spec = (0u8..32, 0u8..16, proptest::option::of(0usize..4), 0u8..16).prop_map(
        |(tools, categories, domain, qualifiers)| StateSpec {
            tools,
            categories,
            domain,
            qualifiers,
        },
    );
    let strategy = (
        proptest::collection::vec(rule_spec, 0..16),
        state_spec,
        1usize..8,
        any::<u64>(),
    );
    let vocab = test_vocab();
    let embedder = VocabIndicatorEmbedder::new(&vocab);
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&strategy, |(specs, state_spec, k, seed)| {
        let rules: Vec<Rule> = specs
            .iter()
            .enumerate()
            .map(|(i, s)| build_rule(i, s))
            .collect();
        let state = build_state(&state_spec);
        let lib = RuleLibrary::from_rules(rules.clone(), "test").unwrap();
        let survivors: BTreeSet<RuleId> = coarse_filter(&lib, &state)
            .into_iter()
            .map(|(r, _)| r.id.clone())
            .collect();
        for rule in &rules {
            if rule.error_type == ErrorType::Decomposition {
                prop_assert!(survivors.contains(&rule.id));
            }
            prop_assert_eq!(survivors.contains(&rule.id), in_scope(rule, &state));
        }
        let ranked = retrieve(&lib, &state, &embedder, k).unwrap();
        prop_assert_eq!(ranked.len(), survivors.len().min(k));
        for pair in ranked.windows(2) {
            prop_assert!(
                pair[0].score > pair[1].score
                    || (pair[0].score == pair[1].score && pair[0].rule_id < pair[1].rule_id)
            );
        }
        let mut shuffled = rules.clone();
        rand::seq::SliceRandom::shuffle(
            shuffled.as_mut_slice(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        let lib2 = RuleLibrary::from_rules(shuffled, "test").unwrap();
        prop_assert_eq!(retrieve(&lib2, &state, &embedder, k).unwrap(), ranked);
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok("1000 random libraries and states".into())
}

fn pipeline_run(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let exe = env!("CARGO_BIN_EXE_rulekit");
    let steps: [&[&str]; 5] = [
        &["generate"],
        &["translate"],
        &["consolidate"],
        &["eval", "--library", "none", "--out", "out/without.json"],
        &[
            "eval",
            "--library",
            "out/consolidated.json",
            "--out",
            "out/with.json",
        ],
    ];
    for args in steps {
        let out = Command::new(exe)
            .current_dir(dir)
            .args(["--config", "config.toml"])
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        check(
            out.status.success(),
            format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)),
        )?;
    }
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.join("out")];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    Ok(files)
}

fn copy_fixture(to: &Path) {
    let from = fixtures().join("pipeline");
    for entry in std::fs::read_dir(&from).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
    }
}

fn criterion_7() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    copy_fixture(a.path());
    copy_fixture(b.path());
    let first = pipeline_run(a.path())?;
    let second = pipeline_run(b.path())?;
    check(first == second, "reruns differ")?;
    let json = |name: &str| -> serde_json::Value {
        serde_json::from_slice(&first[Path::new(name)]).unwrap()
    };
    let rules = json("out/consolidated.json")["rules"]
        .as_array()
        .unwrap()
        .len();
    check(rules >= 1, "no rules")?;
    let (without, with) = (json("out/without.json"), json("out/with.json"));
    let correct = |v: &serde_json::Value| {
        v["verdicts"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|x| x["correct"] == true)
            .count()
    };
    check(correct(&without) == 0, "baseline should fail every case")?;
    check(
        correct(&with) == 6,
        format!("with rules: {}/6", correct(&with)),
    )?;
    Ok(format!(
        "{rules} rules, 0/6 -> 6/6, {} output files byte-identical",
        first.len()
    ))
}

fn toy_dataset() -> Dataset {
    let cases = (0..60)
        .map(|i| {
            let mut tools = vec![ToolSpec::new(format!("t{}", i % 6))];
            if i % 4 == 0 {
                tools.push(ToolSpec::new(format!("t{}", (i / 4) % 6)));
            }
            Case {
                id: format!("c{i:02}"),
                query: format!("q{i}"),
                tools,
                gold_trace: Vec::new(),
                gold_answer: "a".into(),
                split: None,
            }
        })
        .collect();
    Dataset {
        name: "toy".into(),
        cases,
    }
}

fn criterion_8() -> Outcome {
    let d = toy_dataset();
    let tools_of: BTreeMap<&str, BTreeSet<&str>> = d
        .cases
        .iter()
        .map(|c| (c.id.as_str(), c.tool_names()))
        .collect();
    for seed in 0..200 {
        let s = make_splits(&d, 0.2, 0.2, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let parts = [&s.train_ids, &s.test_rand_ids, &s.test_unseen_ids];
        let mut all = BTreeSet::new();
        for p in parts {
            for id in p {
                check(
                    all.insert(id.as_str()),
                    format!("seed {seed}: {id} in two parts"),
                )?;
            }
        }
        check(all.len() == 60, format!("seed {seed}: cases lost"))?;
        let touches = |id: &String| {
            tools_of[id.as_str()]
                .iter()
                .any(|t| s.held_out_tools.contains(*t))
        };
        check(
            s.test_unseen_ids.iter().all(touches),
            format!("seed {seed}: unseen case without held tool"),
        )?;
        check(
            !s.train_ids.iter().any(touches),
            format!("seed {seed}: train touches held tool"),
        )?;
        check(
            !s.test_rand_ids.iter().any(touches),
            format!("seed {seed}: test-rand touches held tool"),
        )?;
        check(
            !s.train_ids.is_empty() && !s.test_unseen_ids.is_empty(),
            "empty part",
        )?;
    }
    let labelled =
        load_dataset(&fixtures().join("labelled_splits.jsonl")).map_err(|e| e.to_string())?;
    let counts = labelled.split_counts();
    let expect: BTreeMap<String, usize> = [("train", 392), ("test-rand", 70), ("test-unseen", 51)]
        .map(|(k, v)| (k.to_string(), v))
        .into();
    check(counts == expect, format!("counts {counts:?}"))?;
    Ok("200 seeds hold invariants; 392/70/51 ingested".into())
}

fn criterion_9() -> Outcome {
    let ids = failure_ids(4);
    let failures: Vec<FailureCase> = ids.iter().map(|i| failure(i)).collect();
    let rules = vec![
        rule_of_len("If a, then b.", 3),
        rule_of_len("If c, then d.", 4),
    ];
    let oracle = MatrixOracle::from_bits(
        &rules.iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
        &ids,
        &[
            vec![true, true, false, false],
            vec![false, false, true, true],
        ],
    );
    let lib = RuleLibrary::from_rules(rules, "").unwrap();
    let grid = [0.1, 0.3, 0.5, 1.0];
    let scripted = |alpha: f64, _: &RuleLibrary| -> Result<f64, String> {
        Ok(match alpha {
            a if a == 0.1 => 0.60,
            a if a == 0.3 => 0.80,
            a if a == 0.5 => 0.80,
            _ => 0.70,
        })
    };
    let sel = select_alpha(
        &lib,
        &failures,
        &grid,
        ConsolidationParams::new(1.0),
        &oracle,
        &ToolCategoryMap::new(),
        &scripted,
    )
    .map_err(|e| e.to_string())?;
    check(sel.alpha == 0.5, format!("selected {}", sel.alpha))?;
    check(sel.trials.len() == 4, "trial count")?;
    let strict = |alpha: f64, _: &RuleLibrary| -> Result<f64, String> {
        Ok(if alpha == 0.3 { 0.9 } else { 0.5 })
    };
    let sel = select_alpha(
        &lib,
        &failures,
        &grid,
        ConsolidationParams::new(1.0),
        &oracle,
        &ToolCategoryMap::new(),
        &strict,
    )
    .map_err(|e| e.to_string())?;
    check(sel.alpha == 0.3, format!("selected {}", sel.alpha))?;
    Ok("argmax chosen; ties go to the larger alpha".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("MDL exactness", criterion_1, Duration::from_secs(1)),
        (
            "greedy vs brute force",
            criterion_2,
            Duration::from_secs(60),
        ),
        (
            "degenerate-collapse guard",
            criterion_3,
            Duration::from_secs(1),
        ),
        (
            "rule-count compression",
            criterion_4,
            Duration::from_secs(10),
        ),
        ("grammar fidelity", criterion_5, Duration::from_secs(1)),
        ("retrieval contracts", criterion_6, Duration::from_secs(30)),
        (
            "end-to-end offline pipeline",
            criterion_7,
            Duration::from_secs(30),
        ),
        ("split construction", criterion_8, Duration::from_secs(10)),
        ("alpha selection", criterion_9, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > *limit => Err(format!("{msg}; took {elapsed:?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("criterion {}: PASS  {name}: {msg} ({:.2?})", i + 1, elapsed),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {msg} ({:.2?})", i + 1, elapsed);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
