//! Datasets, train/test splits and accuracy accounting.
//!
//! Dataset files are JSON lines, one [`Case`] per line:
//!
//! | field         | type            | required |
//! |---------------|-----------------|----------|
//! | `id`          | string, unique  | yes      |
//! | `query`       | string          | yes      |
//! | `tools`       | list of tool specs (`name`, `description`, `parameters`, `category`) | no |
//! | `gold_trace`  | list of steps (`thought`, `tool_call`, `observation`) | no |
//! | `gold_answer` | string          | yes      |
//! | `split`       | string label    | no       |

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentHandle, AgentRun};
use crate::case::{parse_cases, Case, SchemaError};
use crate::retrieval::{retrieve, symbolize_query, Embedder, QueryClassifier, ToolCategoryMap};
use crate::rule::{RuleId, RuleLibrary, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub cases: Vec<Case>,
}

impl Dataset {
    pub fn from_jsonl(name: impl Into<String>, text: &str) -> Result<Self, SchemaError> {
        let cases = parse_cases(text)?;
        Ok(Dataset {
            name: name.into(),
            cases,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Case counts per `split` label; unlabelled cases are not counted.
    pub fn split_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for label in self.cases.iter().filter_map(|c| c.split.as_ref()) {
            *counts.entry(label.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Cases carrying the given `split` label, in file order.
    pub fn labelled(&self, label: &str) -> Vec<Case> {
        self.cases
            .iter()
            .filter(|c| c.split.as_deref() == Some(label))
            .cloned()
            .collect()
    }

    /// Cases whose ids appear in `ids`, in file order.
    pub fn select(&self, ids: &[String]) -> Vec<Case> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.cases
            .iter()
            .filter(|c| wanted.contains(c.id.as_str()))
            .cloned()
            .collect()
    }

    pub fn tool_names(&self) -> BTreeSet<&str> {
        self.cases.iter().flat_map(|c| c.tool_names()).collect()
    }
}

/// Reads a JSONL dataset; the dataset is named after the file stem.
pub fn load_dataset(path: &Path) -> Result<Dataset, SchemaError> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_jsonl(name, &text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub test_rand_ids: Vec<String>,
    pub test_unseen_ids: Vec<String>,
    pub held_out_tools: BTreeSet<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
}

fn check_fraction(f: f64) -> Result<(), SplitError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(SplitError::InvalidFraction(f))
    }
}

/// Holds out `round(unseen_tool_fraction * |tools|)` tools (at least one);
/// every case touching one of them goes to test-unseen. A seeded
/// `rand_fraction` of the remaining cases goes to test-rand, the rest to
/// train. Id lists are sorted.
pub fn make_splits(
    dataset: &Dataset,
    rand_fraction: f64,
    unseen_tool_fraction: f64,
    seed: u64,
) -> Result<SplitSpec, SplitError> {
    check_fraction(rand_fraction)?;
    check_fraction(unseen_tool_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tools: Vec<&str> = dataset.tool_names().into_iter().collect();
    if tools.is_empty() {
        return Err(SplitError::InfeasibleSplit(
            "the dataset declares no tools".into(),
        ));
    }
    let n_held = ((unseen_tool_fraction * tools.len() as f64).round() as usize).max(1);
    if n_held >= tools.len() {
        return Err(SplitError::InfeasibleSplit(format!(
            "holding out {n_held} of {} tools leaves none for training",
            tools.len()
        )));
    }
    tools.shuffle(&mut rng);
    let held: BTreeSet<String> = tools[..n_held].iter().map(|t| t.to_string()).collect();

    let (unseen, mut rest): (Vec<&Case>, Vec<&Case>) = dataset
        .cases
        .iter()
        .partition(|c| c.tool_names().iter().any(|t| held.contains(*t)));
    if rest.is_empty() {
        return Err(SplitError::InfeasibleSplit(
            "every case touches a held-out tool".into(),
        ));
    }
    rest.shuffle(&mut rng);
    let n_rand = (rand_fraction * rest.len() as f64).round() as usize;
    if n_rand >= rest.len() {
        return Err(SplitError::InfeasibleSplit(
            "no cases left for training".into(),
        ));
    }
    let sorted_ids = |cs: &[&Case]| {
        let mut ids: Vec<String> = cs.iter().map(|c| c.id.clone()).collect();
        ids.sort();
        ids
    };
    Ok(SplitSpec {
        test_rand_ids: sorted_ids(&rest[..n_rand]),
        train_ids: sorted_ids(&rest[n_rand..]),
        test_unseen_ids: sorted_ids(&unseen),
        held_out_tools: held,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub case_id: String,
    pub correct: bool,
    pub answer: Option<String>,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injected: Vec<RuleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    #[serde(rename = "se")]
    pub standard_error: f64,
    pub n: usize,
    pub verdicts: Vec<Verdict>,
}

impl EvalResult {
    /// Aggregates verdicts, sorted by case id. An empty run has accuracy 0.
    pub fn from_verdicts(mut verdicts: Vec<Verdict>) -> Self {
        verdicts.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let n = verdicts.len();
        let correct = verdicts.iter().filter(|v| v.correct).count();
        let accuracy = if n == 0 {
            0.0
        } else {
            correct as f64 / n as f64
        };
        let standard_error = if n == 0 {
            0.0
        } else {
            (accuracy * (1.0 - accuracy) / n as f64).sqrt()
        };
        EvalResult {
            accuracy,
            standard_error,
            n,
            verdicts,
        }
    }

    pub fn correct(&self) -> usize {
        self.verdicts.iter().filter(|v| v.correct).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes") + "\n"
    }
}

/// Everything needed to retrieve rules for a case.
pub struct RetrievalSetup<'a> {
    pub library: &'a RuleLibrary,
    pub vocab: &'a Vocabulary,
    pub classifier: &'a dyn QueryClassifier,
    pub embedder: &'a dyn Embedder,
    pub tool_map: &'a ToolCategoryMap,
    pub top_k: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("worker count must be at least 1")]
    InvalidWorkers,
    #[error("runs cover different cases (only in a: {only_a:?}, only in b: {only_b:?})")]
    MismatchedCases {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn eval_case(case: &Case, retrieval: Option<&RetrievalSetup>, agent: &dyn AgentHandle) -> Verdict {
    let mut verdict = Verdict {
        case_id: case.id.clone(),
        correct: false,
        answer: None,
        gold_answer: case.gold_answer.clone(),
        injected: Vec::new(),
        error: None,
    };
    let mut texts = Vec::new();
    if let Some(r) = retrieval.filter(|r| !r.library.is_empty()) {
        let ranked = symbolize_query(&case.query, &case.tools, r.vocab, r.classifier, r.tool_map)
            .and_then(|state| retrieve(r.library, &state, r.embedder, r.top_k));
        match ranked {
            Ok(ranked) => {
                for rr in ranked {
                    verdict.injected.push(rr.rule_id);
                    texts.push(rr.nl_text);
                }
            }
            Err(e) => {
                log::warn!("case {}: retrieval failed: {e}", case.id);
                verdict.error = Some(format!("retrieval: {e}"));
                return verdict;
            }
        }
    }
    match agent.run(&case.query, &case.tools, &texts) {
        Ok(run) => {
            verdict.correct = run.is_correct(&case.gold_answer);
            let AgentRun { answer, error, .. } = run;
            verdict.answer = answer;
            verdict.error = error;
        }
        Err(e) => {
            log::warn!("case {}: agent failed: {e}", case.id);
            verdict.error = Some(e.to_string());
        }
    }
    verdict
}

/// Runs the agent on each case with retrieved rules injected (when a
/// non-empty library is given) and scores answers against gold. Agent and
/// retrieval failures make a case incorrect; they never abort the run.
pub fn run_eval(
    cases: &[Case],
    retrieval: Option<&RetrievalSetup>,
    agent: &dyn AgentHandle,
    workers: usize,
) -> Result<EvalResult, EvalError> {
    if workers == 0 {
        return Err(EvalError::InvalidWorkers);
    }
    if retrieval.is_some_and(|r| r.top_k == 0) {
        return Err(EvalError::InvalidTopK);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let verdicts = pool.install(|| {
        cases
            .par_iter()
            .map(|c| eval_case(c, retrieval, agent))
            .collect::<Vec<_>>()
    });
    Ok(EvalResult::from_verdicts(verdicts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseOutcome {
    /// Only run b is correct.
    Win,
    /// Only run a is correct.
    Loss,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseComparison {
    pub case_id: String,
    pub a_correct: bool,
    pub b_correct: bool,
    pub outcome: CaseOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// `accuracy_b - accuracy_a`.
    pub delta: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub cases: Vec<CaseComparison>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Paired per-case comparison of two runs over the same cases.
pub fn compare_runs(a: &EvalResult, b: &EvalResult) -> Result<ComparisonReport, EvalError> {
    let map = |r: &EvalResult| -> BTreeMap<String, bool> {
        r.verdicts
            .iter()
            .map(|v| (v.case_id.clone(), v.correct))
            .collect()
    };
    let (ma, mb) = (map(a), map(b));
    let only = |x: &BTreeMap<String, bool>, y: &BTreeMap<String, bool>| -> Vec<String> {
        x.keys().filter(|k| !y.contains_key(*k)).cloned().collect()
    };
    let (only_a, only_b) = (only(&ma, &mb), only(&mb, &ma));
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(EvalError::MismatchedCases { only_a, only_b });
    }
    let cases: Vec<CaseComparison> = ma
        .iter()
        .map(|(id, &a_correct)| {
            let b_correct = mb[id];
            let outcome = match (a_correct, b_correct) {
                (false, true) => CaseOutcome::Win,
                (true, false) => CaseOutcome::Loss,
                _ => CaseOutcome::Tie,
            };
            CaseComparison {
                case_id: id.clone(),
                a_correct,
                b_correct,
                outcome,
            }
        })
        .collect();
    let count = |o: CaseOutcome| cases.iter().filter(|c| c.outcome == o).count();
    let n = cases.len();
    let acc = |m: &BTreeMap<String, bool>| {
        if n == 0 {
            0.0
        } else {
            m.values().filter(|&&c| c).count() as f64 / n as f64
        }
    };
    let (accuracy_a, accuracy_b) = (acc(&ma), acc(&mb));
    Ok(ComparisonReport {
        n,
        accuracy_a,
        accuracy_b,
        delta: accuracy_b - accuracy_a,
        wins: count(CaseOutcome::Win),
        losses: count(CaseOutcome::Loss),
        ties: count(CaseOutcome::Tie),
        cases,
    })
}
