//! Stage 2: minimum-description-length consolidation of a rule pool.
//!
//! The objective is `MDL(H) = alpha * sum(len(r)) + L(D|H)` in nats, where
//! `L(D|H)` is the plug-in Bernoulli code length of the correction outcomes
//! over the failure set. Greedy descent applies prune and generalize edits
//! in rule-id order until a full pass finds nothing that lowers it.

mod oracle;
mod prompt;

use serde::{Deserialize, Serialize};

use crate::case::FailureCase;
use crate::retrieval::ToolCategoryMap;
use crate::rule::{symbolic_token_length, RuleError, RuleId, RuleLibrary, Token, ToolScope};

pub use oracle::{
    applicable_rules, count_corrected, AgentOracle, CachedOracle, CorrectionOracle, MatrixOracle,
    OracleError,
};
pub use prompt::{prompt_consolidate, PromptConsolidation, PromptMerge, PromptRejection};

/// An edit must lower the objective by more than this to be applied.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ConsolidationError {
    #[error("alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("the failure set is empty")]
    NoFailures,
    #[error("the alpha grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("consolidation aborted after {} edit(s): {source}", trace.edits.len())]
    Aborted {
        trace: Box<ConsolidationTrace>,
        source: OracleError,
    },
    #[error("evaluation failed for alpha {alpha}: {message}")]
    Evaluation { alpha: f64, message: String },
}

fn check_alpha(alpha: f64) -> Result<(), ConsolidationError> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(ConsolidationError::InvalidAlpha(alpha))
    }
}

/// `alpha * sum(len(r))` over the library (the normalizer is omitted).
pub fn model_cost(library: &RuleLibrary, alpha: f64) -> Result<f64, ConsolidationError> {
    check_alpha(alpha)?;
    let mut total = 0usize;
    for rule in library.rules() {
        total += symbolic_token_length(rule)?;
    }
    Ok(alpha * total as f64)
}

/// Plug-in Bernoulli code length `-(k ln(k/n) + (n-k) ln(1-k/n))` in nats,
/// with `0 ln 0 = 0`.
///
/// # Panics
/// If `n == 0` or `k > n`.
pub fn bernoulli_code_length(n: usize, k: usize) -> f64 {
    assert!(n > 0 && k <= n, "need 0 <= k <= n and n > 0 (n={n}, k={k})");
    let term = |c: usize| {
        if c == 0 {
            0.0
        } else {
            c as f64 * (c as f64 / n as f64).ln()
        }
    };
    0.0 - (term(k) + term(n - k))
}

pub fn data_cost(
    library: &RuleLibrary,
    failures: &[FailureCase],
    oracle: &dyn CorrectionOracle,
) -> Result<f64, ConsolidationError> {
    if failures.is_empty() {
        return Err(ConsolidationError::NoFailures);
    }
    let k = count_corrected(oracle, library, failures)?;
    Ok(bernoulli_code_length(failures.len(), k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdlBreakdown {
    pub model: f64,
    pub data: f64,
    pub total: f64,
    pub k: usize,
    pub n: usize,
}

pub fn mdl(
    library: &RuleLibrary,
    failures: &[FailureCase],
    alpha: f64,
    oracle: &dyn CorrectionOracle,
) -> Result<MdlBreakdown, ConsolidationError> {
    let model = model_cost(library, alpha)?;
    if failures.is_empty() {
        return Err(ConsolidationError::NoFailures);
    }
    let k = count_corrected(oracle, library, failures)?;
    let data = bernoulli_code_length(failures.len(), k);
    Ok(MdlBreakdown {
        model,
        data,
        total: model + data,
        k,
        n: failures.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Edit {
    Prune {
        rule_id: RuleId,
    },
    Generalize {
        rule_id: RuleId,
        target_category: Token,
    },
}

impl Edit {
    pub fn rule_id(&self) -> &RuleId {
        match self {
            Edit::Prune { rule_id } | Edit::Generalize { rule_id, .. } => rule_id,
        }
    }

    pub fn apply(&self, library: &RuleLibrary) -> RuleLibrary {
        match self {
            Edit::Prune { rule_id } => library.without(rule_id),
            Edit::Generalize {
                rule_id,
                target_category,
            } => library.with_scope(rule_id, ToolScope::Category(target_category.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditProposal {
    #[serde(flatten)]
    pub edit: Edit,
    pub delta_model: f64,
    pub delta_data: f64,
    pub delta_mdl: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnmappedTool {
    pub rule_id: RuleId,
    pub tool: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EditEnumeration {
    pub edits: Vec<Edit>,
    pub unmapped: Vec<UnmappedTool>,
}

/// Generalize target for a rule, when its tools all map to one category.
fn generalize_target(
    rule_id: &RuleId,
    scope: &ToolScope,
    tool_map: &ToolCategoryMap,
    unmapped: &mut Vec<UnmappedTool>,
) -> Option<Token> {
    let ToolScope::Tools(tools) = scope else {
        return None;
    };
    let mut target: Option<&Token> = None;
    for tool in tools {
        match tool_map.get(tool) {
            None => {
                unmapped.push(UnmappedTool {
                    rule_id: rule_id.clone(),
                    tool: tool.clone(),
                });
                return None;
            }
            Some(c) if target.is_some_and(|t| t != c) => return None,
            Some(c) => target = Some(c),
        }
    }
    target.cloned()
}

/// One prune per rule and one generalize per rule whose tools share a
/// single category, in ascending rule-id order.
pub fn enumerate_edits(library: &RuleLibrary, tool_map: &ToolCategoryMap) -> EditEnumeration {
    let mut out = EditEnumeration::default();
    for id in library.sorted_ids() {
        let rule = library.get(&id).expect("id from library");
        out.edits.push(Edit::Prune {
            rule_id: id.clone(),
        });
        if let Some(target) = generalize_target(&id, &rule.tool_scope, tool_map, &mut out.unmapped)
        {
            out.edits.push(Edit::Generalize {
                rule_id: id,
                target_category: target,
            });
        }
    }
    out
}

fn evaluate(
    edit: Edit,
    library: &RuleLibrary,
    current: &MdlBreakdown,
    failures: &[FailureCase],
    alpha: f64,
    oracle: &dyn CorrectionOracle,
) -> Result<(EditProposal, RuleLibrary, MdlBreakdown), ConsolidationError> {
    let candidate = edit.apply(library);
    let after = mdl(&candidate, failures, alpha, oracle)?;
    let delta_model = after.model - current.model;
    let delta_data = after.data - current.data;
    let proposal = EditProposal {
        edit,
        delta_model,
        delta_data,
        delta_mdl: delta_model + delta_data,
    };
    Ok((proposal, candidate, after))
}

/// Order in which improving edits are applied within a pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditSchedule {
    /// Each pass applies the single most improving edit over all rules;
    /// ties go to the lower rule id, then to Prune.
    #[default]
    Steepest,
    /// Each pass visits rules in ascending id order and applies a rule's
    /// improving edit immediately.
    PerRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsolidationParams {
    pub alpha: f64,
    /// Upper bound on full passes; `None` runs to convergence.
    pub max_passes: Option<usize>,
    pub schedule: EditSchedule,
}

impl ConsolidationParams {
    pub fn new(alpha: f64) -> Self {
        ConsolidationParams {
            alpha,
            max_passes: None,
            schedule: EditSchedule::default(),
        }
    }

    pub fn with_schedule(mut self, schedule: EditSchedule) -> Self {
        self.schedule = schedule;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditRecord {
    #[serde(flatten)]
    pub edit: Edit,
    pub delta_model: f64,
    pub delta_data: f64,
    pub mdl_before: f64,
    pub mdl_after: f64,
    pub pass: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsolidationTrace {
    pub alpha: f64,
    pub schedule: EditSchedule,
    pub initial_hash: String,
    pub final_hash: String,
    pub initial_mdl: Option<MdlBreakdown>,
    pub final_mdl: Option<MdlBreakdown>,
    pub passes: usize,
    /// True when the last pass applied no edit.
    pub converged: bool,
    pub edits: Vec<EditRecord>,
    /// Improving edits refused by the low-coverage guard.
    pub guarded: Vec<EditProposal>,
    pub unmapped_tools: Vec<UnmappedTool>,
}

impl ConsolidationTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes") + "\n"
    }
}

/// False when an edit lowers the corrected count into the region where the
/// plug-in code would pay for correcting fewer failures (`2k < n`).
pub fn admissible_edit(before: &MdlBreakdown, after: &MdlBreakdown) -> bool {
    after.k >= before.k || 2 * after.k >= after.n
}

/// Greedy descent from `initial`. Each pass evaluates, for every rule in
/// ascending id order, the better of Prune and Generalize (Prune on ties).
/// An edit qualifies when it lowers the objective by more than
/// [`IMPROVEMENT_TOLERANCE`] and passes [`admissible_edit`]; the schedule
/// decides whether qualifying edits apply immediately or only the best one
/// per pass. Stops after a pass with no applied edit.
pub fn consolidate(
    initial: &RuleLibrary,
    failures: &[FailureCase],
    params: ConsolidationParams,
    oracle: &dyn CorrectionOracle,
    tool_map: &ToolCategoryMap,
) -> Result<(RuleLibrary, ConsolidationTrace), ConsolidationError> {
    let alpha = params.alpha;
    check_alpha(alpha)?;
    if failures.is_empty() {
        return Err(ConsolidationError::NoFailures);
    }
    let mut trace = ConsolidationTrace {
        alpha,
        schedule: params.schedule,
        initial_hash: initial.hash().to_string(),
        final_hash: initial.hash().to_string(),
        initial_mdl: None,
        final_mdl: None,
        passes: 0,
        converged: false,
        edits: Vec::new(),
        guarded: Vec::new(),
        unmapped_tools: enumerate_edits(initial, tool_map).unmapped,
    };
    let abort = |trace: &ConsolidationTrace, e: ConsolidationError| match e {
        ConsolidationError::Oracle(source) => ConsolidationError::Aborted {
            trace: Box::new(trace.clone()),
            source,
        },
        other => other,
    };
    let mut library = initial.clone();
    let mut current = mdl(&library, failures, alpha, oracle).map_err(|e| abort(&trace, e))?;
    trace.initial_mdl = Some(current);
    trace.final_mdl = Some(current);

    while params.max_passes.is_none_or(|m| trace.passes < m) {
        trace.passes += 1;
        let mut applied = false;
        let mut pending: Option<(EditProposal, RuleLibrary, MdlBreakdown)> = None;
        for id in library.sorted_ids() {
            let Some(rule) = library.get(&id) else {
                continue;
            };
            let mut unmapped = Vec::new();
            let target = generalize_target(&id, &rule.tool_scope, tool_map, &mut unmapped);
            let prune = evaluate(
                Edit::Prune {
                    rule_id: id.clone(),
                },
                &library,
                &current,
                failures,
                alpha,
                oracle,
            )
            .map_err(|e| abort(&trace, e))?;
            let gen = match target {
                None => None,
                Some(target_category) => {
                    let edit = Edit::Generalize {
                        rule_id: id.clone(),
                        target_category,
                    };
                    Some(
                        evaluate(edit, &library, &current, failures, alpha, oracle)
                            .map_err(|e| abort(&trace, e))?,
                    )
                }
            };
            let mut admissible = Vec::with_capacity(2);
            for candidate in std::iter::once(prune).chain(gen) {
                if admissible_edit(&current, &candidate.2) {
                    admissible.push(candidate);
                } else if candidate.0.delta_mdl < -IMPROVEMENT_TOLERANCE {
                    trace.guarded.push(candidate.0);
                }
            }
            // Stable min keeps Prune on ties.
            let Some(best) =
                admissible
                    .into_iter()
                    .reduce(|a, b| if b.0.delta_mdl < a.0.delta_mdl { b } else { a })
            else {
                continue;
            };
            if best.0.delta_mdl >= -IMPROVEMENT_TOLERANCE {
                continue;
            }
            match params.schedule {
                EditSchedule::PerRule => {
                    apply(&mut trace, &mut library, &mut current, best);
                    applied = true;
                }
                EditSchedule::Steepest => {
                    if pending
                        .as_ref()
                        .is_none_or(|p| best.0.delta_mdl < p.0.delta_mdl)
                    {
                        pending = Some(best);
                    }
                }
            }
        }
        if let Some(best) = pending {
            apply(&mut trace, &mut library, &mut current, best);
            applied = true;
        }
        if !applied {
            trace.converged = true;
            break;
        }
    }
    Ok((library, trace))
}

fn apply(
    trace: &mut ConsolidationTrace,
    library: &mut RuleLibrary,
    current: &mut MdlBreakdown,
    (proposal, next, after): (EditProposal, RuleLibrary, MdlBreakdown),
) {
    log::debug!(
        "pass {}: {:?} delta {:.6}",
        trace.passes,
        proposal.edit,
        proposal.delta_mdl
    );
    trace.edits.push(EditRecord {
        edit: proposal.edit,
        delta_model: proposal.delta_model,
        delta_data: proposal.delta_data,
        mdl_before: current.total,
        mdl_after: after.total,
        pass: trace.passes,
    });
    *library = next;
    *current = after;
    trace.final_hash = library.hash().to_string();
    trace.final_mdl = Some(*current);
}

/// Some single admissible edit that would lower the objective, if one exists.
pub fn improving_edit(
    library: &RuleLibrary,
    failures: &[FailureCase],
    alpha: f64,
    oracle: &dyn CorrectionOracle,
    tool_map: &ToolCategoryMap,
) -> Result<Option<EditProposal>, ConsolidationError> {
    let current = mdl(library, failures, alpha, oracle)?;
    for edit in enumerate_edits(library, tool_map).edits {
        let (proposal, _, after) = evaluate(edit, library, &current, failures, alpha, oracle)?;
        if proposal.delta_mdl < -IMPROVEMENT_TOLERANCE && admissible_edit(&current, &after) {
            return Ok(Some(proposal));
        }
    }
    Ok(None)
}

/// End-to-end accuracy of a consolidated library, used to pick alpha.
pub trait LibraryEvaluator: Sync {
    fn accuracy(&self, alpha: f64, library: &RuleLibrary) -> Result<f64, String>;
}

impl<F> LibraryEvaluator for F
where
    F: Fn(f64, &RuleLibrary) -> Result<f64, String> + Sync,
{
    fn accuracy(&self, alpha: f64, library: &RuleLibrary) -> Result<f64, String> {
        self(alpha, library)
    }
}

/// Fraction of the failure set the library corrects under an oracle.
pub struct OracleAccuracy<'a> {
    pub oracle: &'a dyn CorrectionOracle,
    pub failures: &'a [FailureCase],
}

impl LibraryEvaluator for OracleAccuracy<'_> {
    fn accuracy(&self, _alpha: f64, library: &RuleLibrary) -> Result<f64, String> {
        if self.failures.is_empty() {
            return Err("empty failure set".into());
        }
        let k = count_corrected(self.oracle, library, self.failures).map_err(|e| e.to_string())?;
        Ok(k as f64 / self.failures.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaTrial {
    pub alpha: f64,
    pub accuracy: f64,
    pub rule_count: usize,
    pub final_mdl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub trials: Vec<AlphaTrial>,
    pub library: RuleLibrary,
    pub trace: ConsolidationTrace,
}

/// Consolidates under every alpha in `grid` and keeps the one with the best
/// accuracy; ties go to the larger alpha. `base.alpha` is ignored.
pub fn select_alpha(
    initial: &RuleLibrary,
    failures: &[FailureCase],
    grid: &[f64],
    base: ConsolidationParams,
    oracle: &dyn CorrectionOracle,
    tool_map: &ToolCategoryMap,
    evaluator: &dyn LibraryEvaluator,
) -> Result<AlphaSelection, ConsolidationError> {
    if grid.is_empty() {
        return Err(ConsolidationError::EmptyGrid);
    }
    for &a in grid {
        check_alpha(a)?;
    }
    let mut best: Option<AlphaSelection> = None;
    let mut trials = Vec::new();
    for &alpha in grid {
        let params = ConsolidationParams { alpha, ..base };
        let (library, trace) = consolidate(initial, failures, params, oracle, tool_map)?;
        let accuracy = evaluator
            .accuracy(alpha, &library)
            .map_err(|message| ConsolidationError::Evaluation { alpha, message })?;
        trials.push(AlphaTrial {
            alpha,
            accuracy,
            rule_count: library.len(),
            final_mdl: trace.final_mdl.map(|m| m.total),
        });
        let better = match &best {
            None => true,
            Some(b) => {
                let b_acc = trials
                    .iter()
                    .find(|t| t.alpha == b.alpha)
                    .expect("trial recorded")
                    .accuracy;
                accuracy > b_acc || (accuracy == b_acc && alpha > b.alpha)
            }
        };
        if better {
            best = Some(AlphaSelection {
                alpha,
                trials: Vec::new(),
                library,
                trace,
            });
        }
    }
    let mut sel = best.expect("grid is non-empty");
    sel.trials = trials;
    Ok(sel)
}
