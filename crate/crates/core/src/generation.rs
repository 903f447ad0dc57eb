//! Stage 1: distilling natural-language rules from individual failures.
//!
//! Each failure is handled independently: propose a rule from the incorrect
//! and gold traces, check its form, then re-run the agent with the rule
//! injected. Accepted rules from all failures are pooled and deduplicated.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::Serialize;
use serde_json::{json, Value};

use crate::agent::{AgentHandle, AgentRun};
use crate::case::{matching_prefix, Case, FailureCase, TraceStep};
use crate::gateway::{extract_json_objects, Gateway, GatewayError, PromptTemplate, TemplateName};
use crate::rule::{ErrorType, Rule, RuleId, ToolScope};

pub const DEFAULT_MAX_ITERATIONS: usize = 3;
pub const DEFAULT_MAX_TOKENS: usize = 120;

const MALFORMED_RETRIES: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationParams {
    pub max_iterations: usize,
    pub max_tokens: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Runs the agent on every case and keeps those it gets wrong or aborts on.
/// An agent error is itself a failure, recorded as a one-step trace.
pub fn collect_failures(cases: &[Case], agent: &dyn AgentHandle) -> Vec<FailureCase> {
    cases
        .par_iter()
        .filter_map(|case| {
            let trace = match agent.run(&case.query, &case.tools, &[]) {
                Ok(run) if run.is_correct(&case.gold_answer) => return None,
                Ok(AgentRun { trace, error, .. }) => match (trace.is_empty(), error) {
                    (true, Some(e)) => vec![error_step(&e)],
                    (true, None) => vec![error_step("agent produced no steps")],
                    (false, _) => trace,
                },
                Err(e) => vec![error_step(&format!("agent error: {e}"))],
            };
            Some(FailureCase::from_case(case, trace))
        })
        .collect()
}

fn error_step(message: &str) -> TraceStep {
    TraceStep {
        observation: Some(message.to_string()),
        ..TraceStep::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleProposal {
    pub nl_text: String,
    pub error_type: ErrorType,
    pub analysis: String,
}

fn generation_prompt(failure: &FailureCase) -> Result<String, GatewayError> {
    let pretty = |v: &dyn erased::Pretty| v.pretty();
    PromptTemplate::get(TemplateName::RuleGeneration).render(&BTreeMap::from([
        ("user_query", failure.query.clone()),
        ("tool_schema", pretty(&failure.tools)),
        ("agent_trace", pretty(&failure.incorrect_trace)),
        ("groundtruth_trace", pretty(&failure.gold_trace)),
    ]))
}

mod erased {
    pub trait Pretty {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Pretty for T {
        fn pretty(&self) -> String {
            serde_json::to_string_pretty(self).expect("value serializes")
        }
    }
}

fn parse_proposal(text: &str) -> Result<RuleProposal, GatewayError> {
    let objects: Vec<Value> = extract_json_objects(text)
        .into_iter()
        .filter(|v| v.get("new_rule").is_some())
        .collect();
    let obj = match objects.as_slice() {
        [] => {
            return Err(GatewayError::malformed(
                "no object with a new_rule field",
                text,
            ))
        }
        [one] => one,
        _ => return Err(GatewayError::malformed("more than one rule proposed", text)),
    };
    let nl_text = match &obj["new_rule"] {
        Value::String(s) if !s.trim().is_empty() => s.trim().to_string(),
        Value::Array(_) => {
            return Err(GatewayError::malformed("more than one rule proposed", text))
        }
        _ => {
            return Err(GatewayError::malformed(
                "new_rule is not a non-empty string",
                text,
            ))
        }
    };
    let error_type = obj["error_type"]
        .as_str()
        .and_then(|s| ErrorType::from_str(s).ok())
        .ok_or_else(|| {
            GatewayError::malformed(format!("invalid error_type {}", obj["error_type"]), text)
        })?;
    let analysis = text[..text.find('{').unwrap_or(0)].trim().to_string();
    Ok(RuleProposal {
        nl_text,
        error_type,
        analysis,
    })
}

/// Asks the model for one rule explaining the gap between the traces.
pub fn propose_rule(
    failure: &FailureCase,
    gateway: &Gateway,
) -> Result<RuleProposal, GatewayError> {
    let prompt = generation_prompt(failure)?;
    gateway
        .complete_json(
            TemplateName::RuleGeneration.as_str(),
            &prompt,
            MALFORMED_RETRIES,
            parse_proposal,
        )
        .map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinguisticFailure {
    MissingIfThen,
    Length,
}

fn if_then() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)^\s*(if|when)\b.+\bthen\b.+").expect("valid regex"))
}

/// Passes an if/when ... then ... sentence of at most `max_tokens`
/// whitespace-separated tokens.
pub fn linguistic_check(
    proposal: &RuleProposal,
    max_tokens: usize,
) -> Result<(), LinguisticFailure> {
    if !if_then().is_match(&proposal.nl_text) {
        return Err(LinguisticFailure::MissingIfThen);
    }
    if proposal.nl_text.split_whitespace().count() > max_tokens {
        return Err(LinguisticFailure::Length);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveOutcome {
    FullFix,
    Partial,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveResult {
    pub outcome: PredictiveOutcome,
    pub run: AgentRun,
    pub error: Option<String>,
}

/// Re-runs the agent on the failing query with `prior` rules plus the
/// proposal injected. Partial means the new trace matches a strictly
/// longer prefix of the gold tool calls than the failure's trace did.
pub fn predictive_check(
    proposal: &RuleProposal,
    failure: &FailureCase,
    agent: &dyn AgentHandle,
    prior: &[String],
) -> PredictiveResult {
    let mut rules = prior.to_vec();
    rules.push(proposal.nl_text.clone());
    match agent.run(&failure.query, &failure.tools, &rules) {
        Err(e) => PredictiveResult {
            outcome: PredictiveOutcome::None,
            run: AgentRun::default(),
            error: Some(e.to_string()),
        },
        Ok(run) => {
            let outcome = if run.is_correct(&failure.gold_answer) {
                PredictiveOutcome::FullFix
            } else if matching_prefix(&run.trace, &failure.gold_trace)
                > matching_prefix(&failure.incorrect_trace, &failure.gold_trace)
            {
                PredictiveOutcome::Partial
            } else {
                PredictiveOutcome::None
            };
            PredictiveResult {
                outcome,
                run,
                error: None,
            }
        }
    }
}

/// Tools involved in the first divergent step, for tool-use rules.
fn divergence_scope(failure: &FailureCase, error_type: ErrorType) -> ToolScope {
    if !error_type.is_tool_use() {
        return ToolScope::Unscoped;
    }
    let known: BTreeSet<&str> = failure.tools.iter().map(|t| t.name.as_str()).collect();
    let calls = |t: &[TraceStep]| -> Vec<String> {
        t.iter()
            .filter_map(|s| s.tool_call.as_ref().map(|c| c.name.clone()))
            .collect()
    };
    let at = matching_prefix(&failure.incorrect_trace, &failure.gold_trace);
    let names: Vec<String> = [calls(&failure.gold_trace), calls(&failure.incorrect_trace)]
        .into_iter()
        .filter_map(|c| c.get(at).cloned())
        .filter(|n| known.contains(n.as_str()))
        .collect();
    ToolScope::tools(names)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedProposal {
    pub proposal: RuleProposal,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub failure_id: String,
    pub accepted: Vec<Rule>,
    pub rejected: Vec<RejectedProposal>,
    pub iterations_used: usize,
    pub corrected: bool,
    pub error: Option<String>,
}

impl GenerationReport {
    pub fn to_json(&self) -> Value {
        json!({
            "failure_id": self.failure_id,
            "accepted": self.accepted.iter().map(|r| json!({
                "id": r.id,
                "nl_text": r.nl_text,
                "error_type": r.error_type,
                "tool_scope": r.tool_scope,
            })).collect::<Vec<_>>(),
            "rejected": self.rejected,
            "iterations_used": self.iterations_used,
            "corrected": self.corrected,
            "error": self.error,
        })
    }
}

/// Propose/check loop for one failure. Stops on a full fix, on a proposal
/// that does not help, on a gateway error, or after `max_iterations`.
/// After a partial fix the next proposal is asked against the improved trace.
pub fn generate_for_failure(
    failure: &FailureCase,
    gateway: &Gateway,
    agent: &dyn AgentHandle,
    params: GenerationParams,
) -> GenerationReport {
    let mut report = GenerationReport {
        failure_id: failure.id.clone(),
        accepted: Vec::new(),
        rejected: Vec::new(),
        iterations_used: 0,
        corrected: false,
        error: None,
    };
    let mut current = failure.clone();
    let mut injected: Vec<String> = Vec::new();
    for iteration in 1..=params.max_iterations.max(1) {
        report.iterations_used = iteration;
        let proposal = match propose_rule(&current, gateway) {
            Ok(p) => p,
            Err(e) => {
                report.error = Some(e.to_string());
                break;
            }
        };
        if let Err(f) = linguistic_check(&proposal, params.max_tokens) {
            let reason = serde_json::to_value(f).expect("serializes");
            report.rejected.push(RejectedProposal {
                proposal,
                reason: reason.as_str().unwrap_or_default().to_string(),
            });
            continue;
        }
        if injected.contains(&proposal.nl_text) {
            report.rejected.push(RejectedProposal {
                proposal,
                reason: "duplicate of an accepted rule".into(),
            });
            break;
        }
        let check = predictive_check(&proposal, &current, agent, &injected);
        if check.outcome == PredictiveOutcome::None {
            report.rejected.push(RejectedProposal {
                proposal,
                reason: check.error.unwrap_or_else(|| "no improvement".into()),
            });
            break;
        }
        let scope = divergence_scope(&current, proposal.error_type);
        let rule = Rule::new(
            &proposal.nl_text,
            proposal.error_type,
            scope,
            [failure.id.clone()],
        )
        .expect("proposal text is non-empty");
        injected.push(rule.nl_text.clone());
        report.accepted.push(rule);
        if check.outcome == PredictiveOutcome::FullFix {
            report.corrected = true;
            break;
        }
        current.incorrect_trace = check.run.trace;
    }
    report
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    /// Deduplicated rules, sorted by id.
    pub pool: Vec<Rule>,
    /// One report per failure, in input order.
    pub reports: Vec<GenerationReport>,
}

/// Merges accepted rules by id. Provenance lists are unioned; the other
/// fields come from the copy with the smallest provenance, so the result
/// does not depend on failure order.
pub fn merge_rules(rules: impl IntoIterator<Item = Rule>) -> Vec<Rule> {
    let mut by_id: BTreeMap<RuleId, Rule> = BTreeMap::new();
    for rule in rules {
        match by_id.get_mut(&rule.id) {
            None => {
                by_id.insert(rule.id.clone(), rule);
            }
            Some(existing) => {
                let mut provenance = existing.provenance.clone();
                provenance.extend(rule.provenance.iter().cloned());
                provenance.sort();
                provenance.dedup();
                if rule.provenance < existing.provenance {
                    *existing = rule;
                }
                existing.provenance = provenance;
            }
        }
    }
    by_id.into_values().collect()
}

/// Stage 1 over all failures, processed concurrently.
pub fn generate_pool(
    failures: &[FailureCase],
    gateway: &Gateway,
    agent: &dyn AgentHandle,
    params: GenerationParams,
) -> GenerationOutcome {
    let reports: Vec<GenerationReport> = failures
        .par_iter()
        .map(|f| generate_for_failure(f, gateway, agent, params))
        .collect();
    let pool = merge_rules(reports.iter().flat_map(|r| r.accepted.iter().cloned()));
    GenerationOutcome { pool, reports }
}
