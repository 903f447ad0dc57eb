//! Prompt-only consolidation baseline: the model is asked to merge the
//! library directly, with no objective guiding the edits.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{extract_json, Gateway, GatewayError};
use crate::generation::{linguistic_check, RuleProposal};
use crate::rule::{ErrorType, Rule, RuleId, RuleLibrary, ToolScope, Vocabulary};
use crate::vocab::classify_rule;

const TEMPLATE_LABEL: &str = "prompt_consolidation";

const PROMPT_HEADER: &str = "You maintain a library of rules that guide a tool-using agent.
Merge rules that express the same guidance and rewrite overlapping rules as one rule.
Every rule you output must be a single sentence of the form \"If ..., then ...\".
Rules you do not mention are kept unchanged.
Return only JSON of the form:
{\"rules\": [{\"new_rule\": \"...\", \"error_type\": \"dec|sel|arg\", \"merged_from\": [\"<id>\", ...]}]}

Rules:
";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptMerge {
    pub new_id: RuleId,
    pub merged_from: Vec<RuleId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRejection {
    pub new_rule: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PromptConsolidation {
    pub library: RuleLibrary,
    pub merges: Vec<PromptMerge>,
    pub rejected: Vec<PromptRejection>,
    pub raw_model_output: String,
}

#[derive(Debug, Deserialize)]
struct MergeEntry {
    new_rule: String,
    error_type: String,
    merged_from: Vec<String>,
}

fn render_prompt(library: &RuleLibrary) -> String {
    let mut prompt = PROMPT_HEADER.to_string();
    for id in library.sorted_ids() {
        let rule = library.get(&id).expect("id from library");
        prompt.push_str(&format!(
            "- [{}] ({}) {}\n",
            id.as_str(),
            rule.error_type.code(),
            rule.nl_text
        ));
    }
    prompt
}

fn parse_entries(text: &str) -> Result<Vec<MergeEntry>, GatewayError> {
    let v = extract_json(text)?;
    let rules = v.get("rules").cloned().unwrap_or(Value::Null);
    serde_json::from_value(rules)
        .map_err(|e| GatewayError::malformed(format!("bad rules list: {e}"), text))
}

/// Scope of a merged rule: decomposition rules are unscoped; otherwise the
/// union of the sources' tools, or a shared category when no tools remain.
fn merged_scope(error_type: ErrorType, sources: &[&Rule]) -> ToolScope {
    if !error_type.is_tool_use() {
        return ToolScope::Unscoped;
    }
    let tools: BTreeSet<&str> = sources
        .iter()
        .filter_map(|r| match &r.tool_scope {
            ToolScope::Tools(t) => Some(t.iter().map(String::as_str)),
            _ => None,
        })
        .flatten()
        .collect();
    if !tools.is_empty() {
        return ToolScope::tools(tools);
    }
    let cats: BTreeSet<_> = sources
        .iter()
        .filter_map(|r| match &r.tool_scope {
            ToolScope::Category(c) => Some(c.clone()),
            _ => None,
        })
        .collect();
    match cats.len() {
        1 => ToolScope::Category(cats.into_iter().next().unwrap()),
        _ => ToolScope::Unscoped,
    }
}

/// Asks the model to merge `library` in one shot. Each merged rule must pass
/// the linguistic check and classify over `vocab`; rejected merges leave
/// their sources in place.
pub fn prompt_consolidate(
    library: &RuleLibrary,
    vocab: &Vocabulary,
    max_tokens: usize,
    gateway: &Gateway,
) -> Result<PromptConsolidation, GatewayError> {
    let mut out = PromptConsolidation {
        library: library.clone(),
        merges: Vec::new(),
        rejected: Vec::new(),
        raw_model_output: String::new(),
    };
    if library.is_empty() {
        return Ok(out);
    }
    let (entries, raw) =
        gateway.complete_json(TEMPLATE_LABEL, &render_prompt(library), 1, parse_entries)?;
    out.raw_model_output = raw;
    let mut consumed: BTreeSet<RuleId> = BTreeSet::new();
    for entry in entries {
        let reject = |reason: String| PromptRejection {
            new_rule: entry.new_rule.clone(),
            reason,
        };
        let ids: Vec<RuleId> = entry
            .merged_from
            .iter()
            .map(RuleId::from_raw)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if ids.is_empty() {
            out.rejected.push(reject("merged_from is empty".into()));
            continue;
        }
        if let Some(bad) = ids
            .iter()
            .find(|id| !library.contains(id) || consumed.contains(*id))
        {
            out.rejected.push(reject(format!(
                "unknown or already merged source {}",
                bad.as_str()
            )));
            continue;
        }
        let Ok(error_type) = ErrorType::from_str(&entry.error_type) else {
            out.rejected
                .push(reject(format!("invalid error_type {}", entry.error_type)));
            continue;
        };
        let proposal = RuleProposal {
            nl_text: entry.new_rule.trim().to_string(),
            error_type,
            analysis: String::new(),
        };
        if let Err(f) = linguistic_check(&proposal, max_tokens) {
            out.rejected.push(reject(format!(
                "linguistic check failed: {}",
                serde_json::to_value(f).unwrap()
            )));
            continue;
        }
        let sources: Vec<&Rule> = ids
            .iter()
            .map(|id| library.get(id).expect("checked above"))
            .collect();
        let provenance = sources.iter().flat_map(|r| r.provenance.iter().cloned());
        let rule = match Rule::new(
            &proposal.nl_text,
            error_type,
            merged_scope(error_type, &sources),
            provenance,
        ) {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(reject(e.to_string()));
                continue;
            }
        };
        if out.library.contains(&rule.id) && !ids.contains(&rule.id) {
            out.rejected
                .push(reject(format!("duplicates rule {}", rule.id.as_str())));
            continue;
        }
        let symbolic = match classify_rule(&rule, vocab, gateway) {
            Ok(c) => c.symbolic,
            Err(e) => {
                out.rejected
                    .push(reject(format!("classification failed: {e}")));
                continue;
            }
        };
        for id in &ids {
            out.library.remove(id);
        }
        let new_id = rule.id.clone();
        out.library
            .insert(rule.with_symbolic(symbolic))
            .expect("id is free after removals");
        consumed.extend(ids.iter().cloned());
        consumed.insert(new_id.clone());
        out.merges.push(PromptMerge {
            new_id,
            merged_from: ids,
        });
    }
    Ok(out)
}
