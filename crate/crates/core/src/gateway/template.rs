//! Prompt templates with bracketed placeholder markers.
//!
//! Template bodies are stored exactly as written, markers included
//! (`[INSERT USER QUERY]` and so on). Rendering swaps each marker for its
//! binding in a single left-to-right pass, so binding values are never
//! re-expanded even when they contain marker-like text.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    RuleGeneration,
    VocabCreate,
    VocabUpdate,
    RuleClassification,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::RuleGeneration => "rule_generation",
            TemplateName::VocabCreate => "vocab_create",
            TemplateName::VocabUpdate => "vocab_update",
            TemplateName::RuleClassification => "rule_classification",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named placeholder and the literal marker that stands for it in the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placeholder {
    pub name: &'static str,
    pub marker: &'static str,
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
    pub placeholders: &'static [Placeholder],
}

const fn ph(name: &'static str, marker: &'static str) -> Placeholder {
    Placeholder { name, marker }
}

static RULE_GENERATION_PLACEHOLDERS: [Placeholder; 4] = [
    ph("user_query", "[INSERT USER QUERY]"),
    ph("tool_schema", "[INSERT TOOL SCHEMA JSON]"),
    ph("agent_trace", "[INSERT TOOL AGENT TRACE]"),
    ph("groundtruth_trace", "[INSERT GROUNDTRUTH TRACE]"),
];

static VOCAB_CREATE_PLACEHOLDERS: [Placeholder; 1] = [ph("rule_bullets", "[INSERT_BULLETS_HERE]")];

static VOCAB_UPDATE_PLACEHOLDERS: [Placeholder; 6] = [
    ph("current_domains", "[INSERT CURRENT DOMAINS OR 'None yet']"),
    ph(
        "current_qualifiers",
        "[INSERT CURRENT QUALIFIERS OR 'None yet']",
    ),
    ph("current_actions", "[INSERT CURRENT ACTIONS OR 'None yet']"),
    ph(
        "current_strengths",
        "[INSERT CURRENT STRENGTHS OR 'None yet']",
    ),
    ph(
        "current_tool_categories",
        "[INSERT CURRENT TOOL_CATEGORIES OR 'None yet']",
    ),
    ph("rule_bullets", "[INSERT NEW RULE BULLETS HERE]"),
];

static RULE_CLASSIFICATION_PLACEHOLDERS: [Placeholder; 6] = [
    ph("domain_list", "[INSERT domain list]"),
    ph("qualifier_list", "[INSERT qualifier list]"),
    ph("action_list", "[INSERT action list]"),
    ph("strength_list", "[INSERT strength list]"),
    ph("tool_category_list", "[INSERT tool_category list]"),
    ph("rule_object", "[INSERT RULE OBJECT AS JSON]"),
];

impl PromptTemplate {
    pub fn get(name: TemplateName) -> PromptTemplate {
        let (body, placeholders): (&'static str, &'static [Placeholder]) = match name {
            TemplateName::RuleGeneration => (
                include_str!("prompts/rule_generation.txt"),
                &RULE_GENERATION_PLACEHOLDERS,
            ),
            TemplateName::VocabCreate => (
                include_str!("prompts/vocab_create.txt"),
                &VOCAB_CREATE_PLACEHOLDERS,
            ),
            TemplateName::VocabUpdate => (
                include_str!("prompts/vocab_update.txt"),
                &VOCAB_UPDATE_PLACEHOLDERS,
            ),
            TemplateName::RuleClassification => (
                include_str!("prompts/rule_classification.txt"),
                &RULE_CLASSIFICATION_PLACEHOLDERS,
            ),
        };
        PromptTemplate {
            name,
            body,
            placeholders,
        }
    }

    pub fn placeholder_names(&self) -> Vec<&'static str> {
        self.placeholders.iter().map(|p| p.name).collect()
    }

    /// Substitutes every marker with its binding. Extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, GatewayError> {
        for p in self.placeholders {
            if !bindings.contains_key(p.name) {
                return Err(GatewayError::UnboundPlaceholder(p.name.to_string()));
            }
        }
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body;
        loop {
            let next = self
                .placeholders
                .iter()
                .filter_map(|p| rest.find(p.marker).map(|i| (i, p)))
                .min_by_key(|(i, _)| *i);
            match next {
                Some((i, p)) => {
                    out.push_str(&rest[..i]);
                    out.push_str(&bindings[p.name]);
                    rest = &rest[i + p.marker.len()..];
                }
                None => {
                    out.push_str(rest);
                    return Ok(out);
                }
            }
        }
    }
}

/// Convenience wrapper over [`PromptTemplate::render`].
pub fn render(
    name: TemplateName,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, GatewayError> {
    PromptTemplate::get(name).render(bindings)
}
