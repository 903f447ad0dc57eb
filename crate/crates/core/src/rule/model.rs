use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::symbolic::SymbolicForm;
use super::token::Token;

/// The failure class a rule targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorType {
    #[serde(rename = "dec")]
    Decomposition,
    #[serde(rename = "sel")]
    ToolSelection,
    #[serde(rename = "arg")]
    ToolArguments,
}

impl ErrorType {
    pub fn code(self) -> &'static str {
        match self {
            ErrorType::Decomposition => "dec",
            ErrorType::ToolSelection => "sel",
            ErrorType::ToolArguments => "arg",
        }
    }

    pub fn is_tool_use(self) -> bool {
        self != ErrorType::Decomposition
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognized error type {0:?}")]
pub struct UnknownErrorType(pub String);

impl FromStr for ErrorType {
    type Err = UnknownErrorType;

    /// Accepts the short codes and the labels the generation prompt asks for
    /// ("decomposition error", "tool selection error", "tool arguments error").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        let norm = norm.strip_suffix(" error").unwrap_or(&norm).trim();
        match norm {
            "dec" | "decomposition" => Ok(ErrorType::Decomposition),
            "sel" | "tool selection" => Ok(ErrorType::ToolSelection),
            "arg" | "tool arguments" | "tool argument" => Ok(ErrorType::ToolArguments),
            _ => Err(UnknownErrorType(s.to_string())),
        }
    }
}

/// Which tools a rule applies to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolScope {
    Unscoped,
    /// Non-empty, sorted, deduplicated tool names.
    Tools(Vec<String>),
    Category(Token),
}

impl ToolScope {
    /// Builds a `Tools` scope; an empty name set yields `Unscoped`.
    pub fn tools<I, S>(names: I) -> ToolScope
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        if set.is_empty() {
            ToolScope::Unscoped
        } else {
            ToolScope::Tools(set.into_iter().collect())
        }
    }

    /// Contribution to the symbolic token length.
    pub fn token_cost(&self) -> usize {
        match self {
            ToolScope::Unscoped => 0,
            ToolScope::Tools(names) => names.len(),
            ToolScope::Category(_) => 1,
        }
    }

    pub fn is_unscoped(&self) -> bool {
        matches!(self, ToolScope::Unscoped)
    }
}

impl fmt::Display for ToolScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolScope::Unscoped => f.write_str("unscoped"),
            ToolScope::Tools(t) => write!(f, "tools[{}]", t.join(",")),
            ToolScope::Category(c) => write!(f, "category={c}"),
        }
    }
}

/// Stable rule identifier: a digest of the natural-language text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(String);

impl RuleId {
    pub fn for_text(nl_text: &str) -> RuleId {
        let digest = Sha256::digest(nl_text.trim().as_bytes());
        RuleId(hex::encode(&digest[..8]))
    }

    pub fn from_raw(id: impl Into<String>) -> RuleId {
        RuleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("rule text is empty")]
    EmptyText,
    #[error("rule {0} has no symbolic form")]
    MissingSymbolicForm(RuleId),
}

/// A learned rule in its natural-language and (once translated) symbolic forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: RuleId,
    pub nl_text: String,
    pub symbolic: Option<SymbolicForm>,
    pub error_type: ErrorType,
    pub tool_scope: ToolScope,
    /// Ids of the failure cases the rule was distilled from.
    pub provenance: Vec<String>,
}

impl Rule {
    pub fn new(
        nl_text: &str,
        error_type: ErrorType,
        tool_scope: ToolScope,
        provenance: impl IntoIterator<Item = String>,
    ) -> Result<Rule, RuleError> {
        let nl_text = nl_text.trim();
        if nl_text.is_empty() {
            return Err(RuleError::EmptyText);
        }
        let mut provenance: Vec<String> = provenance.into_iter().collect();
        provenance.sort();
        provenance.dedup();
        Ok(Rule {
            id: RuleId::for_text(nl_text),
            nl_text: nl_text.to_string(),
            symbolic: None,
            error_type,
            tool_scope,
            provenance,
        })
    }

    pub fn with_symbolic(mut self, form: SymbolicForm) -> Rule {
        self.symbolic = Some(form);
        self
    }

    pub fn symbolic_form(&self) -> Result<&SymbolicForm, RuleError> {
        self.symbolic
            .as_ref()
            .ok_or_else(|| RuleError::MissingSymbolicForm(self.id.clone()))
    }
}

/// Symbolic token length of a rule: semantic tokens only.
///
/// One per domain clause, one per qualifier, one per action, one for the
/// strength, one per tool-category clause, plus the scope cost (`|tools|`,
/// `1` for a category, `0` when unscoped). Keywords and connectives are free.
pub fn symbolic_token_length(rule: &Rule) -> Result<usize, RuleError> {
    let form = rule.symbolic_form()?;
    let clause_tokens: usize = form.clauses.iter().map(|c| c.tokens().len()).sum();
    Ok(clause_tokens + form.actions.len() + 1 + rule.tool_scope.token_cost())
}
