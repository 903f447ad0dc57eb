use std::fmt;

use serde::{Deserialize, Serialize};

use super::token::{Field, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connective {
    And,
    Or,
}

impl Connective {
    pub fn as_str(self) -> &'static str {
        match self {
            Connective::And => "and",
            Connective::Or => "or",
        }
    }
}

/// One condition clause of a symbolic rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ConditionClause {
    DomainIs(Token),
    QualifierAnyOf(Vec<Token>),
    ToolCategoryIs(Token),
}

impl ConditionClause {
    pub fn field(&self) -> Field {
        match self {
            ConditionClause::DomainIs(_) => Field::Domain,
            ConditionClause::QualifierAnyOf(_) => Field::Qualifier,
            ConditionClause::ToolCategoryIs(_) => Field::ToolCategory,
        }
    }

    pub fn tokens(&self) -> &[Token] {
        match self {
            ConditionClause::DomainIs(t) | ConditionClause::ToolCategoryIs(t) => {
                std::slice::from_ref(t)
            }
            ConditionClause::QualifierAnyOf(ts) => ts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormError {
    #[error("a symbolic form needs at least one condition clause")]
    NoClauses,
    #[error("expected {expected} connectives for {clauses} clauses, got {got}")]
    ConnectiveCount {
        clauses: usize,
        expected: usize,
        got: usize,
    },
    #[error("action list is empty")]
    NoActions,
    #[error("qualifier list is empty")]
    EmptyQualifiers,
    #[error("more than one {0} clause")]
    RepeatedClause(Field),
}

/// Condition/action structure over closed vocabularies:
/// `if (<clause> (and|or) <clause> ...) then (action=[...]) with strength=S`.
///
/// Values built through [`SymbolicForm::new`] or the parser are canonical:
/// qualifier and action lists are sorted and deduplicated. The fields stay
/// public so that externally built forms can be checked with
/// `validate_rule`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolicForm {
    pub clauses: Vec<ConditionClause>,
    pub connectives: Vec<Connective>,
    pub actions: Vec<Token>,
    pub strength: Token,
}

fn canonical_list(mut tokens: Vec<Token>) -> Vec<Token> {
    tokens.sort();
    tokens.dedup();
    tokens
}

impl SymbolicForm {
    pub fn new(
        clauses: Vec<ConditionClause>,
        connectives: Vec<Connective>,
        actions: Vec<Token>,
        strength: Token,
    ) -> Result<Self, FormError> {
        let clauses: Vec<ConditionClause> = clauses
            .into_iter()
            .map(|c| match c {
                ConditionClause::QualifierAnyOf(q) => {
                    ConditionClause::QualifierAnyOf(canonical_list(q))
                }
                other => other,
            })
            .collect();
        let form = SymbolicForm {
            clauses,
            connectives,
            actions: canonical_list(actions),
            strength,
        };
        form.check_structure()?;
        Ok(form)
    }

    /// Clause-count, connective-count and repetition invariants.
    pub fn check_structure(&self) -> Result<(), FormError> {
        if self.clauses.is_empty() {
            return Err(FormError::NoClauses);
        }
        if self.connectives.len() + 1 != self.clauses.len() {
            return Err(FormError::ConnectiveCount {
                clauses: self.clauses.len(),
                expected: self.clauses.len() - 1,
                got: self.connectives.len(),
            });
        }
        if self.actions.is_empty() {
            return Err(FormError::NoActions);
        }
        let mut seen_domain = false;
        let mut seen_qualifier = false;
        for clause in &self.clauses {
            match clause {
                ConditionClause::DomainIs(_) => {
                    if std::mem::replace(&mut seen_domain, true) {
                        return Err(FormError::RepeatedClause(Field::Domain));
                    }
                }
                ConditionClause::QualifierAnyOf(q) => {
                    if q.is_empty() {
                        return Err(FormError::EmptyQualifiers);
                    }
                    if std::mem::replace(&mut seen_qualifier, true) {
                        return Err(FormError::RepeatedClause(Field::Qualifier));
                    }
                }
                ConditionClause::ToolCategoryIs(_) => {}
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Option<&Token> {
        self.clauses.iter().find_map(|c| match c {
            ConditionClause::DomainIs(t) => Some(t),
            _ => None,
        })
    }

    pub fn qualifiers(&self) -> &[Token] {
        self.clauses
            .iter()
            .find_map(|c| match c {
                ConditionClause::QualifierAnyOf(q) => Some(q.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }

    pub fn tool_categories(&self) -> impl Iterator<Item = &Token> {
        self.clauses.iter().filter_map(|c| match c {
            ConditionClause::ToolCategoryIs(t) => Some(t),
            _ => None,
        })
    }

    /// Every semantic token with the field it belongs to, in rendering order.
    pub fn tokens(&self) -> Vec<(Field, &Token)> {
        let mut out: Vec<(Field, &Token)> = Vec::new();
        for clause in &self.clauses {
            let field = clause.field();
            out.extend(clause.tokens().iter().map(|t| (field, t)));
        }
        out.extend(self.actions.iter().map(|t| (Field::Action, t)));
        out.push((Field::Strength, &self.strength));
        out
    }

    /// Canonical textual rendering.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::from("if (");
        for (i, clause) in self.clauses.iter().enumerate() {
            if i > 0 {
                out.push(' ');
                out.push_str(self.connectives[i - 1].as_str());
                out.push(' ');
            }
            match clause {
                ConditionClause::DomainIs(t) => {
                    out.push_str("domain=");
                    out.push_str(t.as_str());
                }
                ConditionClause::QualifierAnyOf(q) => {
                    out.push_str("qualifier=");
                    push_list(&mut out, q);
                }
                ConditionClause::ToolCategoryIs(t) => {
                    out.push_str("tool_category=");
                    out.push_str(t.as_str());
                }
            }
        }
        out.push_str(") then (action=");
        push_list(&mut out, &self.actions);
        out.push_str(") with strength=");
        out.push_str(self.strength.as_str());
        out
    }
}

fn push_list(out: &mut String, tokens: &[Token]) {
    let mut sorted: Vec<&Token> = tokens.iter().collect();
    sorted.sort();
    sorted.dedup();
    out.push('[');
    for (i, t) in sorted.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(t.as_str());
    }
    out.push(']');
}

impl fmt::Display for SymbolicForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_string())
    }
}

/// Canonical serialization of a symbolic form.
pub fn serialize_symbolic(form: &SymbolicForm) -> String {
    form.to_canonical_string()
}
