use std::fmt;

use super::model::{Rule, ToolScope};
use super::symbolic::ConditionClause;
use super::token::{Field, Token};
use super::vocabulary::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyText,
    TokenFormat { field: Field, token: String },
    UnknownToken { field: Field, token: String },
    DuplicateToken { field: Field, token: String },
    UnsortedList { field: Field },
    Structure(String),
    ScopedDecomposition,
    ToolScopeNotCanonical,
    UnknownScopeCategory(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyText => f.write_str("rule text is empty"),
            Violation::TokenFormat { field, token } => {
                write!(
                    f,
                    "token format: {field} token {token:?} does not match [A-Z0-9_]+"
                )
            }
            Violation::UnknownToken { field, token } => {
                write!(f, "unknown token: {token} is not in the {field} vocabulary")
            }
            Violation::DuplicateToken { field, token } => {
                write!(f, "duplicate {field} token {token}")
            }
            Violation::UnsortedList { field } => write!(f, "{field} list is not sorted"),
            Violation::Structure(msg) => write!(f, "structure: {msg}"),
            Violation::ScopedDecomposition => f.write_str("decomposition rules are unscoped"),
            Violation::ToolScopeNotCanonical => {
                f.write_str("tool scope list must be non-empty, sorted and deduplicated")
            }
            Violation::UnknownScopeCategory(c) => {
                write!(
                    f,
                    "scope category {c} is not in the tool_category vocabulary"
                )
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

fn check_list(field: Field, tokens: &[Token], out: &mut Vec<Violation>) {
    if tokens.windows(2).any(|w| w[0] > w[1]) {
        out.push(Violation::UnsortedList { field });
    }
    let mut sorted: Vec<&Token> = tokens.iter().collect();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            out.push(Violation::DuplicateToken {
                field,
                token: w[0].to_string(),
            });
        }
    }
}

/// Lists every invariant the rule breaks against `vocab`.
pub fn validate_rule(rule: &Rule, vocab: &Vocabulary) -> ValidationReport {
    let mut out = Vec::new();
    if rule.nl_text.trim().is_empty() {
        out.push(Violation::EmptyText);
    }
    if !rule.error_type.is_tool_use() && !rule.tool_scope.is_unscoped() {
        out.push(Violation::ScopedDecomposition);
    }
    match &rule.tool_scope {
        ToolScope::Unscoped => {}
        ToolScope::Tools(names) => {
            if names.is_empty() || names.windows(2).any(|w| w[0] >= w[1]) {
                out.push(Violation::ToolScopeNotCanonical);
            }
        }
        ToolScope::Category(c) => {
            if !Token::is_well_formed(c.as_str()) {
                out.push(Violation::TokenFormat {
                    field: Field::ToolCategory,
                    token: c.to_string(),
                });
            } else if !vocab.contains(Field::ToolCategory, c) {
                out.push(Violation::UnknownScopeCategory(c.to_string()));
            }
        }
    }

    if let Some(form) = &rule.symbolic {
        if let Err(e) = form.check_structure() {
            out.push(Violation::Structure(e.to_string()));
        }
        for clause in &form.clauses {
            if let ConditionClause::QualifierAnyOf(q) = clause {
                check_list(Field::Qualifier, q, &mut out);
            }
        }
        check_list(Field::Action, &form.actions, &mut out);
        for (field, token) in form.tokens() {
            if !Token::is_well_formed(token.as_str()) {
                out.push(Violation::TokenFormat {
                    field,
                    token: token.to_string(),
                });
            } else if !vocab.contains(field, token) {
                out.push(Violation::UnknownToken {
                    field,
                    token: token.to_string(),
                });
            }
        }
    }
    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::grammar::parse_symbolic_syntax;
    use crate::rule::model::ErrorType;
    use crate::rule::symbolic::SymbolicForm;

    const SAMPLE_RULE: &str = "if (domain=QUERY_DECOMPOSITION and qualifier=[MULTI_STEP_REASONING, DERIVATIVE_ENTITY]) then (action=[DECOMPOSE_QUERY, TRANSFORM_INPUT]) with strength=MANDATORY";

    fn sample_rule() -> (Rule, Vocabulary) {
        let form = parse_symbolic_syntax(SAMPLE_RULE).unwrap();
        let vocab = Vocabulary::from_tokens("v1", form.tokens());
        let rule = Rule::new(
            "If a query involves determining a property of an object derived from intermediate steps, then the decomposition must explicitly include a subtask to apply the transformation.",
            ErrorType::Decomposition,
            ToolScope::Unscoped,
            vec!["case-1".to_string()],
        )
        .unwrap()
        .with_symbolic(form);
        (rule, vocab)
    }

    #[test]
    fn valid_rule_has_empty_report() {
        let (rule, vocab) = sample_rule();
        let report = validate_rule(&rule, &vocab);
        assert!(report.is_valid(), "{:?}", report.messages());
    }

    #[test]
    fn scoped_decomposition_rule() {
        let (mut rule, vocab) = sample_rule();
        rule.tool_scope = ToolScope::tools(["get_father"]);
        let report = validate_rule(&rule, &vocab);
        assert_eq!(report.violations, vec![Violation::ScopedDecomposition]);
        assert!(report.messages()[0].contains("decomposition rules are unscoped"));
    }

    #[test]
    fn bad_token_format() {
        let (mut rule, vocab) = sample_rule();
        let form = rule.symbolic.as_mut().unwrap();
        form.clauses[0] = ConditionClause::DomainIs(Token::new_unchecked("fooBar"));
        let report = validate_rule(&rule, &vocab);
        assert_eq!(report.violations.len(), 1);
        assert!(report.messages()[0].contains("token format"));
    }

    #[test]
    fn lists_every_violation() {
        let (mut rule, vocab) = sample_rule();
        let t = |s: &str| Token::new(s).unwrap();
        rule.symbolic = Some(SymbolicForm {
            clauses: vec![ConditionClause::QualifierAnyOf(vec![
                t("MULTI_STEP_REASONING"),
                t("MULTI_STEP_REASONING"),
            ])],
            connectives: vec![],
            actions: vec![t("TRANSFORM_INPUT"), t("NEW_ACTION")],
            strength: t("MANDATORY"),
        });
        rule.tool_scope = ToolScope::Category(t("NOT_A_CATEGORY"));
        let v = validate_rule(&rule, &vocab).violations;
        assert!(v.contains(&Violation::ScopedDecomposition));
        assert!(v.contains(&Violation::UnknownScopeCategory("NOT_A_CATEGORY".into())));
        assert!(v.contains(&Violation::DuplicateToken {
            field: Field::Qualifier,
            token: "MULTI_STEP_REASONING".into()
        }));
        assert!(v.contains(&Violation::UnsortedList {
            field: Field::Action
        }));
        assert!(v.contains(&Violation::UnknownToken {
            field: Field::Action,
            token: "NEW_ACTION".into()
        }));
    }
}
