//! Parser for the canonical symbolic rule grammar.
//!
//! ```text
//! rule      := "if" "(" condition ")" "then" "(" "action" "=" list ")"
//!              "with" "strength" "=" TOKEN
//! condition := clause (("and" | "or") clause)*
//! clause    := "domain" "=" TOKEN
//!            | "qualifier" "=" list
//!            | "tool_category" "=" TOKEN
//! list      := "[" TOKEN ("," TOKEN)* "]"
//! TOKEN     := [A-Z0-9_]+
//! ```
//!
//! Connectives are kept as written; a mixed chain is read left to right.

use std::fmt;

use super::symbolic::{ConditionClause, Connective, FormError, SymbolicForm};
use super::token::{Field, Token};
use super::vocabulary::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    /// Byte offset into the input.
    pub position: usize,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at byte {}: expected {}, found {}",
            self.position, self.expected, self.found
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{0}")]
    Syntax(SyntaxError),
    #[error("unknown {field} token {token}")]
    UnknownToken { field: Field, token: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lexeme<'a> {
    Word(&'a str),
    Punct(char),
    End,
}

impl fmt::Display for Lexeme<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lexeme::Word(w) => write!(f, "{w:?}"),
            Lexeme::Punct(c) => write!(f, "'{c}'"),
            Lexeme::End => f.write_str("end of input"),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0 }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
    }

    /// Returns the next lexeme and its start offset without consuming it.
    fn peek(&mut self) -> (usize, Lexeme<'a>) {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return (start, Lexeme::End);
        };
        if c.is_ascii_alphanumeric() || c == '_' {
            let len = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .unwrap_or(rest.len());
            (start, Lexeme::Word(&rest[..len]))
        } else {
            (start, Lexeme::Punct(c))
        }
    }

    fn bump(&mut self) -> (usize, Lexeme<'a>) {
        let (start, lex) = self.peek();
        self.pos = start
            + match lex {
                Lexeme::Word(w) => w.len(),
                Lexeme::Punct(c) => c.len_utf8(),
                Lexeme::End => 0,
            };
        (start, lex)
    }

    fn error(&mut self, expected: &str) -> ParseError {
        let (position, found) = self.peek();
        ParseError::Syntax(SyntaxError {
            position,
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek().1 {
            Lexeme::Word(w) if w == kw => {
                self.bump();
                Ok(())
            }
            _ => Err(self.error(&format!("keyword {kw:?}"))),
        }
    }

    fn expect_punct(&mut self, p: char) -> Result<(), ParseError> {
        match self.peek().1 {
            Lexeme::Punct(c) if c == p => {
                self.bump();
                Ok(())
            }
            _ => Err(self.error(&format!("'{p}'"))),
        }
    }

    fn token(&mut self, field: Field) -> Result<Token, ParseError> {
        match self.peek().1 {
            Lexeme::Word(w) if Token::is_well_formed(w) => {
                self.bump();
                Ok(Token::new_unchecked(w))
            }
            _ => Err(self.error(&format!("{field} token [A-Z0-9_]+"))),
        }
    }

    fn list(&mut self, field: Field) -> Result<Vec<Token>, ParseError> {
        self.expect_punct('[')?;
        let mut out = vec![self.token(field)?];
        loop {
            match self.peek().1 {
                Lexeme::Punct(',') => {
                    self.bump();
                    out.push(self.token(field)?);
                }
                Lexeme::Punct(']') => {
                    self.bump();
                    return Ok(out);
                }
                _ => return Err(self.error("',' or ']'")),
            }
        }
    }

    fn clause(&mut self) -> Result<(usize, ConditionClause), ParseError> {
        let (start, lex) = self.peek();
        let clause = match lex {
            Lexeme::Word("domain") => {
                self.bump();
                self.expect_punct('=')?;
                ConditionClause::DomainIs(self.token(Field::Domain)?)
            }
            Lexeme::Word("qualifier") => {
                self.bump();
                self.expect_punct('=')?;
                ConditionClause::QualifierAnyOf(self.list(Field::Qualifier)?)
            }
            Lexeme::Word("tool_category") => {
                self.bump();
                self.expect_punct('=')?;
                ConditionClause::ToolCategoryIs(self.token(Field::ToolCategory)?)
            }
            _ => return Err(self.error("clause (domain=, qualifier=, tool_category=)")),
        };
        Ok((start, clause))
    }
}

/// Parses a symbolic rule string, checking syntax only.
pub fn parse_symbolic_syntax(text: &str) -> Result<SymbolicForm, ParseError> {
    let mut lx = Lexer::new(text);
    lx.expect_keyword("if")?;
    lx.expect_punct('(')?;

    let mut clauses = Vec::new();
    let mut connectives = Vec::new();
    // (start offset, field) of each clause, for structure errors
    let mut clause_starts = Vec::new();
    let (start, first) = lx.clause()?;
    clause_starts.push((start, first.field()));
    clauses.push(first);
    loop {
        match lx.peek().1 {
            Lexeme::Word("and") => {
                lx.bump();
                connectives.push(Connective::And);
            }
            Lexeme::Word("or") => {
                lx.bump();
                connectives.push(Connective::Or);
            }
            Lexeme::Punct(')') => {
                lx.bump();
                break;
            }
            _ => return Err(lx.error("\"and\", \"or\" or ')'")),
        }
        let (start, clause) = lx.clause()?;
        clause_starts.push((start, clause.field()));
        clauses.push(clause);
    }

    lx.expect_keyword("then")?;
    lx.expect_punct('(')?;
    lx.expect_keyword("action")?;
    lx.expect_punct('=')?;
    let actions = lx.list(Field::Action)?;
    lx.expect_punct(')')?;
    lx.expect_keyword("with")?;
    lx.expect_keyword("strength")?;
    lx.expect_punct('=')?;
    let strength = lx.token(Field::Strength)?;
    if lx.peek().1 != Lexeme::End {
        return Err(lx.error("end of input"));
    }

    SymbolicForm::new(clauses, connectives, actions, strength).map_err(|e| {
        let position = match e {
            FormError::RepeatedClause(field) => clause_starts
                .iter()
                .filter(|(_, f)| *f == field)
                .nth(1)
                .map(|(p, _)| *p)
                .unwrap_or(0),
            _ => 0,
        };
        ParseError::Syntax(SyntaxError {
            position,
            expected: "well-formed rule structure".to_string(),
            found: e.to_string(),
        })
    })
}

/// Parses a symbolic rule string and checks every token against `vocab`.
pub fn parse_symbolic(text: &str, vocab: &Vocabulary) -> Result<SymbolicForm, ParseError> {
    let form = parse_symbolic_syntax(text)?;
    check_tokens(&form, vocab)?;
    Ok(form)
}

pub(crate) fn check_tokens(form: &SymbolicForm, vocab: &Vocabulary) -> Result<(), ParseError> {
    for (field, token) in form.tokens() {
        if !vocab.contains(field, token) {
            return Err(ParseError::UnknownToken {
                field,
                token: token.as_str().to_string(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN_RULE: &str = "if (domain=RELATIONSHIP_RESOLUTION and qualifier=[RELATIONSHIP_CHAIN_TRAVERSAL, INTERMEDIATE_ENTITY_IDENTIFICATION]) then (action=[DECOMPOSE_QUERY, RESOLVE_INTERMEDIATE_ENTITY]) with strength=MANDATORY";
    const CASE_STUDY: &str = "if (domain=FAMILIAL_RELATIONSHIP or tool_category=GENEALOGY_QUERY) then (action=[DECOMPOSE_QUERY, RESOLVE_INTERMEDIATE_ENTITY, SEQUENCE_SUBTASKS]) with strength=MANDATORY";

    fn vocab_of(form: &SymbolicForm) -> Vocabulary {
        Vocabulary::from_tokens("test", form.tokens())
    }

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    #[test]
    fn parses_domain_and_qualifier_rule() {
        let form = parse_symbolic_syntax(CHAIN_RULE).unwrap();
        assert_eq!(form.clauses.len(), 2);
        assert_eq!(form.connectives, vec![Connective::And]);
        assert_eq!(form.domain(), Some(&tok("RELATIONSHIP_RESOLUTION")));
        assert_eq!(
            form.qualifiers(),
            &[
                tok("INTERMEDIATE_ENTITY_IDENTIFICATION"),
                tok("RELATIONSHIP_CHAIN_TRAVERSAL")
            ]
        );
        assert_eq!(
            form.actions,
            vec![tok("DECOMPOSE_QUERY"), tok("RESOLVE_INTERMEDIATE_ENTITY")]
        );
        assert_eq!(form.strength, tok("MANDATORY"));
        assert!(parse_symbolic(CHAIN_RULE, &vocab_of(&form)).is_ok());
    }

    #[test]
    fn canonical_rendering_sorts_lists() {
        let form = parse_symbolic_syntax(CHAIN_RULE).unwrap();
        assert_eq!(
            form.to_canonical_string(),
            "if (domain=RELATIONSHIP_RESOLUTION and qualifier=[INTERMEDIATE_ENTITY_IDENTIFICATION, RELATIONSHIP_CHAIN_TRAVERSAL]) then (action=[DECOMPOSE_QUERY, RESOLVE_INTERMEDIATE_ENTITY]) with strength=MANDATORY"
        );
        assert_eq!(
            parse_symbolic_syntax(&form.to_canonical_string()).unwrap(),
            form
        );
    }

    #[test]
    fn parses_or_with_tool_category() {
        let form = parse_symbolic_syntax(CASE_STUDY).unwrap();
        assert_eq!(form.connectives, vec![Connective::Or]);
        assert_eq!(
            form.clauses[1],
            ConditionClause::ToolCategoryIs(tok("GENEALOGY_QUERY"))
        );
        assert_eq!(form.to_canonical_string(), CASE_STUDY);
    }

    #[test]
    fn minimal_instance() {
        let form = SymbolicForm::new(
            vec![ConditionClause::DomainIs(tok("X"))],
            vec![],
            vec![tok("A")],
            tok("OPTIONAL"),
        )
        .unwrap();
        assert_eq!(
            form.to_canonical_string(),
            "if (domain=X) then (action=[A]) with strength=OPTIONAL"
        );
    }

    #[test]
    fn input_order_does_not_matter() {
        let a = SymbolicForm::new(
            vec![ConditionClause::QualifierAnyOf(vec![tok("B"), tok("A")])],
            vec![],
            vec![tok("Z"), tok("Y")],
            tok("MANDATORY"),
        )
        .unwrap();
        let b = SymbolicForm::new(
            vec![ConditionClause::QualifierAnyOf(vec![tok("A"), tok("B")])],
            vec![],
            vec![tok("Y"), tok("Z")],
            tok("MANDATORY"),
        )
        .unwrap();
        assert_eq!(a.to_canonical_string(), b.to_canonical_string());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_action_list_is_syntax_error() {
        let err = parse_symbolic_syntax("if (domain=X) then (action=[]) with strength=MANDATORY")
            .unwrap_err();
        match err {
            ParseError::Syntax(e) => {
                assert_eq!(e.position, 28);
                assert!(e.expected.contains("action token"), "{e}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_token_reported_with_field() {
        let form = parse_symbolic_syntax(CHAIN_RULE).unwrap();
        let mut vocab = vocab_of(&form);
        vocab.action.remove(&tok("DECOMPOSE_QUERY"));
        assert_eq!(
            parse_symbolic(CHAIN_RULE, &vocab).unwrap_err(),
            ParseError::UnknownToken {
                field: Field::Action,
                token: "DECOMPOSE_QUERY".into()
            }
        );
    }

    #[test]
    fn malformed_inputs() {
        let cases = [
            "",
            "if domain=X then (action=[A]) with strength=S",
            "if (domain=fooBar) then (action=[A]) with strength=S",
            "if (domain=X and) then (action=[A]) with strength=S",
            "if (domain=X) then (action=[A,]) with strength=S",
            "if (domain=X) then (action=[A]) with strength=S trailing",
            "if (domain=X and domain=Y) then (action=[A]) with strength=S",
            "if (qualifier=[A] or qualifier=[B]) then (action=[A]) with strength=S",
            "if (domain=X xor tool_category=Y) then (action=[A]) with strength=S",
        ];
        for c in cases {
            assert!(
                matches!(parse_symbolic_syntax(c), Err(ParseError::Syntax(_))),
                "accepted {c:?}"
            );
        }
    }

    #[test]
    fn repeated_clause_points_at_second_occurrence() {
        let text = "if (domain=X and domain=Y) then (action=[A]) with strength=S";
        match parse_symbolic_syntax(text).unwrap_err() {
            ParseError::Syntax(e) => assert_eq!(e.position, text.rfind("domain=").unwrap()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn whitespace_is_flexible() {
        let form = parse_symbolic_syntax(
            "if(domain = X   or\ntool_category=Y)then(action=[ B ,A ])with strength=MANDATORY",
        )
        .unwrap();
        assert_eq!(
            form.to_canonical_string(),
            "if (domain=X or tool_category=Y) then (action=[A, B]) with strength=MANDATORY"
        );
    }
}
