//! Rule representation: natural-language text paired with a symbolic form
//! over closed five-field vocabularies, the canonical grammar, and the
//! symbolic token length used as model cost.

mod grammar;
mod library;
mod model;
mod symbolic;
mod token;
mod validate;
mod vocabulary;

pub use grammar::{parse_symbolic, parse_symbolic_syntax, ParseError, SyntaxError};
pub use library::{LibraryError, RuleLibrary};
pub use model::{
    symbolic_token_length, ErrorType, Rule, RuleError, RuleId, ToolScope, UnknownErrorType,
};
pub use symbolic::{serialize_symbolic, ConditionClause, Connective, FormError, SymbolicForm};
pub use token::{Field, Token, TokenFormatError};
pub use validate::{validate_rule, ValidationReport, Violation};
pub use vocabulary::{Vocabulary, REQUIRED_STRENGTHS};
