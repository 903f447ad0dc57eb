use std::fmt;

use serde::{Deserialize, Serialize};

/// One of the five semantic fields a symbolic rule draws its tokens from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Domain,
    Qualifier,
    Action,
    Strength,
    ToolCategory,
}

impl Field {
    pub const ALL: [Field; 5] = [
        Field::Domain,
        Field::Qualifier,
        Field::Action,
        Field::Strength,
        Field::ToolCategory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Domain => "domain",
            Field::Qualifier => "qualifier",
            Field::Action => "action",
            Field::Strength => "strength",
            Field::ToolCategory => "tool_category",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("token format: {0:?} does not match [A-Z0-9_]+")]
pub struct TokenFormatError(pub String);

/// A closed-vocabulary symbol such as `DECOMPOSE_QUERY`.
///
/// `Token::new` enforces the `[A-Z0-9_]+` format. Values deserialized from
/// JSON or built with `new_unchecked` are not checked; `validate_rule` and
/// `Vocabulary::violations` report malformed ones.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, TokenFormatError> {
        let text = text.into();
        if Self::is_well_formed(&text) {
            Ok(Token(text))
        } else {
            Err(TokenFormatError(text))
        }
    }

    pub fn new_unchecked(text: impl Into<String>) -> Self {
        Token(text.into())
    }

    /// Normalizes loosely formatted model output (`"multi-step reasoning"`)
    /// into token form, then validates it.
    pub fn normalize(text: &str) -> Result<Self, TokenFormatError> {
        let normalized: String = text
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_uppercase(),
            })
            .collect();
        Self::new(normalized)
    }

    pub fn is_well_formed(text: &str) -> bool {
        !text.is_empty()
            && text
                .bytes()
                .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}
