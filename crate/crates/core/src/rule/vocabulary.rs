use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::token::{Field, Token};

/// Strength tokens every induced vocabulary carries.
pub const REQUIRED_STRENGTHS: [&str; 3] = ["MANDATORY", "OPTIONAL", "RECOMMENDED"];

/// Closed token sets for the five semantic fields.
///
/// The JSON form keeps the field order `version, domain, qualifier, action,
/// strength, tool_category`; arrays come out sorted because the sets are
/// ordered.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: String,
    pub domain: BTreeSet<Token>,
    pub qualifier: BTreeSet<Token>,
    pub action: BTreeSet<Token>,
    pub strength: BTreeSet<Token>,
    pub tool_category: BTreeSet<Token>,
}

impl Vocabulary {
    pub fn new(version: impl Into<String>) -> Self {
        Vocabulary {
            version: version.into(),
            ..Default::default()
        }
    }

    pub fn tokens(&self, field: Field) -> &BTreeSet<Token> {
        match field {
            Field::Domain => &self.domain,
            Field::Qualifier => &self.qualifier,
            Field::Action => &self.action,
            Field::Strength => &self.strength,
            Field::ToolCategory => &self.tool_category,
        }
    }

    pub fn tokens_mut(&mut self, field: Field) -> &mut BTreeSet<Token> {
        match field {
            Field::Domain => &mut self.domain,
            Field::Qualifier => &mut self.qualifier,
            Field::Action => &mut self.action,
            Field::Strength => &mut self.strength,
            Field::ToolCategory => &mut self.tool_category,
        }
    }

    pub fn contains(&self, field: Field, token: &Token) -> bool {
        self.tokens(field).contains(token)
    }

    pub fn insert(&mut self, field: Field, token: Token) -> bool {
        self.tokens_mut(field).insert(token)
    }

    /// Sum of the five set cardinalities.
    pub fn total_size(&self) -> usize {
        Field::ALL.iter().map(|&f| self.tokens(f).len()).sum()
    }

    pub fn ensure_required_strengths(&mut self) {
        for s in REQUIRED_STRENGTHS {
            self.strength.insert(Token::new_unchecked(s));
        }
    }

    /// Every broken invariant, as human-readable lines. Empty means valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for field in Field::ALL {
            let set = self.tokens(field);
            if set.is_empty() {
                out.push(format!("{field} token set is empty"));
            }
            for t in set {
                if !Token::is_well_formed(t.as_str()) {
                    out.push(format!("token format: {field} token {:?}", t.as_str()));
                }
            }
        }
        for s in REQUIRED_STRENGTHS {
            if !self.strength.contains(&Token::new_unchecked(s)) {
                out.push(format!("strength set lacks {s}"));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Stable content digest, used to derive version strings.
    pub fn content_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for field in Field::ALL {
            hasher.update(field.as_str().as_bytes());
            for t in self.tokens(field) {
                hasher.update(b"\x1f");
                hasher.update(t.as_str().as_bytes());
            }
            hasher.update(b"\x1e");
        }
        hex::encode(hasher.finalize())
    }

    /// Builds a vocabulary containing exactly the given `(field, token)` pairs.
    pub fn from_tokens<'a>(
        version: &str,
        tokens: impl IntoIterator<Item = (Field, &'a Token)>,
    ) -> Self {
        let mut v = Vocabulary::new(version);
        for (field, tok) in tokens {
            v.insert(field, tok.clone());
        }
        v
    }
}
