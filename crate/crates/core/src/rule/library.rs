use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grammar::{parse_symbolic, parse_symbolic_syntax, ParseError};
use super::model::{ErrorType, Rule, RuleError, RuleId, ToolScope};
use super::symbolic::SymbolicForm;
use super::vocabulary::Vocabulary;

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("duplicate rule id {0}")]
    DuplicateRule(RuleId),
    #[error("rule {id}: {source}")]
    Symbolic { id: String, source: ParseError },
    #[error("rule {id}: stored id does not match the digest of its text")]
    IdMismatch { id: String },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("malformed library file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Ordered collection of rules with unique ids and a content digest.
///
/// The digest covers each rule's id, scope and symbolic form, so a
/// generalize edit (which keeps the id) still yields a new hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleLibrary {
    rules: Vec<Rule>,
    library_hash: String,
    vocab_version: String,
}

impl Default for RuleLibrary {
    fn default() -> Self {
        RuleLibrary::new("")
    }
}

impl RuleLibrary {
    pub fn new(vocab_version: impl Into<String>) -> Self {
        let mut lib = RuleLibrary {
            rules: Vec::new(),
            library_hash: String::new(),
            vocab_version: vocab_version.into(),
        };
        lib.rehash();
        lib
    }

    pub fn from_rules(
        rules: impl IntoIterator<Item = Rule>,
        vocab_version: impl Into<String>,
    ) -> Result<Self, LibraryError> {
        let mut lib = RuleLibrary::new(vocab_version);
        let mut seen = HashSet::new();
        for rule in rules {
            if !seen.insert(rule.id.clone()) {
                return Err(LibraryError::DuplicateRule(rule.id));
            }
            lib.rules.push(rule);
        }
        lib.rehash();
        Ok(lib)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn hash(&self) -> &str {
        &self.library_hash
    }

    pub fn vocab_version(&self) -> &str {
        &self.vocab_version
    }

    pub fn set_vocab_version(&mut self, version: impl Into<String>) {
        self.vocab_version = version.into();
    }

    pub fn get(&self, id: &RuleId) -> Option<&Rule> {
        self.rules.iter().find(|r| &r.id == id)
    }

    pub fn contains(&self, id: &RuleId) -> bool {
        self.get(id).is_some()
    }

    /// Rule ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<RuleId> {
        let mut ids: Vec<RuleId> = self.rules.iter().map(|r| r.id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn insert(&mut self, rule: Rule) -> Result<(), LibraryError> {
        if self.contains(&rule.id) {
            return Err(LibraryError::DuplicateRule(rule.id));
        }
        self.rules.push(rule);
        self.rehash();
        Ok(())
    }

    pub fn remove(&mut self, id: &RuleId) -> Option<Rule> {
        let idx = self.rules.iter().position(|r| &r.id == id)?;
        let rule = self.rules.remove(idx);
        self.rehash();
        Some(rule)
    }

    /// Replaces a rule's tool scope; returns false if the id is absent.
    pub fn set_scope(&mut self, id: &RuleId, scope: ToolScope) -> bool {
        let Some(rule) = self.rules.iter_mut().find(|r| &r.id == id) else {
            return false;
        };
        rule.tool_scope = scope;
        self.rehash();
        true
    }

    pub fn without(&self, id: &RuleId) -> RuleLibrary {
        let mut next = self.clone();
        next.remove(id);
        next
    }

    pub fn with_scope(&self, id: &RuleId, scope: ToolScope) -> RuleLibrary {
        let mut next = self.clone();
        next.set_scope(id, scope);
        next
    }

    fn rehash(&mut self) {
        let mut entries: Vec<String> = self
            .rules
            .iter()
            .map(|r| {
                let scope = serde_json::to_string(&r.tool_scope).expect("scope serializes");
                let symbolic = r
                    .symbolic
                    .as_ref()
                    .map(SymbolicForm::to_canonical_string)
                    .unwrap_or_default();
                format!("{}\x1f{}\x1f{}", r.id, scope, symbolic)
            })
            .collect();
        entries.sort();
        let mut hasher = Sha256::new();
        for e in entries {
            hasher.update(e.as_bytes());
            hasher.update(b"\n");
        }
        self.library_hash = hex::encode(&hasher.finalize()[..16]);
    }

    pub fn to_json(&self) -> String {
        let file = LibraryFile {
            vocab_version: self.vocab_version.clone(),
            rules: self.rules.iter().map(RuleRecord::from).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("library serializes");
        s.push('\n');
        s
    }

    /// Reads a library file. With a vocabulary, every symbolic token is
    /// checked against it; without one only the syntax is checked.
    pub fn from_json(text: &str, vocab: Option<&Vocabulary>) -> Result<Self, LibraryError> {
        let file: LibraryFile = serde_json::from_str(text)?;
        let mut rules = Vec::with_capacity(file.rules.len());
        for rec in file.rules {
            let symbolic = match &rec.symbolic {
                None => None,
                Some(s) => Some(
                    match vocab {
                        Some(v) => parse_symbolic(s, v),
                        None => parse_symbolic_syntax(s),
                    }
                    .map_err(|source| LibraryError::Symbolic {
                        id: rec.id.clone(),
                        source,
                    })?,
                ),
            };
            let rule = Rule::new(&rec.nl_text, rec.error_type, rec.tool_scope, rec.provenance)?;
            if rule.id.as_str() != rec.id {
                return Err(LibraryError::IdMismatch { id: rec.id });
            }
            rules.push(Rule { symbolic, ..rule });
        }
        RuleLibrary::from_rules(rules, file.vocab_version)
    }
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    vocab_version: String,
    rules: Vec<RuleRecord>,
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    id: String,
    nl_text: String,
    symbolic: Option<String>,
    error_type: ErrorType,
    tool_scope: ToolScope,
    provenance: Vec<String>,
}

impl From<&Rule> for RuleRecord {
    fn from(r: &Rule) -> Self {
        RuleRecord {
            id: r.id.to_string(),
            nl_text: r.nl_text.clone(),
            symbolic: r.symbolic.as_ref().map(SymbolicForm::to_canonical_string),
            error_type: r.error_type,
            tool_scope: r.tool_scope.clone(),
            provenance: r.provenance.clone(),
        }
    }
}
