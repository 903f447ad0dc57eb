//! Scripted deterministic backend.
//!
//! A script is a list of entries, each matched either by the SHA-256 of the
//! exact prompt or by a set of substrings that must all occur in it. An
//! entry holds a reply sequence: the n-th matching call gets the n-th reply,
//! and the last reply repeats. Hash matches take precedence over substring
//! matches; among substring entries the first one in script order wins.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, BackendError, GatewayConfig, ModelBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Failure { error: MockFailure },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Transient,
    Timeout,
    Auth,
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }

    pub fn transient() -> Self {
        MockReply::Failure {
            error: MockFailure::Transient,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub replies: Vec<MockReply>,
}

impl MockEntry {
    pub fn for_prompt(prompt: &str, reply: impl Into<String>) -> Self {
        MockEntry {
            prompt_sha256: Some(prompt_hash(prompt)),
            contains: Vec::new(),
            replies: vec![MockReply::text(reply)],
        }
    }

    pub fn containing<I, S>(needles: I, reply: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockEntry {
            prompt_sha256: None,
            contains: needles.into_iter().map(Into::into).collect(),
            replies: vec![MockReply::text(reply)],
        }
    }

    pub fn with_replies(mut self, replies: Vec<MockReply>) -> Self {
        self.replies = replies;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(mut self, entry: MockEntry) -> Self {
        self.entries.push(entry);
        self
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub struct MockBackend {
    script: MockScript,
    by_hash: HashMap<String, usize>,
    calls: Mutex<HashMap<usize, usize>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let mut by_hash = HashMap::new();
        for (i, e) in script.entries.iter().enumerate() {
            if let Some(h) = &e.prompt_sha256 {
                by_hash.entry(h.clone()).or_insert(i);
            }
        }
        MockBackend {
            script,
            by_hash,
            calls: Mutex::new(HashMap::new()),
        }
    }

    fn matching_entry(&self, prompt: &str) -> Option<usize> {
        if let Some(&i) = self.by_hash.get(&prompt_hash(prompt)) {
            return Some(i);
        }
        self.script.entries.iter().position(|e| {
            e.prompt_sha256.is_none()
                && !e.contains.is_empty()
                && e.contains
                    .iter()
                    .all(|needle| prompt.contains(needle.as_str()))
        })
    }
}

impl ModelBackend for MockBackend {
    fn send(&self, prompt: &str, _config: &GatewayConfig) -> Result<String, BackendError> {
        let Some(idx) = self.matching_entry(prompt) else {
            return self.script.default.clone().ok_or_else(|| {
                BackendError::Fatal(format!(
                    "no scripted response for prompt {}",
                    &prompt_hash(prompt)[..12]
                ))
            });
        };
        let entry = &self.script.entries[idx];
        if entry.replies.is_empty() {
            return Err(BackendError::Fatal(format!(
                "script entry {idx} has no replies"
            )));
        }
        let n = {
            let mut calls = self.calls.lock().unwrap();
            let c = calls.entry(idx).or_insert(0);
            *c += 1;
            *c - 1
        };
        match &entry.replies[n.min(entry.replies.len() - 1)] {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Failure { error } => Err(match error {
                MockFailure::Transient => {
                    BackendError::Transport("scripted transient failure".into())
                }
                MockFailure::Timeout => BackendError::Timeout,
                MockFailure::Auth => BackendError::Auth("scripted auth failure".into()),
            }),
        }
    }
}
