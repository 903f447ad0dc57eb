//! Cases, tool specifications, execution traces and their JSONL encoding.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rule::Token;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "empty_object")]
    pub parameters: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Token>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl ToolSpec {
    pub fn new(name: impl Into<String>) -> Self {
        ToolSpec {
            name: name.into(),
            description: String::new(),
            parameters: empty_object(),
            category: None,
        }
    }

    pub fn with_category(mut self, category: Token) -> Self {
        self.category = Some(category);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        ToolCall {
            name: name.into(),
            arguments,
        }
    }
}

/// One thought/tool-call/observation record of an agent execution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
}

impl TraceStep {
    pub fn call(name: &str, arguments: Value, observation: &str) -> Self {
        TraceStep {
            thought: None,
            tool_call: Some(ToolCall::new(name, arguments)),
            observation: Some(observation.to_string()),
        }
    }
}

/// Number of leading tool calls of `trace` that equal those of `gold`.
/// Steps without a tool call are ignored on both sides.
pub fn matching_prefix(trace: &[TraceStep], gold: &[TraceStep]) -> usize {
    let calls = |t: &[TraceStep]| -> Vec<ToolCall> {
        t.iter().filter_map(|s| s.tool_call.clone()).collect()
    };
    calls(trace)
        .iter()
        .zip(calls(gold).iter())
        .take_while(|(a, b)| a == b)
        .count()
}

/// A labelled task: query, tool set and gold behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub gold_trace: Vec<TraceStep>,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl Case {
    pub fn tool_names(&self) -> BTreeSet<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }
}

/// A case the agent got wrong, paired with its incorrect trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
    pub incorrect_trace: Vec<TraceStep>,
    pub gold_trace: Vec<TraceStep>,
    pub gold_answer: String,
}

impl FailureCase {
    pub fn from_case(case: &Case, incorrect_trace: Vec<TraceStep>) -> Self {
        FailureCase {
            id: case.id.clone(),
            query: case.query.clone(),
            tools: case.tools.clone(),
            incorrect_trace,
            gold_trace: case.gold_trace.clone(),
            gold_answer: case.gold_answer.clone(),
        }
    }

    /// Field name of the first violated invariant, if any.
    fn invalid_field(&self) -> Option<&'static str> {
        if self.gold_trace.is_empty() {
            return Some("gold_trace");
        }
        if self.incorrect_trace.is_empty() {
            return Some("incorrect_trace");
        }
        let names: HashSet<&str> = self.tools.iter().map(|t| t.name.as_str()).collect();
        let known = |trace: &[TraceStep]| {
            trace
                .iter()
                .filter_map(|s| s.tool_call.as_ref())
                .all(|c| names.contains(c.name.as_str()))
        };
        if !known(&self.gold_trace) {
            return Some("gold_trace");
        }
        if !known(&self.incorrect_trace) {
            return Some("incorrect_trace");
        }
        None
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl SchemaError {
    pub fn line(&self) -> Option<usize> {
        match self {
            SchemaError::Field { line, .. } => Some(*line),
            SchemaError::Io(_) => None,
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            SchemaError::Field { field, .. } => Some(field),
            SchemaError::Io(_) => None,
        }
    }
}

fn field_error(line: usize, field: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Field {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses JSON lines, checking `required` keys on every record first so
/// that missing fields are reported by name. Blank lines are skipped.
/// Line numbers are 1-based.
pub fn parse_jsonl<T: DeserializeOwned>(
    text: &str,
    required: &[&str],
) -> Result<Vec<(usize, T)>, SchemaError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| field_error(line, "<record>", format!("invalid JSON: {e}")))?;
        let Some(obj) = value.as_object() else {
            return Err(field_error(line, "<record>", "expected a JSON object"));
        };
        if let Some(missing) = required.iter().find(|k| !obj.contains_key(**k)) {
            return Err(field_error(line, missing, "missing"));
        }
        let keys: HashSet<String> = obj.keys().cloned().collect();
        let record = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|f| keys.contains(*f))
                .unwrap_or("<record>")
                .to_string();
            SchemaError::Field {
                line,
                field,
                message: msg,
            }
        })?;
        out.push((line, record));
    }
    Ok(out)
}

fn check_unique_ids<'a>(ids: impl Iterator<Item = (usize, &'a str)>) -> Result<(), SchemaError> {
    let mut seen = HashSet::new();
    for (line, id) in ids {
        if id.is_empty() {
            return Err(field_error(line, "id", "empty id"));
        }
        if !seen.insert(id) {
            return Err(field_error(line, "id", format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

pub fn parse_cases(text: &str) -> Result<Vec<Case>, SchemaError> {
    let rows: Vec<(usize, Case)> = parse_jsonl(text, &["id", "query", "gold_answer"])?;
    check_unique_ids(rows.iter().map(|(l, c)| (*l, c.id.as_str())))?;
    Ok(rows.into_iter().map(|(_, c)| c).collect())
}

pub fn parse_failures(text: &str) -> Result<Vec<FailureCase>, SchemaError> {
    let rows: Vec<(usize, FailureCase)> = parse_jsonl(
        text,
        &[
            "id",
            "query",
            "incorrect_trace",
            "gold_trace",
            "gold_answer",
        ],
    )?;
    check_unique_ids(rows.iter().map(|(l, c)| (*l, c.id.as_str())))?;
    for (line, f) in &rows {
        if let Some(field) = f.invalid_field() {
            return Err(field_error(
                *line,
                field,
                "trace is empty or calls a tool outside the case's tool set",
            ));
        }
    }
    Ok(rows.into_iter().map(|(_, c)| c).collect())
}

pub fn load_failures(path: &Path) -> Result<Vec<FailureCase>, SchemaError> {
    parse_failures(&std::fs::read_to_string(path)?)
}

/// Serializes records as JSON lines, one per record, newline-terminated.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn failure_line(id: &str) -> String {
        json!({
            "id": id,
            "query": "q",
            "tools": [{"name": "a"}],
            "incorrect_trace": [{"tool_call": {"name": "a", "arguments": {"x": 1}}}],
            "gold_trace": [{"tool_call": {"name": "a", "arguments": {"x": 2}}}],
            "gold_answer": "42"
        })
        .to_string()
    }

    #[test]
    fn parses_failures_and_round_trips() {
        let text = format!("{}\n\n{}\n", failure_line("f1"), failure_line("f2"));
        let fs = parse_failures(&text).unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs[1].tools[0].parameters, json!({}));
        assert_eq!(parse_failures(&to_jsonl(&fs)).unwrap(), fs);
    }

    #[test]
    fn missing_gold_answer_is_schema_error() {
        let text = "{\"id\": \"c1\", \"query\": \"q\", \"gold_answer\": \"a\"}\n{\"id\": \"c2\", \"query\": \"q\"}\n";
        let err = parse_cases(text).unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert_eq!(err.field(), Some("gold_answer"));
    }

    #[test]
    fn wrong_type_names_the_field() {
        let err = parse_cases("{\"id\": \"c\", \"query\": 5, \"gold_answer\": \"a\"}").unwrap_err();
        assert_eq!(err.line(), Some(1));
        assert!(err.to_string().contains("query") || err.field() == Some("<record>"));
    }

    #[test]
    fn empty_text_is_empty_dataset() {
        assert!(parse_cases("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}\n", failure_line("f"), failure_line("f"));
        let err = parse_failures(&text).unwrap_err();
        assert_eq!((err.line(), err.field()), (Some(2), Some("id")));
    }

    #[test]
    fn trace_tool_outside_tool_set_rejected() {
        let line = failure_line("f").replace(
            "\"tools\":[{\"name\":\"a\"}]",
            "\"tools\":[{\"name\":\"b\"}]",
        );
        assert!(parse_failures(&line).is_err());
    }

    #[test]
    fn prefix_matching_ignores_thought_only_steps() {
        let gold = vec![
            TraceStep::call("a", json!({"x": 1}), "o"),
            TraceStep::call("b", json!({}), "o"),
        ];
        let thought = TraceStep {
            thought: Some("hmm".into()),
            ..TraceStep::default()
        };
        let t = vec![
            thought,
            TraceStep::call("a", json!({"x": 1}), "different obs"),
        ];
        assert_eq!(matching_prefix(&t, &gold), 1);
        assert_eq!(matching_prefix(&gold, &gold), 2);
        assert_eq!(matching_prefix(&[], &gold), 0);
    }
}
