//! Agent abstraction: scripted mock agent and a ReAct-style loop over the
//! model gateway, plus rule injection and answer comparison.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::case::{Case, ToolCall, ToolSpec, TraceStep};
use crate::gateway::{Gateway, GatewayError};

pub const DEFAULT_MAX_STEPS: usize = 15;
pub const DEFAULT_TOOL_RETRIES: usize = 2;

/// Outcome of one agent execution. `error` is set when the run aborted
/// (unrecoverable tool error, step limit); `trace` is then truncated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub trace: Vec<TraceStep>,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AgentRun {
    pub fn is_correct(&self, gold: &str) -> bool {
        self.error.is_none()
            && self
                .answer
                .as_deref()
                .is_some_and(|a| answers_match(a, gold))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no scripted behaviour for query {0:?}")]
    Unscripted(String),
}

pub trait AgentHandle: Send + Sync {
    /// Runs the agent on `query` with `rules` (natural-language texts)
    /// injected into its prompt.
    fn run(
        &self,
        query: &str,
        tools: &[ToolSpec],
        rules: &[String],
    ) -> Result<AgentRun, AgentError>;
}

/// Exact match after trimming and lowercasing; numeric answers compare by value.
pub fn answers_match(answer: &str, gold: &str) -> bool {
    let norm = |s: &str| s.trim().to_lowercase();
    let (a, g) = (norm(answer), norm(gold));
    if a == g {
        return true;
    }
    match (a.parse::<f64>(), g.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Numbered rule list under a fixed `Rules:` header; empty when no rules.
pub fn injection_block(rules: &[String]) -> String {
    if rules.is_empty() {
        return String::new();
    }
    let mut out = String::from("Rules:\n");
    for (i, r) in rules.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, r));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockBehaviour {
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub trace: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockBehaviour {
    pub fn answer(answer: &str, trace: Vec<TraceStep>) -> Self {
        MockBehaviour {
            answer: Some(answer.to_string()),
            trace,
            error: None,
        }
    }
}

/// A behaviour that applies when every needle occurs in some injected rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockVariant {
    pub requires: Vec<String>,
    #[serde(flatten)]
    pub behaviour: MockBehaviour,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockCaseScript {
    pub query: String,
    pub default: MockBehaviour,
    #[serde(default)]
    pub with_rules: Vec<MockVariant>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockAgentScript {
    pub cases: Vec<MockCaseScript>,
}

/// Deterministic agent driven by a per-query script. The first variant whose
/// needles all match the injected rules wins; otherwise the default applies.
#[derive(Debug, Clone)]
pub struct MockAgent {
    by_query: HashMap<String, MockCaseScript>,
}

impl MockAgent {
    pub fn new(script: MockAgentScript) -> Self {
        MockAgent {
            by_query: script
                .cases
                .into_iter()
                .map(|c| (c.query.clone(), c))
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        Ok(MockAgent::new(serde_json::from_str(text)?))
    }
}

impl AgentHandle for MockAgent {
    fn run(
        &self,
        query: &str,
        _tools: &[ToolSpec],
        rules: &[String],
    ) -> Result<AgentRun, AgentError> {
        let script = self
            .by_query
            .get(query)
            .ok_or_else(|| AgentError::Unscripted(query.to_string()))?;
        let behaviour = script
            .with_rules
            .iter()
            .find(|v| {
                v.requires
                    .iter()
                    .all(|needle| rules.iter().any(|r| r.contains(needle.as_str())))
            })
            .map(|v| &v.behaviour)
            .unwrap_or(&script.default);
        Ok(AgentRun {
            trace: behaviour.trace.clone(),
            answer: behaviour.answer.clone(),
            error: behaviour.error.clone(),
        })
    }
}

/// Executes tool calls for the ReAct loop. `Err` carries the tool's error
/// message, which is fed back to the model as an observation.
pub trait ToolExecutor: Send + Sync {
    fn execute(&self, query: &str, call: &ToolCall) -> Result<String, String>;
}

/// Replays observations recorded in gold traces, keyed by query.
#[derive(Debug, Clone, Default)]
pub struct ReplayExecutor {
    calls: HashMap<String, Vec<(ToolCall, String)>>,
}

impl ReplayExecutor {
    pub fn from_cases<'a>(cases: impl IntoIterator<Item = &'a Case>) -> Self {
        let mut calls: HashMap<String, Vec<(ToolCall, String)>> = HashMap::new();
        for case in cases {
            let entry = calls.entry(case.query.clone()).or_default();
            for step in &case.gold_trace {
                if let (Some(c), Some(o)) = (&step.tool_call, &step.observation) {
                    entry.push((c.clone(), o.clone()));
                }
            }
        }
        ReplayExecutor { calls }
    }
}

impl ToolExecutor for ReplayExecutor {
    fn execute(&self, query: &str, call: &ToolCall) -> Result<String, String> {
        let recorded = self.calls.get(query).map(Vec::as_slice).unwrap_or(&[]);
        if let Some((_, obs)) = recorded.iter().find(|(c, _)| c == call) {
            return Ok(obs.clone());
        }
        if recorded.iter().any(|(c, _)| c.name == call.name) {
            Err(format!(
                "no data found for {} with arguments {}",
                call.name, call.arguments
            ))
        } else {
            Err(format!("tool {} returned no result", call.name))
        }
    }
}

const REACT_PREAMBLE: &str =
    "You are a tool-using assistant. Solve the user's question step by step.
At each step reply with either
Thought: <reasoning>
Action: <tool name>
Action Input: <JSON object of arguments>
or, once you know the answer,
Final Answer: <answer>
";

#[derive(Debug, Clone, PartialEq)]
enum ReactReply {
    Act {
        thought: Option<String>,
        call: ToolCall,
    },
    Finish {
        thought: Option<String>,
        answer: String,
    },
    Invalid,
}

fn parse_react(text: &str) -> ReactReply {
    let field = |key: &str| -> Option<String> {
        let start = text.find(key)? + key.len();
        let rest = &text[start..];
        let end = [
            "\nThought:",
            "\nAction:",
            "\nAction Input:",
            "\nFinal Answer:",
            "\nObservation:",
        ]
        .iter()
        .filter_map(|k| rest.find(k))
        .min()
        .unwrap_or(rest.len());
        Some(rest[..end].trim().to_string())
    };
    let thought = field("Thought:");
    if let Some(answer) = field("Final Answer:") {
        return ReactReply::Finish { thought, answer };
    }
    let Some(name) = field("Action:") else {
        return ReactReply::Invalid;
    };
    let arguments = match field("Action Input:") {
        Some(raw) => match crate::gateway::extract_json(&raw) {
            Ok(v) => v,
            Err(_) => return ReactReply::Invalid,
        },
        None => serde_json::json!({}),
    };
    ReactReply::Act {
        thought,
        call: ToolCall::new(name, arguments),
    }
}

/// ReAct-style agent over the model gateway. Tool errors are returned to
/// the model as observations; more than `max_tool_retries` consecutive
/// errors, or `max_steps` steps, abort the run.
pub struct ReactAgent {
    gateway: Arc<Gateway>,
    executor: Arc<dyn ToolExecutor>,
    pub max_steps: usize,
    pub max_tool_retries: usize,
}

impl ReactAgent {
    pub fn new(gateway: Arc<Gateway>, executor: Arc<dyn ToolExecutor>) -> Self {
        ReactAgent {
            gateway,
            executor,
            max_steps: DEFAULT_MAX_STEPS,
            max_tool_retries: DEFAULT_TOOL_RETRIES,
        }
    }

    fn prompt(
        &self,
        query: &str,
        tools: &[ToolSpec],
        rules: &[String],
        transcript: &str,
    ) -> String {
        let tools_json = serde_json::to_string_pretty(tools).expect("tools serialize");
        format!(
            "{}{REACT_PREAMBLE}\nTools:\n{tools_json}\n\nQuestion: {query}\n{transcript}",
            injection_block(rules)
        )
    }
}

impl AgentHandle for ReactAgent {
    fn run(
        &self,
        query: &str,
        tools: &[ToolSpec],
        rules: &[String],
    ) -> Result<AgentRun, AgentError> {
        let mut run = AgentRun::default();
        let mut transcript = String::new();
        let mut consecutive_errors = 0;
        for _ in 0..self.max_steps {
            let reply = self
                .gateway
                .complete("react_step", &self.prompt(query, tools, rules, &transcript))?;
            match parse_react(&reply) {
                ReactReply::Finish { thought, answer } => {
                    run.trace.push(TraceStep {
                        thought,
                        ..TraceStep::default()
                    });
                    run.answer = Some(answer);
                    return Ok(run);
                }
                ReactReply::Invalid => {
                    transcript.push_str(&format!(
                        "{}\nObservation: reply format not recognised\n",
                        reply.trim()
                    ));
                }
                ReactReply::Act { thought, call } => {
                    let result = self.executor.execute(query, &call);
                    let observation = match &result {
                        Ok(o) => o.clone(),
                        Err(e) => format!("Error: {e}"),
                    };
                    transcript.push_str(&format!(
                        "Thought: {}\nAction: {}\nAction Input: {}\nObservation: {observation}\n",
                        thought.as_deref().unwrap_or(""),
                        call.name,
                        call.arguments
                    ));
                    run.trace.push(TraceStep {
                        thought,
                        tool_call: Some(call),
                        observation: Some(observation.clone()),
                    });
                    if result.is_err() {
                        consecutive_errors += 1;
                        if consecutive_errors > self.max_tool_retries {
                            run.error = Some(observation);
                            return Ok(run);
                        }
                    } else {
                        consecutive_errors = 0;
                    }
                }
            }
        }
        run.error = Some(format!("step limit of {} reached", self.max_steps));
        Ok(run)
    }
}
