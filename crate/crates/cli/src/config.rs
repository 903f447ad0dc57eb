//! Pipeline configuration: one TOML file, every field optional.
//!
//! Relative paths in the file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use rulekit_core::consolidation::{ConsolidationParams, EditSchedule};
use rulekit_core::gateway::GatewayConfig;
use rulekit_core::generation::{DEFAULT_MAX_ITERATIONS, DEFAULT_MAX_TOKENS};
use rulekit_core::retrieval::DEFAULT_TOP_K;
use rulekit_core::vocab::{DEFAULT_BATCH_SIZE, DEFAULT_NUM_ORDERINGS};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub gateway: GatewaySection,
    pub agent: AgentSection,
    pub generation: GenerationSection,
    pub vocab: VocabSection,
    pub consolidation: ConsolidationSection,
    pub retrieval: RetrievalSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Labelled cases (JSONL).
    pub dataset: Option<PathBuf>,
    /// Failure cases (JSONL).
    pub failures: Option<PathBuf>,
    /// Natural-language rule pool written by `generate`.
    pub pool: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    /// Symbolic library written by `translate`.
    pub library: Option<PathBuf>,
    /// Library written by `consolidate`.
    pub consolidated: Option<PathBuf>,
    /// Per-rule correction matrix.
    pub oracle: Option<PathBuf>,
    /// Correction cache for the agent oracle.
    pub cache: Option<PathBuf>,
    /// Keyword table for offline query classification.
    pub classifier: Option<PathBuf>,
    /// Directory for reports and logs.
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    #[default]
    Http,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub backend: BackendKind,
    /// Scripted replies for the mock backend.
    pub mock_script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub temperature: Option<f64>,
    pub backoff_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub embedding_model: Option<String>,
    /// JSONL log of every model call.
    pub call_log: Option<PathBuf>,
}

impl GatewaySection {
    /// Environment defaults overlaid with the values set in this section.
    pub fn gateway_config(&self) -> GatewayConfig {
        let mut c = GatewayConfig::from_env();
        if let Some(v) = &self.endpoint {
            c.endpoint = v.clone();
        }
        if let Some(v) = &self.model {
            c.model = v.clone();
        }
        if let Some(v) = &self.api_key_env {
            c.api_key_env = v.clone();
        }
        if let Some(v) = self.timeout_secs {
            c.timeout_secs = v;
        }
        if let Some(v) = self.max_retries {
            c.max_retries = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.backoff_ms {
            c.backoff_ms = v;
        }
        if self.max_in_flight.is_some() {
            c.max_in_flight = self.max_in_flight;
        }
        if self.embedding_model.is_some() {
            c.embedding_model = self.embedding_model.clone();
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Mock,
    #[default]
    React,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub kind: AgentKind,
    pub mock_script: Option<PathBuf>,
    pub max_steps: usize,
    pub max_tool_retries: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            kind: AgentKind::React,
            mock_script: None,
            max_steps: 15,
            max_tool_retries: 2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub max_iterations: usize,
    pub max_tokens: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub batch_size: usize,
    pub num_orderings: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            batch_size: DEFAULT_BATCH_SIZE,
            num_orderings: DEFAULT_NUM_ORDERINGS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    #[default]
    Matrix,
    Agent,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsolidationSection {
    pub alpha: f64,
    /// When set, alpha is chosen from this grid.
    pub alpha_grid: Option<Vec<f64>>,
    pub oracle: OracleKind,
    pub max_passes: Option<usize>,
    pub schedule: EditSchedule,
    /// Ask the model for the category of tools that declare none.
    pub classify_tools: bool,
}

impl Default for ConsolidationSection {
    fn default() -> Self {
        ConsolidationSection {
            alpha: 0.5,
            alpha_grid: None,
            oracle: OracleKind::Matrix,
            max_passes: None,
            schedule: EditSchedule::default(),
            classify_tools: false,
        }
    }
}

impl ConsolidationSection {
    pub fn params(&self, alpha: f64) -> ConsolidationParams {
        ConsolidationParams {
            alpha,
            max_passes: self.max_passes,
            schedule: self.schedule,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScheduleArg {
    Steepest,
    PerRule,
}

impl From<ScheduleArg> for EditSchedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Steepest => EditSchedule::Steepest,
            ScheduleArg::PerRule => EditSchedule::PerRule,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// One dimension per vocabulary token.
    #[default]
    Indicator,
    /// Hashed bag of words.
    Bow,
    /// Embedding endpoint of the gateway.
    Remote,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    /// Keyword table from `paths.classifier`, else token names.
    #[default]
    Keyword,
    Model,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMethod {
    #[default]
    Symbolic,
    /// Rank raw rule text, no scope filter.
    Text,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub top_k: usize,
    pub embedder: EmbedderKind,
    pub classifier: ClassifierKind,
    pub method: RetrievalMethod,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            top_k: DEFAULT_TOP_K,
            embedder: EmbedderKind::Indicator,
            classifier: ClassifierKind::Keyword,
            method: RetrievalMethod::Symbolic,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub workers: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { workers: 4 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.dataset,
            &mut p.failures,
            &mut p.pool,
            &mut p.vocab,
            &mut p.library,
            &mut p.consolidated,
            &mut p.oracle,
            &mut p.cache,
            &mut p.classifier,
            &mut p.reports,
        ] {
            fix(slot);
        }
        fix(&mut self.gateway.mock_script);
        fix(&mut self.gateway.call_log);
        fix(&mut self.agent.mock_script);
    }

    /// Range checks for the numeric parameters.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.generation.max_iterations == 0 {
            bail!("generation.max_iterations must be at least 1");
        }
        if self.generation.max_tokens == 0 {
            bail!("generation.max_tokens must be at least 1");
        }
        if self.vocab.batch_size == 0 || self.vocab.num_orderings == 0 {
            bail!("vocab.batch_size and vocab.num_orderings must be at least 1");
        }
        check_alpha(self.consolidation.alpha)?;
        if let Some(grid) = &self.consolidation.alpha_grid {
            if grid.is_empty() {
                bail!("consolidation.alpha_grid is empty");
            }
            for &a in grid {
                check_alpha(a)?;
            }
        }
        if self.consolidation.max_passes == Some(0) {
            bail!("consolidation.max_passes must be at least 1");
        }
        if self.retrieval.top_k == 0 {
            bail!("retrieval.top_k must be at least 1");
        }
        if self.eval.workers == 0 {
            bail!("eval.workers must be at least 1");
        }
        if self.agent.max_steps == 0 {
            bail!("agent.max_steps must be at least 1");
        }
        Ok(())
    }
}

fn check_alpha(a: f64) -> anyhow::Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        bail!("alpha must be positive and finite, got {a}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 3\n[paths]\nfailures = \"f.jsonl\"\n[consolidation]\nalpha_grid = [0.1, 1.0]\n",
        )
        .unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(
            c.paths.failures.as_deref(),
            Some(dir.path().join("f.jsonl").as_path())
        );
        assert_eq!(c.consolidation.schedule, EditSchedule::Steepest);
        assert_eq!(c.retrieval.top_k, 5);
        assert_eq!(c.vocab.batch_size, 20);
        assert_eq!((c.agent.max_steps, c.agent.max_tool_retries), (15, 2));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |s: &str| {
            let c: PipelineConfig = toml::from_str(s).unwrap();
            c.validate().is_err()
        };
        assert!(bad("[consolidation]\nalpha = 0.0\n"));
        assert!(bad("[consolidation]\nalpha_grid = []\n"));
        assert!(bad("[retrieval]\ntop_k = 0\n"));
        assert!(toml::from_str::<PipelineConfig>("[paths]\nbogus = 1\n").is_err());
    }
}
