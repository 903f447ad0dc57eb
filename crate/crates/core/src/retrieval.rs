//! Inference-time rule selection.
//!
//! A query is symbolized over the vocabulary, the library is reduced by a
//! scope filter, and survivors are ranked by cosine similarity between
//! token-multiset embeddings. The natural-language baseline ranks raw rule
//! text against the query instead.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::case::ToolSpec;
use crate::gateway::{
    extract_json, Gateway, GatewayConfig, GatewayError, HttpBackend, PromptTemplate, TemplateName,
};
use crate::rule::{ErrorType, Field, Rule, RuleId, RuleLibrary, Token, ToolScope, Vocabulary};

pub const DEFAULT_TOP_K: usize = 5;

/// Tool name to tool-category token.
pub type ToolCategoryMap = BTreeMap<String, Token>;

/// Declared categories of the given tools.
pub fn declared_categories<'a>(tools: impl IntoIterator<Item = &'a ToolSpec>) -> ToolCategoryMap {
    tools
        .into_iter()
        .filter_map(|t| t.category.clone().map(|c| (t.name.clone(), c)))
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("unknown {field} token {token}")]
    UnknownToken { field: Field, token: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("embedding failed: {0}")]
    Embedding(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryState {
    pub query_text: String,
    pub available_tools: BTreeSet<String>,
    pub tool_categories: BTreeSet<Token>,
    pub domain: Option<Token>,
    pub qualifiers: Vec<Token>,
}

impl QueryState {
    /// The symbolic query representation as a field-qualified token multiset.
    pub fn symbolic_tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(d) = &self.domain {
            out.push(keyed(Field::Domain, d));
        }
        out.extend(self.qualifiers.iter().map(|q| keyed(Field::Qualifier, q)));
        out.extend(
            self.tool_categories
                .iter()
                .map(|c| keyed(Field::ToolCategory, c)),
        );
        out
    }
}

fn keyed(field: Field, token: &Token) -> String {
    format!("{}:{}", field.as_str(), token.as_str())
}

/// Field-qualified token multiset of a rule: its symbolic form plus a
/// category scope, if any.
pub fn rule_tokens(rule: &Rule) -> Vec<String> {
    let mut out: Vec<String> = rule
        .symbolic
        .iter()
        .flat_map(|f| f.tokens())
        .map(|(field, t)| keyed(field, t))
        .collect();
    if let ToolScope::Category(c) = &rule.tool_scope {
        out.push(keyed(Field::ToolCategory, c));
    }
    out
}

/// Assigns domain and qualifier tokens to a raw query.
pub trait QueryClassifier: Send + Sync {
    fn classify(
        &self,
        query: &str,
        tools: &[ToolSpec],
        vocab: &Vocabulary,
    ) -> Result<(Option<Token>, Vec<Token>), RetrievalError>;
}

/// Offline classifier: a lowercase keyword table mapping to tokens. The
/// first matching domain keyword (in table order) sets the domain; every
/// matching qualifier keyword adds its qualifier.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordClassifier {
    pub domain: Vec<(String, Token)>,
    pub qualifier: Vec<(String, Token)>,
}

impl KeywordClassifier {
    /// Table whose keywords are the vocabulary's own tokens spelled as
    /// lowercase phrases (`MULTI_HOP` matches "multi hop").
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        let phrases = |f: Field| {
            vocab
                .tokens(f)
                .iter()
                .map(|t| (t.as_str().to_lowercase().replace('_', " "), t.clone()))
                .collect()
        };
        KeywordClassifier {
            domain: phrases(Field::Domain),
            qualifier: phrases(Field::Qualifier),
        }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

impl QueryClassifier for KeywordClassifier {
    fn classify(
        &self,
        query: &str,
        _tools: &[ToolSpec],
        _vocab: &Vocabulary,
    ) -> Result<(Option<Token>, Vec<Token>), RetrievalError> {
        let q = query.to_lowercase().replace(['_', '-'], " ");
        let domain = self
            .domain
            .iter()
            .find(|(k, _)| q.contains(k.as_str()))
            .map(|(_, t)| t.clone());
        let qualifiers: BTreeSet<Token> = self
            .qualifier
            .iter()
            .filter(|(k, _)| q.contains(k.as_str()))
            .map(|(_, t)| t.clone())
            .collect();
        Ok((domain, qualifiers.into_iter().collect()))
    }
}

/// Live classifier reusing the rule-classification prompt on the query.
pub struct GatewayClassifier<'a> {
    pub gateway: &'a Gateway,
}

impl QueryClassifier for GatewayClassifier<'_> {
    fn classify(
        &self,
        query: &str,
        tools: &[ToolSpec],
        vocab: &Vocabulary,
    ) -> Result<(Option<Token>, Vec<Token>), RetrievalError> {
        let list = |f: Field| {
            vocab
                .tokens(f)
                .iter()
                .map(Token::as_str)
                .collect::<Vec<_>>()
                .join(", ")
        };
        let object = json!({
            "_id": 0,
            "query": query,
            "tools": tools.iter().map(|t| &t.name).collect::<Vec<_>>(),
        });
        let prompt =
            PromptTemplate::get(TemplateName::RuleClassification).render(&BTreeMap::from([
                ("domain_list", list(Field::Domain)),
                ("qualifier_list", list(Field::Qualifier)),
                ("action_list", list(Field::Action)),
                ("strength_list", list(Field::Strength)),
                ("tool_category_list", list(Field::ToolCategory)),
                (
                    "rule_object",
                    serde_json::to_string_pretty(&object).expect("serializes"),
                ),
            ]))?;
        let text = self.gateway.complete("query_classification", &prompt)?;
        let v = extract_json(&text)?;
        let token = |raw: &serde_json::Value| -> Result<Token, RetrievalError> {
            raw.as_str()
                .and_then(|s| Token::normalize(s).ok())
                .ok_or_else(|| {
                    GatewayError::malformed(format!("bad token {raw}"), text.clone()).into()
                })
        };
        let domain = match v.get("domain") {
            None | Some(serde_json::Value::Null) => None,
            Some(d) => Some(token(d)?),
        };
        let qualifiers = match v.get("qualifier") {
            Some(serde_json::Value::Array(items)) => {
                items.iter().map(token).collect::<Result<Vec<_>, _>>()?
            }
            None | Some(serde_json::Value::Null) => Vec::new(),
            Some(q) => vec![token(q)?],
        };
        Ok((domain, qualifiers))
    }
}

/// Builds the query state. Categories come from `tool_map`, falling back
/// to each tool's declared category.
pub fn symbolize_query(
    query: &str,
    tools: &[ToolSpec],
    vocab: &Vocabulary,
    classifier: &dyn QueryClassifier,
    tool_map: &ToolCategoryMap,
) -> Result<QueryState, RetrievalError> {
    let (domain, mut qualifiers) = classifier.classify(query, tools, vocab)?;
    qualifiers.sort();
    qualifiers.dedup();
    let check = |field: Field, t: &Token| {
        if vocab.contains(field, t) {
            Ok(())
        } else {
            Err(RetrievalError::UnknownToken {
                field,
                token: t.as_str().to_string(),
            })
        }
    };
    if let Some(d) = &domain {
        check(Field::Domain, d)?;
    }
    for q in &qualifiers {
        check(Field::Qualifier, q)?;
    }
    let tool_categories = tools
        .iter()
        .filter_map(|t| tool_map.get(&t.name).or(t.category.as_ref()).cloned())
        .collect();
    Ok(QueryState {
        query_text: query.to_string(),
        available_tools: tools.iter().map(|t| t.name.clone()).collect(),
        tool_categories,
        domain,
        qualifiers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Decomposition,
    ToolMatch,
    CategoryMatch,
    CategoryClauseMatch,
    UnscopedDefault,
}

/// Why `rule` applies under the given tools and categories, or `None` when
/// the scope filter drops it.
pub fn rule_applies(
    rule: &Rule,
    tools: &BTreeSet<String>,
    categories: &BTreeSet<Token>,
) -> Option<FilterReason> {
    if rule.error_type == ErrorType::Decomposition {
        return Some(FilterReason::Decomposition);
    }
    match &rule.tool_scope {
        ToolScope::Tools(names) => names
            .iter()
            .any(|n| tools.contains(n))
            .then_some(FilterReason::ToolMatch),
        ToolScope::Category(c) => categories
            .contains(c)
            .then_some(FilterReason::CategoryMatch),
        ToolScope::Unscoped => {
            let clauses: Vec<&Token> = rule
                .symbolic
                .iter()
                .flat_map(|f| f.tool_categories())
                .collect();
            if clauses.is_empty() {
                Some(FilterReason::UnscopedDefault)
            } else {
                clauses
                    .iter()
                    .any(|c| categories.contains(*c))
                    .then_some(FilterReason::CategoryClauseMatch)
            }
        }
    }
}

pub fn coarse_filter<'a>(
    library: &'a RuleLibrary,
    state: &QueryState,
) -> Vec<(&'a Rule, FilterReason)> {
    library
        .rules()
        .iter()
        .filter_map(|r| {
            rule_applies(r, &state.available_tools, &state.tool_categories).map(|why| (r, why))
        })
        .collect()
}

/// Maps a multiset of items (symbolic tokens, or words for raw text) to a
/// fixed-dimension vector. Must be deterministic.
pub trait Embedder: Send + Sync {
    fn embed(&self, items: &[String]) -> Result<Vec<f64>, RetrievalError>;
}

/// Count vector over the vocabulary's field-qualified token universe.
/// Items outside the universe are ignored.
#[derive(Debug, Clone)]
pub struct VocabIndicatorEmbedder {
    index: BTreeMap<String, usize>,
}

impl VocabIndicatorEmbedder {
    pub fn new(vocab: &Vocabulary) -> Self {
        let index = Field::ALL
            .iter()
            .flat_map(|&f| vocab.tokens(f).iter().map(move |t| keyed(f, t)))
            .enumerate()
            .map(|(i, k)| (k, i))
            .collect();
        VocabIndicatorEmbedder { index }
    }

    pub fn dimension(&self) -> usize {
        self.index.len()
    }
}

impl Embedder for VocabIndicatorEmbedder {
    fn embed(&self, items: &[String]) -> Result<Vec<f64>, RetrievalError> {
        let mut v = vec![0.0; self.index.len()];
        for item in items {
            if let Some(&i) = self.index.get(item) {
                v[i] += 1.0;
            }
        }
        Ok(v)
    }
}

/// Bag-of-words vector with FNV-1a feature hashing.
#[derive(Debug, Clone, Copy)]
pub struct HashedBowEmbedder {
    pub dimension: usize,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        HashedBowEmbedder { dimension: 1024 }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl Embedder for HashedBowEmbedder {
    fn embed(&self, items: &[String]) -> Result<Vec<f64>, RetrievalError> {
        let mut v = vec![0.0; self.dimension.max(1)];
        let len = v.len() as u64;
        for item in items {
            v[(fnv1a(item) % len) as usize] += 1.0;
        }
        Ok(v)
    }
}

/// Remote embedding model; items are joined with spaces into one input.
pub struct RemoteEmbedder {
    backend: HttpBackend,
    config: GatewayConfig,
}

impl RemoteEmbedder {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        Ok(RemoteEmbedder {
            backend: HttpBackend::new(&config)?,
            config,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, items: &[String]) -> Result<Vec<f64>, RetrievalError> {
        let vs = self
            .backend
            .embed(&self.config, &[items.join(" ")])
            .map_err(|e| RetrievalError::Embedding(format!("{e:?}")))?;
        vs.into_iter()
            .next()
            .ok_or_else(|| RetrievalError::Embedding("empty embedding response".into()))
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Lowercase alphanumeric words of a text.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedRule {
    pub rule_id: RuleId,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_reason: Option<FilterReason>,
    pub nl_text: String,
}

fn sort_ranked(ranked: &mut [RankedRule]) {
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.rule_id.cmp(&b.rule_id))
    });
}

/// Top-`k` survivors by cosine similarity to the query tokens, ties broken
/// by ascending rule id.
pub fn rank_and_select(
    survivors: &[(&Rule, FilterReason)],
    state: &QueryState,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<RankedRule>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let q = embedder.embed(&state.symbolic_tokens())?;
    let mut ranked = survivors
        .iter()
        .map(|(rule, why)| {
            Ok(RankedRule {
                rule_id: rule.id.clone(),
                score: cosine(&embedder.embed(&rule_tokens(rule))?, &q),
                filter_reason: Some(*why),
                nl_text: rule.nl_text.clone(),
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    sort_ranked(&mut ranked);
    ranked.truncate(k);
    Ok(ranked)
}

/// Scope filter followed by ranking.
pub fn retrieve(
    library: &RuleLibrary,
    state: &QueryState,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<RankedRule>, RetrievalError> {
    rank_and_select(&coarse_filter(library, state), state, embedder, k)
}

/// Baseline: ranks raw rule text against the query text and tool names,
/// without filtering.
pub fn nl_retrieve(
    library: &RuleLibrary,
    query: &str,
    tools: &[ToolSpec],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<RankedRule>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let mut items = words(query);
    for t in tools {
        items.extend(words(&t.name));
    }
    let q = embedder.embed(&items)?;
    let mut ranked = library
        .rules()
        .iter()
        .map(|rule| {
            Ok(RankedRule {
                rule_id: rule.id.clone(),
                score: cosine(&embedder.embed(&words(&rule.nl_text))?, &q),
                filter_reason: None,
                nl_text: rule.nl_text.clone(),
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    sort_ranked(&mut ranked);
    ranked.truncate(k);
    Ok(ranked)
}
