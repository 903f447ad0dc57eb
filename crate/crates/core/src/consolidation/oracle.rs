//! Correction oracles: whether injecting a library corrects a failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::AgentHandle;
use crate::case::FailureCase;
use crate::retrieval::{rule_applies, ToolCategoryMap};
use crate::rule::{Rule, RuleId, RuleLibrary, Token};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("oracle failed on {failure_id}: {message}")]
pub struct OracleError {
    pub failure_id: String,
    pub message: String,
}

/// `a_i(H)`: does injecting library `H` correct failure `i`? Must be
/// deterministic per (library hash, failure id).
pub trait CorrectionOracle: Send + Sync {
    fn corrects(&self, library: &RuleLibrary, failure: &FailureCase) -> Result<bool, OracleError>;
}

/// `k_H`: number of failures corrected, evaluated concurrently.
pub fn count_corrected(
    oracle: &dyn CorrectionOracle,
    library: &RuleLibrary,
    failures: &[FailureCase],
) -> Result<usize, OracleError> {
    failures
        .par_iter()
        .map(|f| oracle.corrects(library, f).map(usize::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

fn failure_categories(
    failure: &FailureCase,
    tool_map: &ToolCategoryMap,
) -> (BTreeSet<String>, BTreeSet<Token>) {
    let tools: BTreeSet<String> = failure.tools.iter().map(|t| t.name.clone()).collect();
    let cats = failure
        .tools
        .iter()
        .filter_map(|t| tool_map.get(&t.name).or(t.category.as_ref()).cloned())
        .collect();
    (tools, cats)
}

/// Rules of `library` that pass the scope filter for `failure`.
pub fn applicable_rules<'a>(
    library: &'a RuleLibrary,
    failure: &FailureCase,
    tool_map: &ToolCategoryMap,
) -> Vec<&'a Rule> {
    let (tools, cats) = failure_categories(failure, tool_map);
    library
        .rules()
        .iter()
        .filter(|r| rule_applies(r, &tools, &cats).is_some())
        .collect()
}

/// Per-rule correction bits combined by OR over the rules that survive the
/// scope filter for each failure. Monotone in the library.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixOracle {
    /// Rule id to the ids of the failures that rule corrects on its own.
    pub bits: BTreeMap<RuleId, BTreeSet<String>>,
    #[serde(default)]
    pub tool_categories: ToolCategoryMap,
}

impl MatrixOracle {
    /// `rows[r][i]` is the bit for rule `rule_ids[r]` on failure `failure_ids[i]`.
    pub fn from_bits(rule_ids: &[RuleId], failure_ids: &[String], rows: &[Vec<bool>]) -> Self {
        let bits = rule_ids
            .iter()
            .zip(rows)
            .map(|(id, row)| {
                let set = failure_ids
                    .iter()
                    .zip(row)
                    .filter(|(_, &b)| b)
                    .map(|(f, _)| f.clone())
                    .collect();
                (id.clone(), set)
            })
            .collect();
        MatrixOracle {
            bits,
            tool_categories: ToolCategoryMap::new(),
        }
    }

    pub fn with_tool_categories(mut self, map: ToolCategoryMap) -> Self {
        self.tool_categories = map;
        self
    }

    /// Runs the agent once per (rule, failure) with that rule alone injected.
    pub fn build(pool: &[Rule], failures: &[FailureCase], agent: &dyn AgentHandle) -> Self {
        let bits = pool
            .par_iter()
            .map(|rule| {
                let rules = [rule.nl_text.clone()];
                let set = failures
                    .iter()
                    .filter(|f| {
                        agent
                            .run(&f.query, &f.tools, &rules)
                            .is_ok_and(|run| run.is_correct(&f.gold_answer))
                    })
                    .map(|f| f.id.clone())
                    .collect();
                (rule.id.clone(), set)
            })
            .collect();
        MatrixOracle {
            bits,
            tool_categories: ToolCategoryMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

impl CorrectionOracle for MatrixOracle {
    fn corrects(&self, library: &RuleLibrary, failure: &FailureCase) -> Result<bool, OracleError> {
        Ok(applicable_rules(library, failure, &self.tool_categories)
            .iter()
            .any(|r| {
                self.bits
                    .get(&r.id)
                    .is_some_and(|s| s.contains(&failure.id))
            }))
    }
}

/// Exact oracle: re-runs the agent with every applicable rule injected,
/// in rule-id order.
pub struct AgentOracle<'a> {
    pub agent: &'a dyn AgentHandle,
    pub tool_categories: ToolCategoryMap,
}

impl CorrectionOracle for AgentOracle<'_> {
    fn corrects(&self, library: &RuleLibrary, failure: &FailureCase) -> Result<bool, OracleError> {
        let mut rules = applicable_rules(library, failure, &self.tool_categories);
        rules.sort_by(|a, b| a.id.cmp(&b.id));
        let texts: Vec<String> = rules.iter().map(|r| r.nl_text.clone()).collect();
        self.agent
            .run(&failure.query, &failure.tools, &texts)
            .map(|run| run.is_correct(&failure.gold_answer))
            .map_err(|e| OracleError {
                failure_id: failure.id.clone(),
                message: e.to_string(),
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    library_hash: String,
    failure_id: String,
    corrected: bool,
}

/// Memoizes an oracle by (library hash, failure id), optionally persisted
/// to a JSON file shared between processes under an advisory lock.
pub struct CachedOracle<O> {
    inner: O,
    cache: RwLock<HashMap<(String, String), bool>>,
    path: Option<PathBuf>,
}

impl<O: CorrectionOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        CachedOracle {
            inner,
            cache: RwLock::new(HashMap::new()),
            path: None,
        }
    }

    /// Loads any existing entries from `path`; [`CachedOracle::save`] writes back to it.
    pub fn with_file(inner: O, path: &Path) -> std::io::Result<Self> {
        let mut cached = CachedOracle::new(inner);
        cached.path = Some(path.to_path_buf());
        if path.exists() {
            let file = File::open(path)?;
            file.lock_shared()?;
            let entries = read_entries(&file)?;
            file.unlock()?;
            cached.cache.write().unwrap().extend(entries);
        }
        Ok(cached)
    }

    pub fn len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Merges the in-memory cache with the file's current contents and
    /// rewrites it, holding an exclusive lock throughout.
    pub fn save(&self) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        file.lock()?;
        let mut merged = read_entries(&file)?;
        merged.extend(
            self.cache
                .read()
                .unwrap()
                .iter()
                .map(|(k, v)| (k.clone(), *v)),
        );
        let mut entries: Vec<CacheEntry> = merged
            .into_iter()
            .map(|((library_hash, failure_id), corrected)| CacheEntry {
                library_hash,
                failure_id,
                corrected,
            })
            .collect();
        entries.sort_by(|a, b| {
            (&a.library_hash, &a.failure_id).cmp(&(&b.library_hash, &b.failure_id))
        });
        let text = serde_json::to_string_pretty(&entries).expect("entries serialize") + "\n";
        file.set_len(0)?;
        file.seek(SeekFrom::Start(0))?;
        file.write_all(text.as_bytes())?;
        file.unlock()
    }
}

fn read_entries(mut file: &File) -> std::io::Result<HashMap<(String, String), bool>> {
    let mut text = String::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Ok(HashMap::new());
    }
    let entries: Vec<CacheEntry> = serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok(entries
        .into_iter()
        .map(|e| ((e.library_hash, e.failure_id), e.corrected))
        .collect())
}

impl<O: CorrectionOracle> CorrectionOracle for CachedOracle<O> {
    fn corrects(&self, library: &RuleLibrary, failure: &FailureCase) -> Result<bool, OracleError> {
        let key = (library.hash().to_string(), failure.id.clone());
        if let Some(&hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit);
        }
        let value = self.inner.corrects(library, failure)?;
        self.cache.write().unwrap().insert(key, value);
        Ok(value)
    }
}
