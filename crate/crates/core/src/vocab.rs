//! Vocabulary induction over batches of natural-language rules, and
//! classification of individual rules into symbolic forms.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::case::ToolSpec;
use crate::gateway::{extract_json, Gateway, GatewayError, PromptTemplate, TemplateName};
use crate::rule::{
    validate_rule, ConditionClause, Connective, Field, Rule, RuleId, RuleLibrary, SymbolicForm,
    Token, Vocabulary,
};

pub const DEFAULT_BATCH_SIZE: usize = 20;
pub const DEFAULT_NUM_ORDERINGS: usize = 3;

/// Extra attempts when a model reply carries no usable JSON.
const MALFORMED_RETRIES: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("no rules to induce a vocabulary from")]
    EmptyRules,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("ordering {ordering_seed}, batch {batch}: {source}")]
    Batch {
        ordering_seed: u64,
        batch: usize,
        source: GatewayError,
    },
    #[error("induced vocabulary has no {0} tokens")]
    EmptyField(Field),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("model chose unknown {field} token {token} after a corrective re-prompt")]
    UnknownToken {
        field: Field,
        token: String,
        raw_model_output: String,
    },
    #[error("rule text is empty")]
    EmptyText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InductionParams {
    pub batch_size: usize,
    pub num_orderings: usize,
    pub seed: u64,
}

impl Default for InductionParams {
    fn default() -> Self {
        InductionParams {
            batch_size: DEFAULT_BATCH_SIZE,
            num_orderings: DEFAULT_NUM_ORDERINGS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabCandidate {
    pub vocabulary: Vocabulary,
    pub ordering_seed: u64,
}

impl VocabCandidate {
    pub fn total_size(&self) -> usize {
        self.vocabulary.total_size()
    }
}

#[derive(Debug, Clone, Serialize)]
struct CandidateSummary<'a> {
    ordering_seed: u64,
    total_size: usize,
    version: &'a str,
    selected: bool,
}

#[derive(Debug, Clone)]
pub struct Induction {
    pub candidates: Vec<VocabCandidate>,
    pub selected: usize,
}

impl Induction {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.candidates[self.selected].vocabulary
    }

    pub fn into_vocabulary(mut self) -> Vocabulary {
        self.candidates.swap_remove(self.selected).vocabulary
    }

    /// One JSON line per candidate, in ordering order.
    pub fn candidate_log(&self) -> String {
        self.candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let s = CandidateSummary {
                    ordering_seed: c.ordering_seed,
                    total_size: c.total_size(),
                    version: &c.vocabulary.version,
                    selected: i == self.selected,
                };
                serde_json::to_string(&s).expect("summary serializes") + "\n"
            })
            .collect()
    }
}

/// Index of the smallest candidate by total size, ties to the lowest seed.
pub fn select_candidate(candidates: &[VocabCandidate]) -> Option<usize> {
    (0..candidates.len()).min_by_key(|&i| (candidates[i].total_size(), candidates[i].ordering_seed))
}

fn bullets(rules: &[&Rule]) -> String {
    rules
        .iter()
        .map(|r| format!("- {}", r.nl_text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn token_list(tokens: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let v: Vec<String> = tokens.into_iter().map(|t| t.as_ref().to_string()).collect();
    v.join(", ")
}

fn parse_token(raw: &Value, text: &str) -> Result<Token, GatewayError> {
    let s = raw.as_str().ok_or_else(|| {
        GatewayError::malformed(format!("expected a token string, got {raw}"), text)
    })?;
    Token::normalize(s).map_err(|e| GatewayError::malformed(e.to_string(), text))
}

/// Accepts either a single string or an array of strings; null or an empty
/// string means none.
fn parse_token_list(raw: Option<&Value>, text: &str) -> Result<Vec<Token>, GatewayError> {
    match raw {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(Vec::new()),
        Some(Value::Array(items)) => items.iter().map(|v| parse_token(v, text)).collect(),
        Some(v) => Ok(vec![parse_token(v, text)?]),
    }
}

fn parse_vocab_reply(text: &str) -> Result<BTreeMap<Field, Vec<Token>>, GatewayError> {
    let v = extract_json(text)?;
    let mut out = BTreeMap::new();
    let mut any = false;
    for field in Field::ALL {
        let raw = v.get(field.as_str());
        any |= raw.is_some();
        out.insert(field, parse_token_list(raw, text)?);
    }
    if !any {
        return Err(GatewayError::malformed(
            "reply has none of the vocabulary fields",
            text,
        ));
    }
    Ok(out)
}

fn vocab_update_prompt(current: &Vocabulary, batch: &[&Rule]) -> Result<String, GatewayError> {
    let list = |f: Field| {
        let toks = current.tokens(f);
        if toks.is_empty() {
            "None yet".to_string()
        } else {
            token_list(toks)
        }
    };
    PromptTemplate::get(TemplateName::VocabUpdate).render(&BTreeMap::from([
        ("current_domains", list(Field::Domain)),
        ("current_qualifiers", list(Field::Qualifier)),
        ("current_actions", list(Field::Action)),
        ("current_strengths", list(Field::Strength)),
        ("current_tool_categories", list(Field::ToolCategory)),
        ("rule_bullets", bullets(batch)),
    ]))
}

fn induce_one(
    rules: &[Rule],
    batch_size: usize,
    ordering_seed: u64,
    gateway: &Gateway,
) -> Result<VocabCandidate, VocabError> {
    let mut order: Vec<&Rule> = rules.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(ordering_seed));
    let mut vocab = Vocabulary::new("");
    for (batch, chunk) in order.chunks(batch_size).enumerate() {
        let wrap = |source| VocabError::Batch {
            ordering_seed,
            batch,
            source,
        };
        let (template, prompt) = if batch == 0 {
            let p = PromptTemplate::get(TemplateName::VocabCreate)
                .render(&BTreeMap::from([("rule_bullets", bullets(chunk))]))
                .map_err(wrap)?;
            (TemplateName::VocabCreate, p)
        } else {
            (
                TemplateName::VocabUpdate,
                vocab_update_prompt(&vocab, chunk).map_err(wrap)?,
            )
        };
        let (fields, _) = gateway
            .complete_json(
                template.as_str(),
                &prompt,
                MALFORMED_RETRIES,
                parse_vocab_reply,
            )
            .map_err(wrap)?;
        // Updates are merged rather than replaced so that a reply omitting
        // an existing token cannot shrink the vocabulary mid-chain.
        for (field, tokens) in fields {
            for t in tokens {
                vocab.insert(field, t);
            }
        }
    }
    vocab.ensure_required_strengths();
    if let Some(&empty) = Field::ALL.iter().find(|&&f| vocab.tokens(f).is_empty()) {
        return Err(VocabError::EmptyField(empty));
    }
    vocab.version = format!("v-{}", &vocab.content_digest()[..12]);
    Ok(VocabCandidate {
        vocabulary: vocab,
        ordering_seed,
    })
}

/// Runs the create-then-update prompt chain over `num_orderings` seeded
/// permutations of `rules` (seeds `seed`, `seed + 1`, ...) and selects the
/// most compact resulting vocabulary.
pub fn induce_vocabulary(
    rules: &[Rule],
    params: InductionParams,
    gateway: &Gateway,
) -> Result<Induction, VocabError> {
    if rules.is_empty() {
        return Err(VocabError::EmptyRules);
    }
    if params.batch_size == 0 || params.num_orderings == 0 {
        return Err(VocabError::InvalidParam(
            "batch_size and num_orderings must be at least 1".into(),
        ));
    }
    let candidates = (0..params.num_orderings as u64)
        .into_par_iter()
        .map(|i| {
            induce_one(
                rules,
                params.batch_size,
                params.seed.wrapping_add(i),
                gateway,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let selected = select_candidate(&candidates).expect("at least one ordering");
    Ok(Induction {
        candidates,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationResult {
    pub rule_id: RuleId,
    pub symbolic: SymbolicForm,
    pub raw_model_output: String,
}

fn classification_prompt(vocab: &Vocabulary, object: &Value) -> Result<String, GatewayError> {
    let list = |f: Field| token_list(vocab.tokens(f));
    PromptTemplate::get(TemplateName::RuleClassification).render(&BTreeMap::from([
        ("domain_list", list(Field::Domain)),
        ("qualifier_list", list(Field::Qualifier)),
        ("action_list", list(Field::Action)),
        ("strength_list", list(Field::Strength)),
        ("tool_category_list", list(Field::ToolCategory)),
        (
            "rule_object",
            serde_json::to_string_pretty(object).expect("rule object serializes"),
        ),
    ]))
}

fn rule_object(rule: &Rule) -> Value {
    let tools: Vec<String> = match &rule.tool_scope {
        crate::rule::ToolScope::Tools(t) => t.clone(),
        _ => Vec::new(),
    };
    json!({
        "_id": rule.id.as_str(),
        "rule": rule.nl_text,
        "error_type": rule.error_type.code(),
        "tools": tools,
    })
}

/// Builds a symbolic form from a classification reply. Domain and
/// qualifier clauses are joined with `and`; a tool-category clause is an
/// alternative trigger and joins with `or`.
fn form_from_reply(text: &str) -> Result<SymbolicForm, GatewayError> {
    let v = extract_json(text)?;
    let domain = parse_token_list(v.get("domain"), text)?;
    let qualifiers = parse_token_list(v.get("qualifier"), text)?;
    let actions = parse_token_list(v.get("action"), text)?;
    let strength = parse_token_list(v.get("strength"), text)?;
    let categories = parse_token_list(v.get("tool_category"), text)?;
    if domain.len() > 1 || strength.len() != 1 || categories.len() > 1 {
        return Err(GatewayError::malformed(
            "domain, strength and tool_category take a single token",
            text,
        ));
    }
    let mut clauses = Vec::new();
    let mut connectives = Vec::new();
    if let Some(d) = domain.into_iter().next() {
        clauses.push(ConditionClause::DomainIs(d));
    }
    if !qualifiers.is_empty() {
        if !clauses.is_empty() {
            connectives.push(Connective::And);
        }
        clauses.push(ConditionClause::QualifierAnyOf(qualifiers));
    }
    if let Some(c) = categories.into_iter().next() {
        if !clauses.is_empty() {
            connectives.push(Connective::Or);
        }
        clauses.push(ConditionClause::ToolCategoryIs(c));
    }
    SymbolicForm::new(
        clauses,
        connectives,
        actions,
        strength.into_iter().next().unwrap(),
    )
    .map_err(|e| GatewayError::malformed(e.to_string(), text))
}

fn first_unknown(form: &SymbolicForm, vocab: &Vocabulary) -> Option<(Field, Token)> {
    form.tokens()
        .into_iter()
        .find(|(f, t)| !vocab.contains(*f, t))
        .map(|(f, t)| (f, t.clone()))
}

/// Classifies `rule` into a symbolic form over the frozen `vocab`. A reply
/// with out-of-vocabulary tokens gets one corrective re-prompt.
pub fn classify_rule(
    rule: &Rule,
    vocab: &Vocabulary,
    gateway: &Gateway,
) -> Result<ClassificationResult, VocabError> {
    if rule.nl_text.trim().is_empty() {
        return Err(VocabError::EmptyText);
    }
    let prompt = classification_prompt(vocab, &rule_object(rule))?;
    let label = TemplateName::RuleClassification.as_str();
    let (form, raw) = gateway.complete_json(label, &prompt, MALFORMED_RETRIES, form_from_reply)?;
    let Some((field, token)) = first_unknown(&form, vocab) else {
        return Ok(ClassificationResult {
            rule_id: rule.id.clone(),
            symbolic: form,
            raw_model_output: raw,
        });
    };
    let corrective = format!(
        "{prompt}\n\nYour previous answer used {field}={token}, which is not in the vocabulary. \
         Choose only from the given vocabulary options."
    );
    let (form, raw) =
        gateway.complete_json(label, &corrective, MALFORMED_RETRIES, form_from_reply)?;
    match first_unknown(&form, vocab) {
        None => Ok(ClassificationResult {
            rule_id: rule.id.clone(),
            symbolic: form,
            raw_model_output: raw,
        }),
        Some((field, token)) => Err(VocabError::UnknownToken {
            field,
            token: token.as_str().to_string(),
            raw_model_output: raw,
        }),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TranslationFailure {
    pub rule_id: String,
    pub reason: String,
}

/// Classifies every rule concurrently. Rules that fail classification or
/// validation are left out of the library and reported.
pub fn translate_library(
    rules: &[Rule],
    vocab: &Vocabulary,
    gateway: &Gateway,
) -> (RuleLibrary, Vec<TranslationFailure>) {
    let outcomes: Vec<Result<Rule, TranslationFailure>> = rules
        .par_iter()
        .map(|rule| {
            let fail = |reason: String| TranslationFailure {
                rule_id: rule.id.to_string(),
                reason,
            };
            let result = classify_rule(rule, vocab, gateway).map_err(|e| fail(e.to_string()))?;
            let translated = rule.clone().with_symbolic(result.symbolic);
            let report = validate_rule(&translated, vocab);
            if !report.is_valid() {
                return Err(fail(report.messages().join("; ")));
            }
            Ok(translated)
        })
        .collect();
    let mut library = RuleLibrary::new(vocab.version.clone());
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(rule) => {
                if let Err(e) = library.insert(rule) {
                    log::warn!("skipping rule: {e}");
                }
            }
            Err(f) => failures.push(f),
        }
    }
    (library, failures)
}

/// Tool-category token for a tool: its declared category when present in
/// the vocabulary, otherwise the category chosen by classifying the tool's
/// description (when a gateway is given).
pub fn tool_category(
    tool: &ToolSpec,
    vocab: &Vocabulary,
    gateway: Option<&Gateway>,
) -> Result<Option<Token>, VocabError> {
    if let Some(c) = &tool.category {
        if vocab.contains(Field::ToolCategory, c) {
            return Ok(Some(c.clone()));
        }
    }
    let Some(gateway) = gateway else {
        return Ok(None);
    };
    let object = json!({
        "_id": tool.name,
        "tool": tool.name,
        "description": tool.description,
        "parameters": tool.parameters,
    });
    let prompt = classification_prompt(vocab, &object)?;
    let text = gateway.complete(TemplateName::RuleClassification.as_str(), &prompt)?;
    let v = extract_json(&text)?;
    let category = parse_token_list(v.get("tool_category"), &text)?
        .into_iter()
        .next();
    Ok(category.filter(|c| vocab.contains(Field::ToolCategory, c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendError, GatewayConfig, MockEntry, MockScript};
    use crate::rule::{ErrorType, ToolScope};
    use std::sync::Arc;

    fn rule(text: &str) -> Rule {
        Rule::new(
            text,
            ErrorType::Decomposition,
            ToolScope::Unscoped,
            ["f1".to_string()],
        )
        .unwrap()
    }

    fn vocab_json(domains: &[&str]) -> String {
        json!({
            "domain": domains,
            "qualifier": ["MULTI_STEP"],
            "action": ["DECOMPOSE_QUERY"],
            "strength": ["MANDATORY", "RECOMMENDED", "OPTIONAL"],
            "tool_category": ["GENEALOGY_QUERY"],
        })
        .to_string()
    }

    #[test]
    fn candidate_selection_is_min_size_then_seed() {
        let cand = |seed, n: usize| {
            let mut v = Vocabulary::new("x");
            for i in 0..n {
                v.insert(Field::Domain, Token::new(format!("D{i}")).unwrap());
            }
            VocabCandidate {
                vocabulary: v,
                ordering_seed: seed,
            }
        };
        let cs = vec![cand(0, 12), cand(1, 10), cand(2, 10)];
        assert_eq!(select_candidate(&cs), Some(1));
        let mut rev = cs.clone();
        rev.reverse();
        assert_eq!(rev[select_candidate(&rev).unwrap()].ordering_seed, 1);
        assert_eq!(select_candidate(&[]), None);
    }

    /// Replies depend on which rule lands first in the ordering, so
    /// different seeds produce differently sized vocabularies.
    fn order_sensitive_gateway(rules: &[Rule]) -> Gateway {
        let first = rules[0].nl_text.clone();
        let backend = move |prompt: &str| -> Result<String, BackendError> {
            let bullets_start = prompt.find("- ").unwrap_or(0);
            let leads_with_first = prompt[bullets_start..].starts_with(&format!("- {first}"));
            Ok(if leads_with_first {
                vocab_json(&["A", "B", "C"])
            } else {
                vocab_json(&["A"])
            })
        };
        Gateway::new(Arc::new(backend), GatewayConfig::default()).unwrap()
    }

    #[test]
    fn induction_picks_most_compact_candidate() {
        let rules: Vec<Rule> = (0..4)
            .map(|i| rule(&format!("If case {i}, then act.")))
            .collect();
        let gw = order_sensitive_gateway(&rules);
        let params = InductionParams {
            batch_size: 10,
            num_orderings: 6,
            seed: 0,
        };
        let ind = induce_vocabulary(&rules, params, &gw).unwrap();
        assert_eq!(ind.candidates.len(), 6);
        let min = ind.candidates.iter().map(|c| c.total_size()).min().unwrap();
        assert_eq!(ind.vocabulary().total_size(), min);
        let ties: Vec<u64> = ind
            .candidates
            .iter()
            .filter(|c| c.total_size() == min)
            .map(|c| c.ordering_seed)
            .collect();
        assert_eq!(
            ind.candidates[ind.selected].ordering_seed,
            *ties.iter().min().unwrap()
        );
        assert_eq!(ind.candidate_log().lines().count(), 6);
    }

    #[test]
    fn single_ordering_and_preconditions() {
        let rules = vec![rule("If a, then b.")];
        let gw = Gateway::mock(MockScript {
            entries: vec![],
            default: Some(vocab_json(&["A", "B", "C", "D"])),
        });
        let one = InductionParams {
            num_orderings: 1,
            ..InductionParams::default()
        };
        let ind = induce_vocabulary(&rules, one, &gw).unwrap();
        assert_eq!(ind.vocabulary().tokens(Field::Domain).len(), 4);
        assert!(ind.vocabulary().version.starts_with("v-"));
        assert!(matches!(
            induce_vocabulary(&[], one, &gw),
            Err(VocabError::EmptyRules)
        ));
    }

    #[test]
    fn batches_chain_create_then_update() {
        let rules: Vec<Rule> = (0..5).map(|i| rule(&format!("If r{i}, then s."))).collect();
        let script = MockScript::new()
            .entry(MockEntry::containing(
                ["CREATE the initial vocabulary"],
                vocab_json(&["A"]),
            ))
            .entry(MockEntry::containing(
                ["DOMAIN: A\n"],
                vocab_json(&["A", "B"]),
            ))
            .entry(MockEntry::containing(
                ["DOMAIN: A, B\n"],
                vocab_json(&["A", "B", "C"]),
            ));
        let gw = Gateway::mock(script);
        let params = InductionParams {
            batch_size: 2,
            num_orderings: 1,
            seed: 7,
        };
        let v = induce_vocabulary(&rules, params, &gw)
            .unwrap()
            .into_vocabulary();
        assert_eq!(v.tokens(Field::Domain).len(), 3);
        let log = gw.call_log();
        assert_eq!(log.len(), 3);
        assert_eq!(log[0].template, "vocab_create");
        assert_eq!(log[2].template, "vocab_update");
    }

    #[test]
    fn malformed_vocab_reply_reports_batch() {
        let gw = Gateway::mock(MockScript {
            entries: vec![],
            default: Some("sorry".into()),
        });
        let err = induce_vocabulary(&[rule("If a, then b.")], InductionParams::default(), &gw)
            .unwrap_err();
        assert!(matches!(
            err,
            VocabError::Batch {
                batch: 0,
                source: GatewayError::MalformedModelOutput { .. },
                ..
            }
        ));
    }

    fn case_study_vocab() -> Vocabulary {
        let mut v = Vocabulary::new("test");
        for (f, t) in [
            (Field::Domain, "FAMILIAL_RELATIONSHIP"),
            (Field::Action, "DECOMPOSE_QUERY"),
            (Field::Action, "RESOLVE_INTERMEDIATE_ENTITY"),
            (Field::Action, "SEQUENCE_SUBTASKS"),
            (Field::ToolCategory, "GENEALOGY_QUERY"),
        ] {
            v.insert(f, Token::new(t).unwrap());
        }
        v.ensure_required_strengths();
        v
    }

    const CASE_STUDY_REPLY: &str = r#"{"_id": 0, "domain": "FAMILIAL_RELATIONSHIP", "qualifier": [], "action": ["DECOMPOSE_QUERY", "RESOLVE_INTERMEDIATE_ENTITY", "SEQUENCE_SUBTASKS"], "strength": "MANDATORY", "tool_category": "GENEALOGY_QUERY"}"#;

    #[test]
    fn classification_builds_or_clause() {
        let r = rule("If the user query involves identifying a specific familial relationship, then decompose it.");
        let gw = Gateway::mock(MockScript::new().entry(MockEntry::containing(
            [r.nl_text.as_str()],
            CASE_STUDY_REPLY,
        )));
        let v = case_study_vocab();
        let a = classify_rule(&r, &v, &gw).unwrap();
        assert_eq!(
            a.symbolic.to_canonical_string(),
            "if (domain=FAMILIAL_RELATIONSHIP or tool_category=GENEALOGY_QUERY) then (action=[DECOMPOSE_QUERY, RESOLVE_INTERMEDIATE_ENTITY, SEQUENCE_SUBTASKS]) with strength=MANDATORY"
        );
        assert_eq!(a.raw_model_output, CASE_STUDY_REPLY);
        assert_eq!(classify_rule(&r, &v, &gw).unwrap(), a);
    }

    #[test]
    fn out_of_vocabulary_gets_one_corrective_reprompt() {
        let r = rule("If x, then y.");
        let bad = CASE_STUDY_REPLY.replace("GENEALOGY_QUERY", "FAMILY_TREE");
        let v = case_study_vocab();

        let gw = Gateway::mock(
            MockScript::new()
                .entry(MockEntry::containing(
                    ["not in the vocabulary"],
                    CASE_STUDY_REPLY,
                ))
                .entry(MockEntry::containing(["If x, then y."], bad.clone())),
        );
        assert!(classify_rule(&r, &v, &gw).is_ok());
        assert_eq!(gw.call_log().len(), 2);

        let gw =
            Gateway::mock(MockScript::new().entry(MockEntry::containing(["If x, then y."], bad)));
        match classify_rule(&r, &v, &gw) {
            Err(VocabError::UnknownToken { field, token, .. }) => {
                assert_eq!(
                    (field, token.as_str()),
                    (Field::ToolCategory, "FAMILY_TREE")
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn translate_reports_failures() {
        let rules = vec![
            rule("If one, then go."),
            rule("If two, then go."),
            rule("If three, then go."),
        ];
        let v = case_study_vocab();
        let gw = Gateway::mock(
            MockScript::new()
                .entry(MockEntry::containing(["If two"], "no idea"))
                .entry(MockEntry::containing(["then go."], CASE_STUDY_REPLY)),
        );
        let (lib, failures) = translate_library(&rules, &v, &gw);
        assert_eq!(lib.len(), 2);
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].rule_id, rules[1].id.to_string());
        let (lib, failures) = translate_library(&[], &v, &gw);
        assert!(lib.is_empty() && failures.is_empty());
    }

    #[test]
    fn tool_category_prefers_declared() {
        let v = case_study_vocab();
        let tool =
            ToolSpec::new("get_father").with_category(Token::new("GENEALOGY_QUERY").unwrap());
        assert_eq!(
            tool_category(&tool, &v, None).unwrap().unwrap().as_str(),
            "GENEALOGY_QUERY"
        );
        assert_eq!(tool_category(&ToolSpec::new("x"), &v, None).unwrap(), None);
        let gw = Gateway::mock(MockScript {
            entries: vec![],
            default: Some(CASE_STUDY_REPLY.into()),
        });
        assert!(tool_category(&ToolSpec::new("x"), &v, Some(&gw))
            .unwrap()
            .is_some());
    }
}
