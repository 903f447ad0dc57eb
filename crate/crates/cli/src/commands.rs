//! Subcommand implementations. Each command resolves and loads all of its
//! inputs before writing anything.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use rulekit_core::agent::{AgentHandle, MockAgent, ReactAgent, ReplayExecutor};
use rulekit_core::case::{load_failures, to_jsonl, Case, FailureCase, ToolSpec};
use rulekit_core::consolidation::{
    consolidate, prompt_consolidate, select_alpha, AgentOracle, AlphaTrial, CachedOracle,
    ConsolidationTrace, CorrectionOracle, MatrixOracle, OracleAccuracy,
};
use rulekit_core::eval::{
    compare_runs, load_dataset, make_splits, run_eval, Dataset, EvalResult, RetrievalSetup,
    SplitSpec,
};
use rulekit_core::gateway::{Gateway, HttpBackend, MockBackend, MockScript};
use rulekit_core::generation::{collect_failures, generate_pool, GenerationParams};
use rulekit_core::retrieval::{
    nl_retrieve, retrieve, symbolize_query, Embedder, GatewayClassifier, HashedBowEmbedder,
    KeywordClassifier, QueryClassifier, RankedRule, RemoteEmbedder, ToolCategoryMap,
    VocabIndicatorEmbedder,
};
use rulekit_core::rule::{RuleLibrary, Vocabulary};
use rulekit_core::vocab::{induce_vocabulary, tool_category, translate_library, InductionParams};

use crate::config::{
    AgentKind, BackendKind, ClassifierKind, EmbedderKind, OracleKind, PipelineConfig,
    RetrievalMethod,
};
use crate::{
    Cli, Command, CompareArgs, ConsolidateArgs, ConsolidationInputs, EvalArgs, GenerateArgs,
    RetrieveArgs, SelectAlphaArgs, SplitArgs, TranslateArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input files (exit 2).
    Usage(anyhow::Error),
    /// A pipeline stage failed (exit 1).
    Pipeline(anyhow::Error),
}

impl CliError {
    pub fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Pipeline(e) => e,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Pipeline(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

type CmdResult<T = ()> = Result<T, CliError>;

/// Shared state for one invocation.
struct Ctx {
    config: PipelineConfig,
    reports: Option<PathBuf>,
    gateway: OnceLock<Arc<Gateway>>,
}

pub fn run(cli: Cli) -> CmdResult {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(b) = cli.gateway {
        config.gateway.backend = b;
    }
    if let Some(p) = cli.gateway_script {
        config.gateway.mock_script = Some(p);
    }
    if let Some(a) = cli.agent {
        config.agent.kind = a;
    }
    if let Some(p) = cli.agent_script {
        config.agent.mock_script = Some(p);
    }
    let reports = cli.reports.or_else(|| config.paths.reports.clone());
    let mut ctx = Ctx {
        config,
        reports,
        gateway: OnceLock::new(),
    };
    match cli.command {
        Command::Generate(a) => cmd_generate(&mut ctx, a),
        Command::Translate(a) => cmd_translate(&mut ctx, a),
        Command::Consolidate(a) => cmd_consolidate(&mut ctx, a),
        Command::SelectAlpha(a) => cmd_select_alpha(&mut ctx, a),
        Command::Retrieve(a) => cmd_retrieve(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Compare(a) => cmd_compare(a),
        Command::Split(a) => cmd_split(&mut ctx, a),
    }
}

fn input(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> CmdResult<PathBuf> {
    let path = flag
        .or_else(|| config.clone())
        .ok_or_else(|| usage(anyhow!("no {what} path given (flag or config)")))?;
    if !path.is_file() {
        return Err(usage(anyhow!("{what} file not found: {}", path.display())));
    }
    Ok(path)
}

fn output(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> CmdResult<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| usage(anyhow!("no output path for the {what} (flag or config)")))
}

fn read(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)
}

fn write(path: &Path, contents: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

impl Ctx {
    fn report(&self, name: &str, contents: &str) -> CmdResult {
        match &self.reports {
            Some(dir) => write(&dir.join(name), contents),
            None => Ok(()),
        }
    }

    /// The configured gateway, built once per invocation.
    fn gateway(&self) -> CmdResult<Arc<Gateway>> {
        if let Some(g) = self.gateway.get() {
            return Ok(g.clone());
        }
        let section = &self.config.gateway;
        let gateway = match section.backend {
            BackendKind::Mock => {
                let path = input(None, &section.mock_script, "mock gateway script")?;
                let script = MockScript::from_json(&read(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))
                    .map_err(usage)?;
                let config = rulekit_core::gateway::GatewayConfig {
                    backoff_ms: 0,
                    ..section.gateway_config()
                };
                Gateway::new(Arc::new(MockBackend::new(script)), config).map_err(usage)?
            }
            BackendKind::Http => {
                let config = section.gateway_config();
                let backend = HttpBackend::new(&config).map_err(usage)?;
                Gateway::new(Arc::new(backend), config).map_err(usage)?
            }
        };
        let gateway = match &section.call_log {
            Some(path) => gateway
                .with_call_log_file(path)
                .with_context(|| format!("opening call log {}", path.display()))?,
            None => gateway,
        };
        Ok(self.gateway.get_or_init(|| Arc::new(gateway)).clone())
    }

    /// The agent; the ReAct agent replays tool observations from `cases`.
    fn agent(&self, cases: &[Case]) -> CmdResult<Box<dyn AgentHandle>> {
        let section = &self.config.agent;
        match section.kind {
            AgentKind::Mock => {
                let path = input(None, &section.mock_script, "mock agent script")?;
                let agent = MockAgent::from_json(&read(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))
                    .map_err(usage)?;
                Ok(Box::new(agent))
            }
            AgentKind::React => {
                let mut agent =
                    ReactAgent::new(self.gateway()?, Arc::new(ReplayExecutor::from_cases(cases)));
                agent.max_steps = section.max_steps;
                agent.max_tool_retries = section.max_tool_retries;
                Ok(Box::new(agent))
            }
        }
    }

    fn validate(&self) -> CmdResult {
        self.config.validate().map_err(usage)
    }
}

fn failures_as_cases(failures: &[FailureCase]) -> Vec<Case> {
    failures
        .iter()
        .map(|f| Case {
            id: f.id.clone(),
            query: f.query.clone(),
            tools: f.tools.clone(),
            gold_trace: f.gold_trace.clone(),
            gold_answer: f.gold_answer.clone(),
            split: None,
        })
        .collect()
}

fn load_failure_file(path: &Path) -> CmdResult<Vec<FailureCase>> {
    load_failures(path)
        .with_context(|| format!("loading failures from {}", path.display()))
        .map_err(usage)
}

fn load_library(path: &Path, vocab: Option<&Vocabulary>) -> CmdResult<RuleLibrary> {
    RuleLibrary::from_json(&read(path)?, vocab)
        .with_context(|| format!("loading library {}", path.display()))
        .map_err(usage)
}

fn load_vocab(path: &Path) -> CmdResult<Vocabulary> {
    Vocabulary::from_json(&read(path)?)
        .with_context(|| format!("loading vocabulary {}", path.display()))
        .map_err(usage)
}

fn cmd_generate(ctx: &mut Ctx, args: GenerateArgs) -> CmdResult {
    if let Some(v) = args.max_iterations {
        ctx.config.generation.max_iterations = v;
    }
    if let Some(v) = args.max_tokens {
        ctx.config.generation.max_tokens = v;
    }
    ctx.validate()?;
    let paths = ctx.config.paths.clone();
    let pool_path = output(args.pool, &paths.pool, "rule pool")?;
    enum Source {
        Failures(Vec<FailureCase>),
        Cases(Vec<Case>),
    }
    let source = match (args.failures, args.dataset) {
        (Some(f), _) => Source::Failures(load_failure_file(&input(Some(f), &None, "failures")?)?),
        (None, Some(d)) => Source::Cases(load_cases(&input(Some(d), &None, "dataset")?)?.cases),
        (None, None) => match (&paths.failures, &paths.dataset) {
            (Some(f), _) if f.is_file() => Source::Failures(load_failure_file(f)?),
            (_, Some(_)) => {
                Source::Cases(load_cases(&input(None, &paths.dataset, "dataset")?)?.cases)
            }
            _ => Source::Failures(load_failure_file(&input(
                None,
                &paths.failures,
                "failures",
            )?)?),
        },
    };
    let cases = match &source {
        Source::Failures(f) => failures_as_cases(f),
        Source::Cases(c) => c.clone(),
    };
    let agent = ctx.agent(&cases)?;
    let gateway = ctx.gateway()?;

    let failures = match source {
        Source::Failures(f) => f,
        Source::Cases(c) => {
            let f = collect_failures(&c, agent.as_ref());
            log::info!("{} of {} cases failed", f.len(), c.len());
            match &paths.failures {
                Some(p) => write(p, &to_jsonl(&f))?,
                None => ctx.report("failures.jsonl", &to_jsonl(&f))?,
            }
            f
        }
    };
    let params = GenerationParams {
        max_iterations: ctx.config.generation.max_iterations,
        max_tokens: ctx.config.generation.max_tokens,
    };
    let outcome = generate_pool(&failures, &gateway, agent.as_ref(), params);
    let pool = RuleLibrary::from_rules(outcome.pool, "")?;
    write(&pool_path, &pool.to_json())?;
    let reports: Vec<serde_json::Value> = outcome.reports.iter().map(|r| r.to_json()).collect();
    ctx.report("generation_reports.jsonl", &to_jsonl(&reports))?;
    eprintln!(
        "generated {} rule(s) from {} failure(s)",
        pool.len(),
        failures.len()
    );
    Ok(())
}

fn load_cases(path: &Path) -> CmdResult<Dataset> {
    load_dataset(path)
        .with_context(|| format!("loading dataset {}", path.display()))
        .map_err(usage)
}

fn cmd_translate(ctx: &mut Ctx, args: TranslateArgs) -> CmdResult {
    if let Some(v) = args.batch_size {
        ctx.config.vocab.batch_size = v;
    }
    if let Some(v) = args.num_orderings {
        ctx.config.vocab.num_orderings = v;
    }
    ctx.validate()?;
    let paths = ctx.config.paths.clone();
    let pool_path = input(args.pool, &paths.pool, "rule pool")?;
    let vocab_path = output(args.vocab, &paths.vocab, "vocabulary")?;
    let library_path = output(args.library, &paths.library, "library")?;
    let pool = load_library(&pool_path, None)?;
    let gateway = ctx.gateway()?;

    let params = InductionParams {
        batch_size: ctx.config.vocab.batch_size,
        num_orderings: ctx.config.vocab.num_orderings,
        seed: ctx.config.seed,
    };
    let induction = induce_vocabulary(pool.rules(), params, &gateway)?;
    ctx.report("vocab_candidates.jsonl", &induction.candidate_log())?;
    let vocab = induction.into_vocabulary();
    let (mut library, failures) = translate_library(pool.rules(), &vocab, &gateway);
    library.set_vocab_version(vocab.version.clone());
    write(&vocab_path, &vocab.to_json())?;
    write(&library_path, &library.to_json())?;
    ctx.report("translation_failures.jsonl", &to_jsonl(&failures))?;
    for f in &failures {
        eprintln!("could not translate rule {}: {}", f.rule_id, f.reason);
    }
    eprintln!("translated {} of {} rule(s)", library.len(), pool.len());
    Ok(())
}

/// Everything consolidation needs, loaded and checked.
struct ConsolidationSetup {
    library: RuleLibrary,
    vocab: Vocabulary,
    failures: Vec<FailureCase>,
    tool_map: ToolCategoryMap,
    agent: Option<Box<dyn AgentHandle>>,
    matrix: Option<MatrixOracle>,
    matrix_out: Option<PathBuf>,
}

fn consolidation_setup(
    ctx: &mut Ctx,
    inputs: ConsolidationInputs,
) -> CmdResult<ConsolidationSetup> {
    let c = &mut ctx.config.consolidation;
    if let Some(k) = inputs.oracle_kind {
        c.oracle = k;
    }
    if let Some(g) = inputs.alpha_grid {
        c.alpha_grid = Some(g);
    }
    if let Some(sch) = inputs.schedule {
        c.schedule = sch.into();
    }
    if let Some(m) = inputs.max_passes {
        c.max_passes = Some(m);
    }
    ctx.validate()?;
    let paths = ctx.config.paths.clone();
    let vocab = load_vocab(&input(inputs.vocab, &paths.vocab, "vocabulary")?)?;
    let library = load_library(
        &input(inputs.library, &paths.library, "library")?,
        Some(&vocab),
    )?;
    let failures = load_failure_file(&input(inputs.failures, &paths.failures, "failures")?)?;
    if failures.is_empty() {
        return Err(usage(anyhow!("the failure set is empty")));
    }
    let oracle_path = inputs.oracle.or(paths.oracle);
    let mut matrix = None;
    let mut matrix_out = None;
    let mut need_agent = ctx.config.consolidation.oracle == OracleKind::Agent;
    if ctx.config.consolidation.oracle == OracleKind::Matrix {
        match &oracle_path {
            Some(p) if p.is_file() => {
                matrix = Some(
                    MatrixOracle::from_json(&read(p)?)
                        .with_context(|| format!("parsing oracle {}", p.display()))
                        .map_err(usage)?,
                );
            }
            other => {
                need_agent = true;
                matrix_out = other.clone();
            }
        }
    }
    let classify = ctx.config.consolidation.classify_tools;
    let gateway = if classify { Some(ctx.gateway()?) } else { None };
    let agent = if need_agent {
        Some(ctx.agent(&failures_as_cases(&failures))?)
    } else {
        None
    };

    let mut tool_map = ToolCategoryMap::new();
    let mut seen = BTreeSet::new();
    for tool in failures.iter().flat_map(|f| &f.tools) {
        if !seen.insert(tool.name.clone()) {
            continue;
        }
        if let Some(cat) = tool_category(tool, &vocab, gateway.as_deref())? {
            tool_map.insert(tool.name.clone(), cat);
        }
    }
    Ok(ConsolidationSetup {
        library,
        vocab,
        failures,
        tool_map,
        agent,
        matrix,
        matrix_out,
    })
}

/// Runs `f` with the configured oracle, persisting built matrices and caches.
fn with_oracle<T>(
    ctx: &Ctx,
    setup: &mut ConsolidationSetup,
    f: impl FnOnce(&dyn CorrectionOracle, &ConsolidationSetup) -> CmdResult<T>,
) -> CmdResult<T> {
    match ctx.config.consolidation.oracle {
        OracleKind::Matrix => {
            let matrix = match setup.matrix.take() {
                Some(m) => m,
                None => {
                    let agent = setup
                        .agent
                        .as_deref()
                        .expect("agent loaded for matrix build");
                    let m = MatrixOracle::build(setup.library.rules(), &setup.failures, agent);
                    if let Some(p) = &setup.matrix_out {
                        write(p, &m.to_json())?;
                    }
                    m
                }
            };
            let matrix = matrix.with_tool_categories(setup.tool_map.clone());
            f(&matrix, setup)
        }
        OracleKind::Agent => {
            let agent = setup
                .agent
                .as_deref()
                .expect("agent loaded for agent oracle");
            let inner = AgentOracle {
                agent,
                tool_categories: setup.tool_map.clone(),
            };
            let cached = match &ctx.config.paths.cache {
                Some(p) => CachedOracle::with_file(inner, p)
                    .with_context(|| format!("opening cache {}", p.display()))?,
                None => CachedOracle::new(inner),
            };
            let out = f(&cached, setup);
            cached.save().context("saving oracle cache")?;
            out
        }
    }
}

#[derive(Serialize)]
struct AlphaReport<'a> {
    alpha: f64,
    trials: &'a [AlphaTrial],
}

fn cmd_consolidate(ctx: &mut Ctx, args: ConsolidateArgs) -> CmdResult {
    if let Some(a) = args.alpha {
        ctx.config.consolidation.alpha = a;
        ctx.config.consolidation.alpha_grid = None;
    }
    let out_path = output(
        args.out,
        &ctx.config.paths.consolidated.clone(),
        "consolidated library",
    )?;
    let max_tokens = ctx.config.generation.max_tokens;
    if args.prompt_baseline {
        let vocab_path = input(
            args.inputs.vocab,
            &ctx.config.paths.vocab.clone(),
            "vocabulary",
        )?;
        let library_path = input(
            args.inputs.library,
            &ctx.config.paths.library.clone(),
            "library",
        )?;
        ctx.validate()?;
        let vocab = load_vocab(&vocab_path)?;
        let library = load_library(&library_path, Some(&vocab))?;
        let gateway = ctx.gateway()?;
        let result = prompt_consolidate(&library, &vocab, max_tokens, &gateway)?;
        write(&out_path, &result.library.to_json())?;
        #[derive(Serialize)]
        struct PromptReport<'a> {
            merges: &'a [rulekit_core::consolidation::PromptMerge],
            rejected: &'a [rulekit_core::consolidation::PromptRejection],
        }
        ctx.report(
            "prompt_consolidation.json",
            &to_json(&PromptReport {
                merges: &result.merges,
                rejected: &result.rejected,
            }),
        )?;
        eprintln!(
            "prompt consolidation: {} -> {} rule(s)",
            library.len(),
            result.library.len()
        );
        return Ok(());
    }

    let mut setup = consolidation_setup(ctx, args.inputs)?;
    let alpha = ctx.config.consolidation.alpha;
    let grid = ctx.config.consolidation.alpha_grid.clone();
    let params = ctx.config.consolidation.params(alpha);
    let (library, trace) = with_oracle(ctx, &mut setup, |oracle, s| match &grid {
        Some(grid) => {
            let evaluator = OracleAccuracy {
                oracle,
                failures: &s.failures,
            };
            let sel = select_alpha(
                &s.library,
                &s.failures,
                grid,
                params,
                oracle,
                &s.tool_map,
                &evaluator,
            )?;
            ctx.report(
                "alpha_selection.json",
                &to_json(&AlphaReport {
                    alpha: sel.alpha,
                    trials: &sel.trials,
                }),
            )?;
            eprintln!("selected alpha {}", sel.alpha);
            Ok((sel.library, sel.trace))
        }
        None => Ok(consolidate(
            &s.library,
            &s.failures,
            params,
            oracle,
            &s.tool_map,
        )?),
    })?;
    finish_consolidation(ctx, &setup, &out_path, library, &trace)
}

fn finish_consolidation(
    ctx: &Ctx,
    setup: &ConsolidationSetup,
    out_path: &Path,
    library: RuleLibrary,
    trace: &ConsolidationTrace,
) -> CmdResult {
    write(out_path, &library.to_json())?;
    ctx.report("consolidation_trace.json", &trace.to_json())?;
    for u in &trace.unmapped_tools {
        log::warn!(
            "rule {}: tool {} has no category; generalize skipped",
            u.rule_id,
            u.tool
        );
    }
    let (k0, k1) = (
        trace.initial_mdl.map(|m| m.k).unwrap_or(0),
        trace.final_mdl.map(|m| m.k).unwrap_or(0),
    );
    eprintln!(
        "consolidated {} -> {} rule(s), corrected {} -> {} of {} (vocab {})",
        setup.library.len(),
        library.len(),
        k0,
        k1,
        setup.failures.len(),
        setup.vocab.version
    );
    Ok(())
}

fn cmd_select_alpha(ctx: &mut Ctx, args: SelectAlphaArgs) -> CmdResult {
    if args.inputs.alpha_grid.is_none() && ctx.config.consolidation.alpha_grid.is_none() {
        return Err(usage(anyhow!(
            "select-alpha needs --alpha-grid or consolidation.alpha_grid"
        )));
    }
    let mut setup = consolidation_setup(ctx, args.inputs)?;
    let grid = ctx
        .config
        .consolidation
        .alpha_grid
        .clone()
        .expect("checked above");
    let params = ctx.config.consolidation.params(1.0);
    let report = with_oracle(ctx, &mut setup, |oracle, s| {
        let evaluator = OracleAccuracy {
            oracle,
            failures: &s.failures,
        };
        let sel = select_alpha(
            &s.library,
            &s.failures,
            &grid,
            params,
            oracle,
            &s.tool_map,
            &evaluator,
        )?;
        Ok(to_json(&AlphaReport {
            alpha: sel.alpha,
            trials: &sel.trials,
        }))
    })?;
    ctx.report("alpha_selection.json", &report)?;
    print!("{report}");
    Ok(())
}

#[derive(Deserialize)]
struct QueryInput {
    query: String,
    #[serde(default)]
    tools: Vec<ToolSpec>,
}

#[derive(Serialize)]
struct QueryOutput<'a> {
    query: &'a str,
    rules: Vec<RankedRule>,
}

fn parse_queries(text: &str) -> CmdResult<Vec<QueryInput>> {
    if let Ok(one) = serde_json::from_str::<QueryInput>(text) {
        return Ok(vec![one]);
    }
    if let Ok(many) = serde_json::from_str::<Vec<QueryInput>>(text) {
        return Ok(many);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("stdin line {}: expected {{\"query\", \"tools\"}}", i + 1))
                .map_err(usage)
        })
        .collect()
}

/// Embedder and classifier for retrieval, as configured.
fn retrieval_parts<'g>(
    ctx: &Ctx,
    vocab: &Vocabulary,
    gateway: Option<&'g Gateway>,
) -> CmdResult<(Box<dyn Embedder>, Box<dyn QueryClassifier + 'g>)> {
    let r = &ctx.config.retrieval;
    let embedder: Box<dyn Embedder> = match r.embedder {
        EmbedderKind::Indicator => Box::new(VocabIndicatorEmbedder::new(vocab)),
        EmbedderKind::Bow => Box::new(HashedBowEmbedder::default()),
        EmbedderKind::Remote => {
            Box::new(RemoteEmbedder::new(ctx.config.gateway.gateway_config()).map_err(usage)?)
        }
    };
    let classifier: Box<dyn QueryClassifier + 'g> = match r.classifier {
        ClassifierKind::Keyword => match &ctx.config.paths.classifier {
            Some(p) => Box::new(
                KeywordClassifier::from_json(&read(p)?)
                    .with_context(|| format!("parsing classifier {}", p.display()))
                    .map_err(usage)?,
            ),
            None => Box::new(KeywordClassifier::from_vocabulary(vocab)),
        },
        ClassifierKind::Model => Box::new(GatewayClassifier {
            gateway: gateway.expect("gateway loaded for model classifier"),
        }),
    };
    Ok((embedder, classifier))
}

fn cmd_retrieve(ctx: &mut Ctx, args: RetrieveArgs) -> CmdResult {
    let r = &mut ctx.config.retrieval;
    if let Some(k) = args.top_k {
        r.top_k = k;
    }
    if let Some(e) = args.embedder {
        r.embedder = e;
    }
    if let Some(c) = args.classifier {
        r.classifier = c;
    }
    if let Some(m) = args.method {
        r.method = m;
    }
    ctx.validate()?;
    let paths = ctx.config.paths.clone();
    let library_path = args
        .library
        .or(paths.consolidated.clone())
        .or(paths.library.clone());
    let vocab = load_vocab(&input(args.vocab, &paths.vocab, "vocabulary")?)?;
    let library = load_library(&input(library_path, &None, "library")?, Some(&vocab))?;
    let gateway = match ctx.config.retrieval.classifier {
        ClassifierKind::Model => Some(ctx.gateway()?),
        ClassifierKind::Keyword => None,
    };
    let (embedder, classifier) = retrieval_parts(ctx, &vocab, gateway.as_deref())?;
    let mut stdin = String::new();
    std::io::stdin()
        .read_to_string(&mut stdin)
        .context("reading stdin")?;
    let queries = parse_queries(&stdin)?;

    let k = ctx.config.retrieval.top_k;
    let mut out = String::new();
    for q in &queries {
        let rules = match ctx.config.retrieval.method {
            RetrievalMethod::Symbolic => {
                let state = symbolize_query(
                    &q.query,
                    &q.tools,
                    &vocab,
                    classifier.as_ref(),
                    &ToolCategoryMap::new(),
                )?;
                retrieve(&library, &state, embedder.as_ref(), k)?
            }
            RetrievalMethod::Text => {
                nl_retrieve(&library, &q.query, &q.tools, embedder.as_ref(), k)?
            }
        };
        let line = QueryOutput {
            query: &q.query,
            rules,
        };
        out.push_str(&serde_json::to_string(&line).expect("output serializes"));
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn cmd_eval(ctx: &mut Ctx, args: EvalArgs) -> CmdResult {
    if let Some(k) = args.top_k {
        ctx.config.retrieval.top_k = k;
    }
    if let Some(w) = args.workers {
        ctx.config.eval.workers = w;
    }
    ctx.validate()?;
    let paths = ctx.config.paths.clone();
    let dataset = load_cases(&input(args.dataset, &paths.dataset, "dataset")?)?;
    let cases = match (&args.split, &args.splits) {
        (Some(label), _) => dataset.labelled(label),
        (None, Some(file)) => {
            let spec: SplitSpec =
                serde_json::from_str(&read(&input(Some(file.clone()), &None, "split")?)?)
                    .with_context(|| format!("parsing split file {}", file.display()))
                    .map_err(usage)?;
            let ids = match args.part.as_deref() {
                Some("train") => &spec.train_ids,
                Some("test-rand") => &spec.test_rand_ids,
                _ => &spec.test_unseen_ids,
            };
            dataset.select(ids)
        }
        (None, None) => dataset.cases.clone(),
    };
    let library_path = args.library.filter(|p| p.as_os_str() != "none");
    let loaded = match library_path {
        Some(p) => {
            let vocab = load_vocab(&input(args.vocab, &paths.vocab, "vocabulary")?)?;
            let library = load_library(&input(Some(p), &None, "library")?, Some(&vocab))?;
            Some((library, vocab))
        }
        None => None,
    };
    let out_path = match args.out {
        Some(p) => p,
        None => ctx
            .reports
            .as_ref()
            .map(|d| d.join("eval.json"))
            .ok_or_else(|| {
                usage(anyhow!(
                    "no --out given and no reports directory configured"
                ))
            })?,
    };
    let agent = ctx.agent(&dataset.cases)?;
    let gateway = match (&loaded, ctx.config.retrieval.classifier) {
        (Some(_), ClassifierKind::Model) => Some(ctx.gateway()?),
        _ => None,
    };

    let workers = ctx.config.eval.workers;
    let result = match &loaded {
        Some((library, vocab)) => {
            let (embedder, classifier) = retrieval_parts(ctx, vocab, gateway.as_deref())?;
            let tool_map = ToolCategoryMap::new();
            let setup = RetrievalSetup {
                library,
                vocab,
                classifier: classifier.as_ref(),
                embedder: embedder.as_ref(),
                tool_map: &tool_map,
                top_k: ctx.config.retrieval.top_k,
            };
            run_eval(&cases, Some(&setup), agent.as_ref(), workers)?
        }
        None => run_eval(&cases, None, agent.as_ref(), workers)?,
    };
    write(&out_path, &result.to_json())?;
    eprintln!(
        "accuracy {:.1}% +/- {:.1}% (n = {})",
        100.0 * result.accuracy,
        100.0 * result.standard_error,
        result.n
    );
    Ok(())
}

fn load_result(path: &Path) -> CmdResult<EvalResult> {
    serde_json::from_str(&read(path)?)
        .with_context(|| format!("parsing results {}", path.display()))
        .map_err(usage)
}

fn cmd_compare(args: CompareArgs) -> CmdResult {
    let a = load_result(&args.a)?;
    let b = load_result(&args.b)?;
    let report = compare_runs(&a, &b).map_err(usage)?;
    match &args.out {
        Some(p) => write(p, &report.to_json())?,
        None => print!("{}", report.to_json()),
    }
    eprintln!(
        "delta {:+.1} points ({} win, {} loss, {} tie)",
        100.0 * report.delta,
        report.wins,
        report.losses,
        report.ties
    );
    Ok(())
}

fn cmd_split(ctx: &mut Ctx, args: SplitArgs) -> CmdResult {
    let dataset = load_cases(&input(args.dataset, &ctx.config.paths.dataset, "dataset")?)?;
    let spec = make_splits(
        &dataset,
        args.rand_fraction,
        args.unseen_fraction,
        ctx.config.seed,
    )
    .map_err(usage)?;
    let json = to_json(&spec);
    match &args.out {
        Some(p) => write(p, &json)?,
        None => print!("{json}"),
    }
    eprintln!(
        "train {} / test-rand {} / test-unseen {} (held out: {})",
        spec.train_ids.len(),
        spec.test_rand_ids.len(),
        spec.test_unseen_ids.len(),
        spec.held_out_tools
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}
