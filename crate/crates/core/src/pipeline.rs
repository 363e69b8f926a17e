//! File-composed pipeline steps.
//!
//! Each step reads the artifacts of earlier steps from the output directory,
//! writes its own atomically and records a manifest with the config hash,
//! the seeds it used and SHA-256 digests of its inputs and outputs. No state
//! lives outside those files.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! cases.jsonl            ingest
//! processed.jsonl        preprocess
//! index.bin stats.json   embed
//! kg.json                build-kg
//! split.json             split
//! train/*.jsonl          gen-train
//! eval/<name>/...        eval
//! sweep/...              sweep
//! reports/<step>.json    per-step reports
//! manifests/<step>.json
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendPreprocessor, RetryPolicy};
use crate::config::{EmbedderKind, EngineConfig, PreprocessMode};
use crate::corpus::{
    parse_corpus, preprocess_corpus, render_case, CaseId, ExtractivePreprocessor, Preprocessor, ProcessedCase, RawCase,
};
use crate::dataset::{
    assemble_combined, build_ljp_instance, build_pcr_instance, build_scr_instance, instance_seed, split_corpus,
    BuildContext, BuildError, LjpMode, Phase, PromptInstance, Split, Task,
};
use crate::embedding::{CorpusStats, EmbeddingProvider, HashedBowEmbedder, HttpEmbedder, VectorIndex};
use crate::eval::{
    choice_size_sweep, judgment_csv, judgment_table, retrieval_csv, retrieval_table, score_judgment, score_retrieval,
    sweep_csv, sweep_table, K_SET,
};
use crate::graph::{check_min_precedents, date_order_violations, KnowledgeGraph, Triple, PRECEDENT_RELATION};
use crate::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl, IoError};
use crate::seed::{derive_seed, sha256_hex};
use crate::synthetic::{generate, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Backend,
    Infeasible,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 1,
            ErrorKind::Backend => 2,
            ErrorKind::Infeasible => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub step: String,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed ({:?}): {}", self.step, self.kind, self.message)
    }
}

impl std::error::Error for PipelineError {}

impl PipelineError {
    fn new(kind: ErrorKind, step: &str, message: impl fmt::Display) -> Self {
        Self { kind, step: step.to_string(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

/// Result of a step that ran to completion. `partial` steps wrote every
/// artifact they could but some items failed; `exit_code` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: String,
    pub outputs: Vec<PathBuf>,
    pub partial: bool,
    pub exit_code: i32,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: String,
    pub engine_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Scr,
    Pcr,
    Ljp,
}

impl EvalTask {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "scr" => Some(EvalTask::Scr),
            "pcr" => Some(EvalTask::Pcr),
            "ljp" => Some(EvalTask::Ljp),
            _ => None,
        }
    }
}

/// Serialised precedent graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub relation: String,
    pub entities: Vec<CaseId>,
    pub triples: Vec<Triple>,
}

/// One backend answer as persisted next to the instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub input_case: CaseId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub task: Task,
    pub case: CaseId,
    pub reason: String,
}

pub const CASES_FILE: &str = "cases.jsonl";
pub const PROCESSED_FILE: &str = "processed.jsonl";
pub const INDEX_FILE: &str = "index.bin";
pub const STATS_FILE: &str = "stats.json";
pub const GRAPH_FILE: &str = "kg.json";
pub const SPLIT_FILE: &str = "split.json";

pub struct Pipeline {
    config: EngineConfig,
}

struct Loaded {
    by_id: HashMap<CaseId, ProcessedCase>,
    index: VectorIndex,
    train_index: VectorIndex,
    kg: KnowledgeGraph,
    split: Split,
    embedder: Box<dyn EmbeddingProvider>,
    factors: HashedBowEmbedder,
}

impl Pipeline {
    pub fn new(config: EngineConfig) -> Result<Self, PipelineError> {
        config.validate().map_err(|e| PipelineError::new(ErrorKind::Validation, "config", e))?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    fn pool(&self, step: &str) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs)
            .build()
            .map_err(|e| PipelineError::new(ErrorKind::Validation, step, e))
    }

    fn io(step: &str) -> impl Fn(IoError) -> PipelineError + '_ {
        move |e| PipelineError::new(ErrorKind::Validation, step, e)
    }

    fn require(&self, step: &str, rel: &str, producer: &str) -> Result<PathBuf, PipelineError> {
        let path = self.out(rel);
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::new(
                ErrorKind::Validation,
                step,
                format!("missing {}; run `{producer}` first", path.display()),
            ))
        }
    }

    fn digest(path: &Path) -> String {
        std::fs::read(path).map(|b| sha256_hex(&b)).unwrap_or_else(|_| "missing".into())
    }

    fn finish(
        &self,
        step: &str,
        inputs: &[PathBuf],
        outputs: Vec<PathBuf>,
        seeds: BTreeMap<String, u64>,
        exit_code: i32,
        summary: String,
    ) -> Result<StepOutcome, PipelineError> {
        let rel = |p: &PathBuf| {
            p.strip_prefix(&self.config.output_dir).unwrap_or(p).to_string_lossy().into_owned()
        };
        let manifest = Manifest {
            step: step.to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.hash(),
            master_seed: self.config.seed,
            seeds,
            inputs: inputs.iter().map(|p| (rel(p), Self::digest(p))).collect(),
            outputs: outputs.iter().map(|p| (rel(p), Self::digest(p))).collect(),
            partial: exit_code != 0,
        };
        let name = step.replace(' ', "_");
        write_json(&self.out(&format!("manifests/{name}.json")), &manifest).map_err(Self::io(step))?;
        Ok(StepOutcome { step: step.to_string(), outputs, partial: exit_code != 0, exit_code, summary })
    }

    fn seeds(&self, extra: &[(&str, u64)]) -> BTreeMap<String, u64> {
        let mut seeds = BTreeMap::from([("master".to_string(), self.config.seed)]);
        for (k, v) in extra {
            seeds.insert((*k).to_string(), *v);
        }
        seeds
    }

    /// Parses and validates the corpus; valid records go to `cases.jsonl`.
    pub fn ingest(&self) -> Result<StepOutcome, PipelineError> {
        const STEP: &str = "ingest";
        let source = &self.config.corpus_path;
        if !source.exists() {
            return Err(PipelineError::new(ErrorKind::Validation, STEP, format!("corpus {} not found", source.display())));
        }
        let parsed = parse_corpus(source).map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?;
        let cases_path = self.out(CASES_FILE);
        write_jsonl(&cases_path, &parsed.cases).map_err(Self::io(STEP))?;
        let report_path = self.out("reports/ingest.json");
        let report = serde_json::json!({ "valid": parsed.cases.len(), "errors": parsed.errors });
        write_json(&report_path, &report).map_err(Self::io(STEP))?;
        let code = if parsed.errors.is_empty() { 0 } else { ErrorKind::Validation.exit_code() };
        let summary = format!("{} valid case(s), {} rejected record(s)", parsed.cases.len(), parsed.errors.len());
        self.finish(STEP, &[source.clone()], vec![cases_path, report_path], self.seeds(&[]), code, summary)
    }

    /// Summaries and verdicts for every ingested case.
    pub fn preprocess(&self) -> Result<StepOutcome, PipelineError> {
        const STEP: &str = "preprocess";
        let input = self.require(STEP, CASES_FILE, "ingest")?;
        let raws: Vec<RawCase> = read_jsonl(&input).map_err(Self::io(STEP))?;
        let extractive;
        let via_backend;
        let (preprocessor, failure_kind): (&dyn Preprocessor, ErrorKind) = match self.config.preprocess.mode {
            PreprocessMode::Extractive => {
                extractive = ExtractivePreprocessor { sentences: self.config.preprocess.sentences };
                (&extractive, ErrorKind::Validation)
            }
            PreprocessMode::Backend => {
                let backend = Backend::new(self.config.backend.clone())
                    .map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?;
                via_backend = BackendPreprocessor { backend };
                (&via_backend, ErrorKind::Backend)
            }
        };
        let (processed, report) = self.pool(STEP)?.install(|| preprocess_corpus(&raws, preprocessor));
        let out = self.out(PROCESSED_FILE);
        write_jsonl(&out, &processed).map_err(Self::io(STEP))?;
        let report_path = self.out("reports/preprocess.json");
        write_json(&report_path, &report).map_err(Self::io(STEP))?;
        let code = if report.failures.is_empty() { 0 } else { failure_kind.exit_code() };
        let summary = format!(
            "{} processed, {} failed, {} warning(s)",
            report.processed,
            report.failures.len(),
            report.warnings.len()
        );
        self.finish(STEP, &[input], vec![out, report_path], self.seeds(&[]), code, summary)
    }

    fn embedder(&self, stats: Option<CorpusStats>) -> Result<Box<dyn EmbeddingProvider>, String> {
        let e = &self.config.embedder;
        match e.kind {
            EmbedderKind::Fallback => Ok(Box::new(HashedBowEmbedder::with_stats(
                self.config.embed_dim,
                stats.unwrap_or_default(),
            ))),
            EmbedderKind::Http => Ok(Box::new(HttpEmbedder::new(
                e.endpoint.as_deref().unwrap_or_default(),
                e.model_name.as_deref().unwrap_or("default"),
                self.config.embed_dim,
                std::env::var(&e.api_key_env).ok(),
                Duration::from_secs_f64(e.timeout_secs),
                RetryPolicy { max_retries: e.max_retries, base_backoff: Duration::from_millis(e.backoff_ms) },
            )?)),
        }
    }

    fn load_processed(&self, step: &str) -> Result<(PathBuf, Vec<ProcessedCase>), PipelineError> {
        let path = self.require(step, PROCESSED_FILE, "preprocess")?;
        let cases = read_jsonl(&path).map_err(Self::io(step))?;
        Ok((path, cases))
    }

    /// Embeds every processed case into `index.bin`; the fallback embedder
    /// also persists its document-frequency table as `stats.json`.
    pub fn embed(&self) -> Result<StepOutcome, PipelineError> {
        const STEP: &str = "embed";
        let (input, cases) = self.load_processed(STEP)?;
        let texts: Vec<String> = cases.iter().map(|c| render_case(c, false)).collect();
        let mut outputs = Vec::new();
        let stats = match self.config.embedder.kind {
            EmbedderKind::Fallback => {
                let stats = CorpusStats::from_texts(texts.iter().map(String::as_str));
                let path = self.out(STATS_FILE);
                write_json(&path, &stats).map_err(Self::io(STEP))?;
                outputs.push(path);
                Some(stats)
            }
            EmbedderKind::Http => None,
        };
        let embedder = self.embedder(stats).map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?;
        let vectors: Vec<_> = self.pool(STEP)?.install(|| texts.par_iter().map(|t| embedder.embed(t)).collect());
        let mut index = VectorIndex::new(self.config.embed_dim);
        let mut failures = Vec::new();
        for (case, v) in cases.iter().zip(vectors) {
            match v {
                Ok(v) => index.insert(case.id.clone(), &v).map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?,
                Err(e) => failures.push(serde_json::json!({ "id": case.id, "error": e.to_string() })),
            }
        }
        let path = self.out(INDEX_FILE);
        index.save(&path).map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?;
        outputs.insert(0, path);
        let report_path = self.out("reports/embed.json");
        write_json(&report_path, &serde_json::json!({ "indexed": index.len(), "failures": failures }))
            .map_err(Self::io(STEP))?;
        outputs.push(report_path);
        let code = if failures.is_empty() { 0 } else { ErrorKind::Backend.exit_code() };
        let summary = format!("{} vector(s) of dimension {}, {} failure(s)", index.len(), index.dim(), failures.len());
        self.finish(STEP, &[input], outputs, self.seeds(&[]), code, summary)
    }

    /// Precedent graph over the corpus plus a constraint report.
    pub fn build_kg(&self) -> Result<StepOutcome, PipelineError> {
        const STEP: &str = "build-kg";
        let (input, cases) = self.load_processed(STEP)?;
        let ids: BTreeSet<CaseId> = cases.iter().map(|c| c.id.clone()).collect();
        let (kg, dropped) = KnowledgeGraph::build(&cases, &ids);
        let file = GraphFile {
            relation: PRECEDENT_RELATION.to_string(),
            entities: kg.entities().iter().cloned().collect(),
            triples: kg.triples().collect(),
        };
        let path = self.out(GRAPH_FILE);
        write_json(&path, &file).map_err(Self::io(STEP))?;
        let shortfalls = check_min_precedents(&kg, ids.iter(), self.config.split.min_precedents);
        let report = serde_json::json!({
            "entities": kg.entities().len(),
            "triples": kg.triple_count(),
            "dropped_edges": dropped,
            "below_min_precedents": shortfalls,
            "date_order_violations": date_order_violations(&kg, &cases),
        });
        let report_path = self.out("reports/build_kg.json");
        write_json(&report_path, &report).map_err(Self::io(STEP))?;
        let summary = format!(
            "{} entities, {} triples, {} dropped edge(s), {} case(s) under {} precedents",
            kg.entities().len(),
            kg.triple_count(),
            dropped.count,
            shortfalls.len(),
            self.config.split.min_precedents
        );
        self.finish(STEP, &[input], vec![path, report_path], self.seeds(&[]), 0, summary)
    }

    /// Train/test manifests satisfying the three split constraints.
    pub fn split(&self) -> Result<StepOutcome, PipelineError> {
        const STEP: &str = "split";
        let (input, cases) = self.load_processed(STEP)?;
        let split = split_corpus(&cases, &self.config.split)
            .map_err(|e| PipelineError::new(ErrorKind::Infeasible, STEP, e))?;
        let path = self.out(SPLIT_FILE);
        write_json(&path, &split).map_err(Self::io(STEP))?;
        let summary = format!(
            "{} train ({} per class), {} test, {} excluded",
            split.report.train_size,
            split.report.quota_per_class,
            split.report.test_size,
            split.report.excluded_min_precedents.len() + split.report.excluded_train_precedents.len()
        );
        let seeds = self.seeds(&[("split", self.config.split.seed)]);
        self.finish(STEP, &[input], vec![path], seeds, 0, summary)
    }

    fn load(&self, step: &str) -> Result<(Loaded, Vec<PathBuf>), PipelineError> {
        let (processed_path, cases) = self.load_processed(step)?;
        let index_path = self.require(step, INDEX_FILE, "embed")?;
        let graph_path = self.require(step, GRAPH_FILE, "build-kg")?;
        let split_path = self.require(step, SPLIT_FILE, "split")?;
        let mut inputs = vec![processed_path, index_path.clone(), graph_path.clone(), split_path.clone()];
        let index = VectorIndex::load(&index_path).map_err(|e| PipelineError::new(ErrorKind::Validation, step, e))?;
        if index.dim() != self.config.embed_dim {
            return Err(PipelineError::new(
                ErrorKind::Validation,
                step,
                format!("index dimension {} differs from embed_dim {}", index.dim(), self.config.embed_dim),
            ));
        }
        let stats = match self.config.embedder.kind {
            EmbedderKind::Fallback => {
                let p = self.require(step, STATS_FILE, "embed")?;
                let s: CorpusStats = read_json(&p).map_err(Self::io(step))?;
                inputs.push(p);
                Some(s)
            }
            EmbedderKind::Http => None,
        };
        let graph: GraphFile = read_json(&graph_path).map_err(Self::io(step))?;
        let split: Split = read_json(&split_path).map_err(Self::io(step))?;
        let kg = KnowledgeGraph::from_parts(
            split.train.iter().cloned(),
            graph.triples.into_iter().filter(|t| split.train.contains(&t.target)),
        );
        let train_index = index.subset(&split.train);
        let embedder = self.embedder(stats).map_err(|e| PipelineError::new(ErrorKind::Validation, step, e))?;
        let by_id = cases.iter().map(|c| (c.id.clone(), c.clone())).collect();
        let loaded = Loaded {
            by_id,
            index,
            train_index,
            kg,
            split,
            embedder,
            factors: HashedBowEmbedder::new(self.config.embed_dim),
        };
        Ok((loaded, inputs))
    }

    fn context<'a>(&self, l: &'a Loaded, step: &str) -> Result<BuildContext<'a>, PipelineError> {
        BuildContext::new(
            &l.by_id,
            &l.train_index,
            &l.kg,
            l.embedder.as_ref(),
            Some(&l.index),
            &l.factors,
            self.config.choices,
            self.config.token_budget,
        )
        .map_err(|e| PipelineError::new(ErrorKind::Validation, step, e))
    }

    fn build_all<F>(
        &self,
        step: &str,
        task: Task,
        ids: &[&CaseId],
        ctx: &BuildContext<'_>,
        build: F,
    ) -> Result<(Vec<PromptInstance>, Vec<SkippedInstance>), PipelineError>
    where
        F: Fn(&ProcessedCase) -> Result<PromptInstance, BuildError> + Sync,
    {
        let results: Vec<_> = self.pool(step)?.install(|| {
            ids.par_iter()
                .map(|id| ctx.case(id).and_then(&build))
                .collect()
        });
        let mut built = Vec::new();
        let mut skipped = Vec::new();
        for (id, r) in ids.iter().zip(results) {
            match r {
                Ok(i) => built.push(i),
                Err(e) => skipped.push(SkippedInstance { task, case: (*id).clone(), reason: e.to_string() }),
            }
        }
        Ok((built, skipped))
    }

    /// Training instances for the three tasks and their shuffled union.
    pub fn gen_train(&self) -> Result<StepOutcome, PipelineError> {
        const STEP: &str = "gen-train";
        let (loaded, inputs) = self.load(STEP)?;
        let ctx = self.context(&loaded, STEP)?;
        let seed = self.config.seed;
        let train: Vec<&CaseId> = loaded.split.train.iter().collect();
        let mode = self.config.ljp_mode;
        let (scr, mut skipped) = self.build_all(STEP, Task::Scr, &train, &ctx, |c| {
            build_scr_instance(&ctx, c, Phase::Train, instance_seed(seed, Task::Scr, Phase::Train, &c.id, ""))
        })?;
        let (pcr, s) = self.build_all(STEP, Task::Pcr, &train, &ctx, |c| {
            build_pcr_instance(&ctx, c, Phase::Train, 1, instance_seed(seed, Task::Pcr, Phase::Train, &c.id, ""))
        })?;
        skipped.extend(s);
        let (ljp, s) = self.build_all(STEP, Task::Ljp, &train, &ctx, |c| {
            build_ljp_instance(&ctx, c, Phase::Train, mode, instance_seed(seed, Task::Ljp, Phase::Train, &c.id, mode.name()))
        })?;
        skipped.extend(s);
        if scr.is_empty() || pcr.is_empty() || ljp.is_empty() {
            return Err(PipelineError::new(
                ErrorKind::Infeasible,
                STEP,
                format!("no buildable training instances for at least one task ({} skipped)", skipped.len()),
            ));
        }
        let counts = (scr.len(), pcr.len(), ljp.len());
        let mut outputs = Vec::new();
        for (name, set) in [("scr", &scr), ("pcr", &pcr), ("ljp", &ljp)] {
            let path = self.out(&format!("train/{name}.jsonl"));
            write_jsonl(&path, set).map_err(Self::io(STEP))?;
            outputs.push(path);
        }
        let combined_seed = derive_seed(seed, &["combined"]);
        let combined = assemble_combined(scr, pcr, ljp, combined_seed)
            .map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?;
        let path = self.out("train/combined.jsonl");
        write_jsonl(&path, &combined).map_err(Self::io(STEP))?;
        outputs.push(path);
        let report_path = self.out("reports/gen_train.json");
        let max_tokens = combined.iter().map(|i| i.token_estimate).max().unwrap_or(0);
        let report = serde_json::json!({
            "scr": counts.0, "pcr": counts.1, "ljp": counts.2,
            "combined": combined.len(), "max_token_estimate": max_tokens, "skipped": skipped,
        });
        write_json(&report_path, &report).map_err(Self::io(STEP))?;
        outputs.push(report_path);
        let summary = format!(
            "SCR {} / PCR {} / LJP {} -> {} combined, {} skipped",
            counts.0,
            counts.1,
            counts.2,
            combined.len(),
            skipped.len()
        );
        self.finish(STEP, &inputs, outputs, self.seeds(&[("combined", combined_seed)]), 0, summary)
    }

    fn test_ids(l: &Loaded) -> Vec<&CaseId> {
        l.split.test.iter().collect()
    }

    fn respond(&self, step: &str, instances: &[PromptInstance]) -> Result<Vec<ResponseRecord>, PipelineError> {
        let backend =
            Backend::new(self.config.backend.clone()).map_err(|e| PipelineError::new(ErrorKind::Validation, step, e))?;
        let requests: Vec<_> = instances.iter().map(PromptInstance::request).collect();
        let completions = backend
            .complete_batch(&requests, self.config.jobs)
            .map_err(|e| PipelineError::new(ErrorKind::Validation, step, e))?;
        Ok(instances
            .iter()
            .zip(completions)
            .map(|(i, c)| match c {
                Ok(c) => ResponseRecord { input_case: i.input_case.clone(), text: Some(c.text), error: None },
                Err(e) => ResponseRecord {
                    input_case: i.input_case.clone(),
                    text: None,
                    error: Some(e.to_string()),
                },
            })
            .collect())
    }

    /// Builds held-out instances for `task`, sends them to the backend and
    /// scores the answers. `mode` overrides the configured judgment mode.
    pub fn eval(&self, task: EvalTask, mode: Option<LjpMode>) -> Result<StepOutcome, PipelineError> {
        let step = match task {
            EvalTask::Scr => "eval scr",
            EvalTask::Pcr => "eval pcr",
            EvalTask::Ljp => "eval ljp",
        };
        let (loaded, inputs) = self.load(step)?;
        let ctx = self.context(&loaded, step)?;
        let seed = self.config.seed;
        let ids = Self::test_ids(&loaded);
        let mode = mode.unwrap_or(self.config.ljp_mode);
        let (dir, instances, skipped) = match task {
            EvalTask::Scr => {
                let (i, s) = self.build_all(step, Task::Scr, &ids, &ctx, |c| {
                    build_scr_instance(&ctx, c, Phase::Test, instance_seed(seed, Task::Scr, Phase::Test, &c.id, ""))
                })?;
                ("eval/scr".to_string(), i, s)
            }
            EvalTask::Pcr => {
                let mut all = Vec::new();
                let mut skipped = Vec::new();
                for k in K_SET {
                    let variant = format!("k{k}");
                    let (i, s) = self.build_all(step, Task::Pcr, &ids, &ctx, |c| {
                        let s = instance_seed(seed, Task::Pcr, Phase::Test, &c.id, &variant);
                        build_pcr_instance(&ctx, c, Phase::Test, k, s)
                    })?;
                    all.extend(i);
                    skipped.extend(s);
                }
                ("eval/pcr".to_string(), all, skipped)
            }
            EvalTask::Ljp => {
                let (i, s) = self.build_all(step, Task::Ljp, &ids, &ctx, |c| {
                    let s = instance_seed(seed, Task::Ljp, Phase::Test, &c.id, mode.name());
                    build_ljp_instance(&ctx, c, Phase::Test, mode, s)
                })?;
                (format!("eval/ljp_{}", mode.name()), i, s)
            }
        };
        if instances.is_empty() {
            return Err(PipelineError::new(
                ErrorKind::Infeasible,
                step,
                format!("no buildable test instances ({} skipped)", skipped.len()),
            ));
        }
        let responses = self.respond(step, &instances)?;
        let texts: Vec<Option<String>> = responses.iter().map(|r| r.text.clone()).collect();
        let failures = responses.iter().filter(|r| r.error.is_some()).count();

        let mut outputs = Vec::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), PipelineError> {
            let path = self.out(&format!("{dir}/{name}"));
            write_atomic(&path, &bytes).map_err(Self::io(step))?;
            outputs.push(path);
            Ok(())
        };
        put("instances.jsonl", crate::io::to_jsonl(&instances))?;
        put("responses.jsonl", crate::io::to_jsonl(&responses))?;
        put("skipped.json", pretty(&skipped))?;
        let scored = |e: crate::eval::ScoreError| PipelineError::new(ErrorKind::Validation, step, e);
        let (table, csv, json) = match task {
            EvalTask::Ljp => {
                let report = score_judgment(&instances, &texts).map_err(scored)?;
                (judgment_table(&[report.clone()]), judgment_csv(&[report.clone()]), pretty(&report))
            }
            _ => {
                let report = score_retrieval(&instances, &texts).map_err(scored)?;
                (retrieval_table(&[report.clone()]), retrieval_csv(&[report.clone()]), pretty(&report))
            }
        };
        put("report.json", json)?;
        put("report.txt", table.clone().into_bytes())?;
        put("report.csv", csv.into_bytes())?;
        let code = if failures == 0 { 0 } else { ErrorKind::Backend.exit_code() };
        let backend_seed = self.config.backend.seed.unwrap_or_default();
        let mut summary = table;
        if failures > 0 {
            summary.push_str(&format!("{failures} backend failure(s), scored as not-found\n"));
        }
        self.finish(step, &inputs, outputs, self.seeds(&[("backend", backend_seed)]), code, summary)
    }

    /// Retrieval metrics as the number of choices varies.
    pub fn sweep(&self) -> Result<StepOutcome, PipelineError> {
        const STEP: &str = "sweep";
        let (loaded, inputs) = self.load(STEP)?;
        let ctx = self.context(&loaded, STEP)?;
        let backend =
            Backend::new(self.config.backend.clone()).map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?;
        let test: Vec<&ProcessedCase> = Self::test_ids(&loaded).into_iter().map(|id| &loaded.by_id[id]).collect();
        let mut sweep = self.config.sweep.clone();
        sweep.parallelism = self.config.jobs;
        let sweep_seed = derive_seed(self.config.seed, &["sweep", &sweep.seed.to_string()]);
        sweep.seed = sweep_seed;
        let rows = choice_size_sweep(&ctx, &test, &backend, &sweep).map_err(|e| {
            let kind = match e {
                crate::eval::SweepError::Backend(_) => ErrorKind::Backend,
                _ => ErrorKind::Validation,
            };
            PipelineError::new(kind, STEP, e)
        })?;
        let mut outputs = Vec::new();
        for (name, bytes) in [
            ("sweep/sweep.json", pretty(&rows)),
            ("sweep/sweep.txt", sweep_table(&rows).into_bytes()),
            ("sweep/sweep.csv", sweep_csv(&rows).into_bytes()),
        ] {
            let path = self.out(name);
            write_atomic(&path, &bytes).map_err(Self::io(STEP))?;
            outputs.push(path);
        }
        let seeds = self.seeds(&[("sweep", sweep_seed), ("backend", self.config.backend.seed.unwrap_or_default())]);
        self.finish(STEP, &inputs, outputs, seeds, 0, sweep_table(&rows))
    }

    /// Every step from ingest through the three evaluations.
    pub fn run_all(&self) -> Result<Vec<StepOutcome>, PipelineError> {
        let mut out = vec![self.ingest()?, self.preprocess()?, self.embed()?, self.build_kg()?, self.split()?];
        out.push(self.gen_train()?);
        for task in [EvalTask::Scr, EvalTask::Pcr, EvalTask::Ljp] {
            out.push(self.eval(task, None)?);
        }
        Ok(out)
    }
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serialisable report");
    bytes.push(b'\n');
    bytes
}

/// Writes a synthetic corpus to `path` and its planted pairs next to it.
pub fn make_synthetic(config: &SyntheticConfig, path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    const STEP: &str = "make-synthetic";
    let corpus = generate(config).map_err(|e| PipelineError::new(ErrorKind::Validation, STEP, e))?;
    write_jsonl(path, &corpus.cases).map_err(Pipeline::io(STEP))?;
    let planted = path.with_extension("planted.json");
    write_json(&planted, &corpus.planted).map_err(Pipeline::io(STEP))?;
    Ok(vec![path.to_path_buf(), planted])
}
