use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use rand::seq::SliceRandom;

use super::{
    enforce_token_budget, BudgetError, Choice, IclExamples, LjpMode, Phase, PromptInstance, Task, MAX_CHOICES,
    MIN_CHOICES, PRECEDENT_REASON_PREFIX,
};
use crate::corpus::{render_case, CaseId, ProcessedCase};
use crate::embedding::{EmbedError, EmbeddingProvider, EmbeddingVector, IndexError, Neighbor, VectorIndex};
use crate::eval::normalize_title;
use crate::graph::{primary_factor, KnowledgeGraph};
use crate::seed::{derive_seed, rng, shuffle};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("choice count {0} is outside {MIN_CHOICES}..={MAX_CHOICES}")]
    ChoiceCount(usize),
    #[error("case {0} is not in the corpus")]
    UnknownCase(CaseId),
    #[error("training instance for {0} needs the case in the index")]
    NotIndexed(CaseId),
    #[error("test case {0} must not be in the index")]
    TestCaseIndexed(CaseId),
    #[error("case {id}: needs {needed} candidate(s), only {available} available")]
    InsufficientCandidates { id: CaseId, needed: usize, available: usize },
    #[error("case {id}: needs {needed} precedent(s) in the graph, has {available}")]
    NotEnoughPrecedents { id: CaseId, needed: usize, available: usize },
    #[error("case {0} has verdict Unsure and cannot be a judgment instance")]
    UnsureVerdict(CaseId),
    #[error("case {id}: choices share the normalised title {title:?}")]
    DuplicateTitles { id: CaseId, title: String },
    #[error("combined dataset input contains a {0} instance; all must be train-phase")]
    MixedPhase(String),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
}

/// Everything an instance builder reads. All of it is immutable; the only
/// interior state is a memo of neighbour rankings, which are pure functions
/// of the case.
pub struct BuildContext<'a> {
    pub cases: &'a HashMap<CaseId, ProcessedCase>,
    /// Training cases only.
    pub index: &'a VectorIndex,
    /// Precedent graph whose targets are restricted to training cases.
    pub kg: &'a KnowledgeGraph,
    /// Embeds query cases that have no stored vector.
    pub embedder: &'a dyn EmbeddingProvider,
    /// Stored vectors for cases outside `index` (e.g. held-out cases).
    pub vectors: Option<&'a VectorIndex>,
    /// Provider for per-factor similarities.
    pub factor_provider: &'a dyn EmbeddingProvider,
    pub choices: usize,
    pub token_budget: usize,
    rankings: RwLock<HashMap<CaseId, Arc<Vec<Neighbor>>>>,
}

impl<'a> BuildContext<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cases: &'a HashMap<CaseId, ProcessedCase>,
        index: &'a VectorIndex,
        kg: &'a KnowledgeGraph,
        embedder: &'a dyn EmbeddingProvider,
        vectors: Option<&'a VectorIndex>,
        factor_provider: &'a dyn EmbeddingProvider,
        choices: usize,
        token_budget: usize,
    ) -> Result<Self, BuildError> {
        if !(MIN_CHOICES..=MAX_CHOICES).contains(&choices) {
            return Err(BuildError::ChoiceCount(choices));
        }
        Ok(Self {
            cases,
            index,
            kg,
            embedder,
            vectors,
            factor_provider,
            choices,
            token_budget,
            rankings: RwLock::new(HashMap::new()),
        })
    }

    /// Same corpus, index and graph with a different choice count.
    pub fn with_choices(&self, choices: usize) -> Result<BuildContext<'a>, BuildError> {
        BuildContext::new(
            self.cases,
            self.index,
            self.kg,
            self.embedder,
            self.vectors,
            self.factor_provider,
            choices,
            self.token_budget,
        )
    }

    pub fn case(&self, id: &CaseId) -> Result<&'a ProcessedCase, BuildError> {
        self.cases.get(id).ok_or_else(|| BuildError::UnknownCase(id.clone()))
    }

    fn query_vector(&self, case: &ProcessedCase) -> Result<EmbeddingVector, BuildError> {
        if let Some(v) = self.index.get(&case.id) {
            return Ok(v);
        }
        if let Some(v) = self.vectors.and_then(|vs| vs.get(&case.id)) {
            return Ok(v);
        }
        Ok(self.embedder.embed(&render_case(case, false))?)
    }

    /// Neighbours of `case` in similarity order, never including the case
    /// itself. Deep enough for any choice count plus every precedent skip.
    fn ranking(&self, case: &ProcessedCase) -> Result<Arc<Vec<Neighbor>>, BuildError> {
        if let Some(hit) = self.rankings.read().expect("ranking cache").get(&case.id) {
            return Ok(hit.clone());
        }
        let exclude = self.index.contains(&case.id).then_some(&case.id);
        let available = self.index.len() - usize::from(exclude.is_some());
        let depth = (MAX_CHOICES + self.kg.precedent_count(&case.id)).min(available);
        let ranked = if depth == 0 {
            Vec::new()
        } else {
            self.index.top_k(&self.query_vector(case)?, depth, exclude)?
        };
        let ranked = Arc::new(ranked);
        self.rankings.write().expect("ranking cache").insert(case.id.clone(), ranked.clone());
        Ok(ranked)
    }

    fn choice(&self, id: &CaseId, is_ground_truth: bool, truth_rank: Option<usize>) -> Result<Choice, BuildError> {
        let case = self.case(id)?;
        Ok(Choice {
            position: 0,
            case_id: id.clone(),
            title: case.title.clone(),
            rendered: render_case(case, false),
            is_ground_truth,
            truth_rank,
        })
    }
}

/// Per-instance seed from the master seed and the instance's identity.
pub fn instance_seed(master: u64, task: Task, phase: Phase, case: &CaseId, variant: &str) -> u64 {
    derive_seed(master, &[task.name(), phase.name(), case.as_str(), variant])
}

fn place_choices(id: &CaseId, mut choices: Vec<Choice>, seed: u64) -> Result<Vec<Choice>, BuildError> {
    let mut seen = BTreeSet::new();
    for c in &choices {
        let title = normalize_title(&c.title);
        if !seen.insert(title.clone()) {
            return Err(BuildError::DuplicateTitles { id: id.clone(), title });
        }
    }
    shuffle(&mut choices, derive_seed(seed, &["shuffle"]));
    for (i, c) in choices.iter_mut().enumerate() {
        c.position = i + 1;
    }
    Ok(choices)
}

fn finish(
    task: Task,
    phase: Phase,
    case: &ProcessedCase,
    choices: Vec<Choice>,
    expected_output: String,
    seed: u64,
) -> PromptInstance {
    let mut instance = PromptInstance {
        task,
        phase,
        input_case: case.id.clone(),
        instruction_text: String::new(),
        expected_output,
        choices,
        permutation_seed: seed,
        token_estimate: 0,
        input_text: render_case(case, false),
        ljp_label: None,
        ljp_mode: None,
        icl_examples: None,
        truth_k: None,
        truncated: Vec::new(),
    };
    instance.refresh_text();
    instance
}

/// Similar-case retrieval instance.
///
/// Training: the case is in the index and is excluded from its own query;
/// ranks 1..=C become the choices and rank 1 is the answer. Testing: the
/// case is not indexed; ranks 0..C are the choices, each tagged with its
/// rank for top-k scoring, and rank 0 is the expected answer.
pub fn build_scr_instance(
    ctx: &BuildContext<'_>,
    case: &ProcessedCase,
    phase: Phase,
    seed: u64,
) -> Result<PromptInstance, BuildError> {
    let indexed = ctx.index.contains(&case.id);
    match phase {
        Phase::Train if !indexed => return Err(BuildError::NotIndexed(case.id.clone())),
        Phase::Test if indexed => return Err(BuildError::TestCaseIndexed(case.id.clone())),
        _ => {}
    }
    let ranking = ctx.ranking(case)?;
    if ranking.len() < ctx.choices {
        return Err(BuildError::InsufficientCandidates {
            id: case.id.clone(),
            needed: ctx.choices,
            available: ranking.len(),
        });
    }
    let first = ranking[0].rank;
    let choices = ranking[..ctx.choices]
        .iter()
        .map(|n| ctx.choice(&n.id, n.rank == first, Some(n.rank)))
        .collect::<Result<Vec<_>, _>>()?;
    let answer = format!("{}.", ctx.case(&ranking[0].id)?.title);
    let choices = place_choices(&case.id, choices, seed)?;
    let instance = finish(Task::Scr, phase, case, choices, answer, seed);
    Ok(enforce_token_budget(instance, ctx.token_budget)?)
}

/// Precedent recommendation instance with `k` ground truths (always 1 in
/// training). Ground truths are a seeded draw from the case's precedents in
/// the graph; the remaining slots take the most similar cases that are not
/// precedents of the input case.
pub fn build_pcr_instance(
    ctx: &BuildContext<'_>,
    case: &ProcessedCase,
    phase: Phase,
    k: usize,
    seed: u64,
) -> Result<PromptInstance, BuildError> {
    let k = if phase == Phase::Train { 1 } else { k };
    if k == 0 || k >= ctx.choices {
        return Err(BuildError::InsufficientCandidates { id: case.id.clone(), needed: k, available: ctx.choices - 1 });
    }
    let precedents = ctx.kg.precedents_of(&case.id);
    if precedents.len() < k {
        return Err(BuildError::NotEnoughPrecedents { id: case.id.clone(), needed: k, available: precedents.len() });
    }
    let mut drawn: Vec<&CaseId> = precedents.iter().collect();
    drawn.shuffle(&mut rng(derive_seed(seed, &["precedents"])));
    drawn.truncate(k);

    let ranking = ctx.ranking(case)?;
    let distractors: Vec<&Neighbor> = ranking
        .iter()
        .filter(|n| n.id != case.id && !precedents.contains(&n.id))
        .take(ctx.choices - k)
        .collect();
    if distractors.len() < ctx.choices - k {
        return Err(BuildError::InsufficientCandidates {
            id: case.id.clone(),
            needed: ctx.choices - k,
            available: distractors.len(),
        });
    }

    let mut choices = Vec::with_capacity(ctx.choices);
    for (i, id) in drawn.iter().enumerate() {
        choices.push(ctx.choice(id, true, Some(i + 1))?);
    }
    for n in distractors {
        choices.push(ctx.choice(&n.id, false, None)?);
    }
    let answer_case = ctx.case(drawn[0])?;
    let factor = primary_factor(case, answer_case, ctx.factor_provider).primary;
    let answer = format!("{}\n{PRECEDENT_REASON_PREFIX}{}", answer_case.title, factor.reason());
    let choices = place_choices(&case.id, choices, seed)?;
    let mut instance = finish(Task::Pcr, phase, case, choices, answer, seed);
    instance.truth_k = Some(k);
    Ok(enforce_token_budget(instance, ctx.token_budget)?)
}

/// Judgment prediction instance. Few-shot prompts prepend the most similar
/// indexed case and one seeded-random precedent, both rendered with their
/// verdicts.
pub fn build_ljp_instance(
    ctx: &BuildContext<'_>,
    case: &ProcessedCase,
    phase: Phase,
    mode: LjpMode,
    seed: u64,
) -> Result<PromptInstance, BuildError> {
    if !case.verdict.is_outcome() {
        return Err(BuildError::UnsureVerdict(case.id.clone()));
    }
    let icl = match mode {
        LjpMode::ZeroShot => None,
        LjpMode::FewShot => {
            let ranking = ctx.ranking(case)?;
            let similar = ranking.first().ok_or_else(|| BuildError::InsufficientCandidates {
                id: case.id.clone(),
                needed: 1,
                available: 0,
            })?;
            let precedents: Vec<CaseId> = ctx.kg.precedents_of(&case.id).into_iter().collect();
            let precedent = precedents.choose(&mut rng(derive_seed(seed, &["icl"]))).ok_or_else(|| {
                BuildError::NotEnoughPrecedents { id: case.id.clone(), needed: 1, available: 0 }
            })?;
            Some(IclExamples {
                similar: similar.id.clone(),
                precedent: precedent.clone(),
                similar_text: render_case(ctx.case(&similar.id)?, true),
                precedent_text: render_case(ctx.case(precedent)?, true),
            })
        }
    };
    let mut instance = finish(Task::Ljp, phase, case, Vec::new(), case.verdict.label().to_string(), seed);
    instance.ljp_label = Some(case.verdict);
    instance.ljp_mode = Some(mode);
    instance.icl_examples = icl;
    instance.refresh_text();
    Ok(enforce_token_budget(instance, ctx.token_budget)?)
}

/// Concatenates the three training sets and shuffles them with `seed`.
pub fn assemble_combined(
    scr: Vec<PromptInstance>,
    pcr: Vec<PromptInstance>,
    ljp: Vec<PromptInstance>,
    seed: u64,
) -> Result<Vec<PromptInstance>, BuildError> {
    let mut all: Vec<PromptInstance> = scr.into_iter().chain(pcr).chain(ljp).collect();
    if let Some(bad) = all.iter().find(|i| i.phase != Phase::Train) {
        return Err(BuildError::MixedPhase(bad.phase.name().to_string()));
    }
    shuffle(&mut all, derive_seed(seed, &["combined"]));
    Ok(all)
}
