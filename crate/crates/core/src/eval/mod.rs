//! Response matching and the retrieval, judgment and primary-factor metrics.

mod sweep;
mod table;

pub use sweep::{choice_size_sweep, SweepConfig, SweepError, SweepRow};
pub use table::{judgment_csv, judgment_table, retrieval_csv, retrieval_table, sweep_csv, sweep_table};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{normalize_verdict, CaseId, Verdict};
use crate::dataset::{Choice, LjpMode, Phase, PromptInstance, Task};
use crate::graph::PrimaryFactor;

/// The k values reported for retrieval tasks.
pub const K_SET: [usize; 3] = [1, 3, 5];
const RESPONSE_MARKER: &str = "### Response:";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("{instances} instance(s) but {responses} response(s)")]
    Misaligned { instances: usize, responses: usize },
    #[error("instance for {case} is a {found} instance, expected {expected}")]
    WrongTask { case: CaseId, found: Task, expected: String },
    #[error("judgment instance for {0} has no label")]
    MissingLabel(CaseId),
    #[error("choices share the normalised title {0:?}")]
    DuplicateTitles(String),
}

/// NFKC, lowercase, trim, drop trailing periods and commas, collapse
/// whitespace; repeated until nothing changes.
pub fn normalize_title(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let folded: String = current.nfkc().collect::<String>().to_lowercase();
        let trimmed = folded.trim().trim_end_matches(['.', ',']);
        let next = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
        if next == current {
            return next;
        }
        current = next;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: Option<usize>,
    pub matched_case: Option<CaseId>,
    pub not_found: bool,
}

impl MatchResult {
    fn none() -> Self {
        Self { matched: None, matched_case: None, not_found: true }
    }

    fn hit(choice: &Choice) -> Self {
        Self { matched: Some(choice.position), matched_case: Some(choice.case_id.clone()), not_found: false }
    }
}

fn strip_marker(response: &str) -> &str {
    let trimmed = response.trim_start();
    trimmed.strip_prefix(RESPONSE_MARKER).unwrap_or(trimmed)
}

fn answer_line(body: &str) -> Option<&str> {
    body.lines().find(|l| l.chars().any(char::is_alphabetic))
}

/// Maps a free-text answer onto one of `choices`.
///
/// The first line with a letter is compared against every normalised title.
/// Failing that, the answer matches if exactly one title occurs inside the
/// whole normalised response; none or several is not-found.
pub fn match_response(response: &str, choices: &[Choice]) -> Result<MatchResult, ScoreError> {
    let titles: Vec<String> = choices.iter().map(|c| normalize_title(&c.title)).collect();
    let mut seen = BTreeSet::new();
    for t in &titles {
        if !seen.insert(t.as_str()) {
            return Err(ScoreError::DuplicateTitles(t.clone()));
        }
    }
    let body = strip_marker(response);
    let Some(line) = answer_line(body) else {
        return Ok(MatchResult::none());
    };
    let line = normalize_title(line);
    if let Some(i) = titles.iter().position(|t| *t == line) {
        return Ok(MatchResult::hit(&choices[i]));
    }
    let full = normalize_title(body);
    let mut hits = titles.iter().enumerate().filter(|(_, t)| !t.is_empty() && full.contains(t.as_str()));
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Ok(MatchResult::hit(&choices[i])),
        _ => Ok(MatchResult::none()),
    }
}

fn check_aligned<T>(instances: &[PromptInstance], responses: &[T]) -> Result<(), ScoreError> {
    if instances.len() != responses.len() {
        return Err(ScoreError::Misaligned { instances: instances.len(), responses: responses.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub task: Task,
    pub n: usize,
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub not_found_rate: f64,
    pub not_found: usize,
    /// Hits per k in [`K_SET`] order.
    pub hits: [usize; 3],
    /// Denominator per k; differs from `n` when precedent instances were
    /// built per ground-truth count.
    pub denominators: [usize; 3],
    /// Responses that never arrived; scored as not-found.
    pub backend_failures: usize,
}

impl RetrievalReport {
    pub fn top(&self, k: usize) -> Option<f64> {
        K_SET.iter().position(|x| *x == k).map(|i| [self.top1, self.top3, self.top5][i])
    }
}

/// Integer counts behind a [`RetrievalReport`]. Partial tallies from
/// disjoint instance sets merge by addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetrievalTally {
    pub n: usize,
    pub not_found: usize,
    pub backend_failures: usize,
    /// Similar-case hits per k.
    rank_hits: [usize; 3],
    /// Precedent instances keyed by ground-truth count: (hits, total).
    truth_groups: BTreeMap<usize, (usize, usize)>,
}

impl RetrievalTally {
    /// Adds one scored instance. `response` is `None` when the backend failed.
    pub fn record(&mut self, instance: &PromptInstance, response: Option<&str>) -> Result<(), ScoreError> {
        let matched = match response {
            Some(text) => match_response(text, &instance.choices)?,
            None => {
                self.backend_failures += 1;
                MatchResult::none()
            }
        };
        self.n += 1;
        let choice = matched.matched.and_then(|p| instance.choices.iter().find(|c| c.position == p));
        if choice.is_none() {
            self.not_found += 1;
        }
        match instance.task {
            Task::Scr => {
                let offset = usize::from(instance.phase == Phase::Train);
                let rank = choice.and_then(|c| c.truth_rank).map(|r| r.saturating_sub(offset));
                for (slot, k) in K_SET.iter().enumerate() {
                    if rank.is_some_and(|r| r < *k) {
                        self.rank_hits[slot] += 1;
                    }
                }
            }
            Task::Pcr => {
                let group = self.truth_groups.entry(instance.truth_k.unwrap_or(1)).or_default();
                group.1 += 1;
                if choice.is_some_and(|c| c.is_ground_truth) {
                    group.0 += 1;
                }
            }
            Task::Ljp => {
                return Err(ScoreError::WrongTask {
                    case: instance.input_case.clone(),
                    found: Task::Ljp,
                    expected: "SCR or PCR".into(),
                })
            }
        }
        Ok(())
    }

    pub fn merge(mut self, other: RetrievalTally) -> RetrievalTally {
        self.n += other.n;
        self.not_found += other.not_found;
        self.backend_failures += other.backend_failures;
        for i in 0..3 {
            self.rank_hits[i] += other.rank_hits[i];
        }
        for (k, (h, t)) in other.truth_groups {
            let g = self.truth_groups.entry(k).or_default();
            g.0 += h;
            g.1 += t;
        }
        self
    }

    /// For precedent instances each k column is scored on the instances
    /// built with k ground truths; when a set has no such instances the
    /// column falls back to every instance in the set.
    pub fn report(&self, task: Task) -> RetrievalReport {
        let mut hits = [0; 3];
        let mut denominators = [self.n; 3];
        match task {
            Task::Pcr => {
                let pooled = self.truth_groups.values().fold((0, 0), |a, g| (a.0 + g.0, a.1 + g.1));
                for (slot, k) in K_SET.iter().enumerate() {
                    let (h, t) = self.truth_groups.get(k).copied().unwrap_or(pooled);
                    hits[slot] = h;
                    denominators[slot] = t;
                }
            }
            _ => hits = self.rank_hits,
        }
        let rate = |h: usize, d: usize| if d == 0 { 0.0 } else { h as f64 / d as f64 };
        RetrievalReport {
            task,
            n: self.n,
            top1: rate(hits[0], denominators[0]),
            top3: rate(hits[1], denominators[1]),
            top5: rate(hits[2], denominators[2]),
            not_found_rate: rate(self.not_found, self.n),
            not_found: self.not_found,
            hits,
            denominators,
            backend_failures: self.backend_failures,
        }
    }
}

fn common_task(instances: &[PromptInstance], allowed: &[Task]) -> Result<Task, ScoreError> {
    let task = instances.first().map(|i| i.task).unwrap_or(allowed[0]);
    for i in instances {
        if i.task != task || !allowed.contains(&i.task) {
            return Err(ScoreError::WrongTask {
                case: i.input_case.clone(),
                found: i.task,
                expected: allowed.iter().map(|t| t.name()).collect::<Vec<_>>().join(" or "),
            });
        }
    }
    Ok(task)
}

/// Top-k and not-found rates. Not-found instances stay in every denominator.
pub fn score_retrieval(instances: &[PromptInstance], responses: &[Option<String>]) -> Result<RetrievalReport, ScoreError> {
    check_aligned(instances, responses)?;
    let task = common_task(instances, &[Task::Scr, Task::Pcr])?;
    let mut tally = RetrievalTally::default();
    for (instance, response) in instances.iter().zip(responses) {
        tally.record(instance, response.as_deref())?;
    }
    Ok(tally.report(task))
}

/// Predicted column index in a confusion row; 4 is Invalid.
pub const INVALID_COLUMN: usize = 4;

/// Verdict read from a free-text answer, `None` when it maps to no outcome.
pub fn predicted_verdict(response: &str) -> Option<Verdict> {
    let body = strip_marker(response);
    normalize_verdict(body).ok().filter(|v| v.is_outcome())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentReport {
    /// `None` when the instances mix modes.
    pub mode: Option<LjpMode>,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Rows: true outcome in `Verdict::OUTCOMES` order. Columns: predicted
    /// outcome in the same order, then Invalid.
    pub confusion: [[usize; 5]; 4],
    pub backend_failures: usize,
}

/// Unweighted mean F1 over the outcomes present in the truth. A class never
/// predicted has precision 0; Invalid predictions only cost recall.
pub fn macro_f1(confusion: &[[usize; 5]; 4]) -> f64 {
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 0..4 {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        classes += 1;
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..4).map(|r| confusion[r][c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    if classes == 0 {
        0.0
    } else {
        sum / classes as f64
    }
}

pub fn score_judgment(instances: &[PromptInstance], responses: &[Option<String>]) -> Result<JudgmentReport, ScoreError> {
    check_aligned(instances, responses)?;
    common_task(instances, &[Task::Ljp])?;
    let mut confusion = [[0usize; 5]; 4];
    let mut failures = 0;
    let mut modes = BTreeSet::new();
    for (instance, response) in instances.iter().zip(responses) {
        let truth = instance
            .ljp_label
            .and_then(Verdict::outcome_index)
            .ok_or_else(|| ScoreError::MissingLabel(instance.input_case.clone()))?;
        modes.insert(instance.ljp_mode);
        if response.is_none() {
            failures += 1;
        }
        let column = response
            .as_deref()
            .and_then(predicted_verdict)
            .and_then(Verdict::outcome_index)
            .unwrap_or(INVALID_COLUMN);
        confusion[truth][column] += 1;
    }
    let n = instances.len();
    let correct: usize = (0..4).map(|c| confusion[c][c]).sum();
    Ok(JudgmentReport {
        mode: if modes.len() == 1 { modes.into_iter().next().flatten() } else { None },
        n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        macro_f1: macro_f1(&confusion),
        confusion,
        backend_failures: failures,
    })
}

/// Keyword table from answer reasoning to factor; earlier rows win.
pub const FACTOR_KEYWORDS: [(&[&str], PrimaryFactor); 6] = [
    (&["detail"], PrimaryFactor::CaseDetail),
    (&["court", "judge"], PrimaryFactor::Judge),
    (&["plaintiff"], PrimaryFactor::Plaintiffs),
    (&["defendant"], PrimaryFactor::Defendants),
    (&["date"], PrimaryFactor::Date),
    (&["title"], PrimaryFactor::Title),
];

/// Factor named by the reasoning that follows the title line.
pub fn parse_factor(response: &str) -> Option<PrimaryFactor> {
    let body = strip_marker(response);
    let mut lines = body.lines().skip_while(|l| !l.chars().any(char::is_alphabetic));
    lines.next()?;
    let reasoning = lines.collect::<Vec<_>>().join(" ").to_lowercase();
    FACTOR_KEYWORDS
        .iter()
        .find(|(words, _)| words.iter().any(|w| reasoning.contains(w)))
        .map(|(_, f)| *f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDistribution {
    pub n: usize,
    /// Share of all responses naming each factor.
    pub frequencies: BTreeMap<PrimaryFactor, f64>,
    pub unparsed_rate: f64,
}

pub fn factor_distribution<S: AsRef<str>>(responses: &[S]) -> FactorDistribution {
    let mut counts: BTreeMap<PrimaryFactor, usize> = PrimaryFactor::ALL.iter().map(|f| (*f, 0)).collect();
    let mut unparsed = 0;
    for r in responses {
        match parse_factor(r.as_ref()) {
            Some(f) => *counts.entry(f).or_default() += 1,
            None => unparsed += 1,
        }
    }
    let n = responses.len();
    let rate = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    FactorDistribution {
        n,
        frequencies: counts.into_iter().map(|(f, c)| (f, rate(c))).collect(),
        unparsed_rate: rate(unparsed),
    }
}
