use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RetrievalReport, RetrievalTally, ScoreError, K_SET};
use crate::backend::{Backend, BackendError};
use crate::corpus::ProcessedCase;
use crate::dataset::{
    build_pcr_instance, build_scr_instance, instance_seed, BuildContext, BuildError, Phase, PromptInstance, Task,
    MAX_CHOICES, MIN_CHOICES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    /// Instances per (task, size). Held-out cases are cycled with fresh
    /// permutation seeds until the count is reached; precedent instances
    /// are divided evenly over k = 1, 3, 5.
    pub n_per_size: usize,
    pub seed: u64,
    /// Worker count; never affects results, so it is not serialised.
    #[serde(skip)]
    pub parallelism: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { sizes: (MIN_CHOICES..=MAX_CHOICES).collect(), n_per_size: 1000, seed: 0, parallelism: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: Task,
    pub choices: usize,
    pub report: Option<RetrievalReport>,
    pub skipped: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn build(
    ctx: &BuildContext<'_>,
    task: Task,
    case: &ProcessedCase,
    k: usize,
    variant: &str,
    seed: u64,
) -> Result<PromptInstance, BuildError> {
    let s = instance_seed(seed, task, Phase::Test, &case.id, variant);
    match task {
        Task::Pcr => build_pcr_instance(ctx, case, Phase::Test, k, s),
        _ => build_scr_instance(ctx, case, Phase::Test, s),
    }
}

/// Cases that can host an instance of `task` with `k` ground truths.
fn feasible<'c>(ctx: &BuildContext<'_>, task: Task, k: usize, cases: &[&'c ProcessedCase], seed: u64) -> Vec<&'c ProcessedCase> {
    cases.iter().copied().filter(|c| build(ctx, task, c, k, "probe", seed).is_ok()).collect()
}

fn run_group(
    ctx: &BuildContext<'_>,
    backend: &Backend,
    task: Task,
    k: usize,
    cases: &[&ProcessedCase],
    count: usize,
    config: &SweepConfig,
) -> Result<RetrievalTally, SweepError> {
    let tag = match task {
        Task::Scr => 0,
        _ => k as u64,
    };
    let base = ((ctx.choices as u64) << 44) | (tag << 40);
    let one = |j: usize| -> Result<RetrievalTally, SweepError> {
        let case = cases[j % cases.len()];
        let variant = format!("c{}/k{k}/r{}", ctx.choices, j / cases.len());
        let instance = build(ctx, task, case, k, &variant, config.seed)?;
        let response = backend.complete(&instance.request(), base | j as u64).ok().map(|c| c.text);
        let mut tally = RetrievalTally::default();
        tally.record(&instance, response.as_deref())?;
        Ok(tally)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| BackendError::Config(e.to_string()))?;
    pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(one)
            .try_reduce(RetrievalTally::default, |a, b| Ok(a.merge(b)))
    })
}

/// Rebuilds similar-case and precedent instances at each choice count and
/// scores `backend` on them. Rows come out task-major, sizes ascending; a
/// size no held-out case can support is reported as skipped.
pub fn choice_size_sweep(
    ctx: &BuildContext<'_>,
    test_cases: &[&ProcessedCase],
    backend: &Backend,
    config: &SweepConfig,
) -> Result<Vec<SweepRow>, SweepError> {
    let mut rows = Vec::new();
    for task in [Task::Scr, Task::Pcr] {
        for &size in &config.sizes {
            let sized = match ctx.with_choices(size) {
                Ok(c) => c,
                Err(e) => {
                    rows.push(SweepRow { task, choices: size, report: None, skipped: Some(e.to_string()) });
                    continue;
                }
            };
            let groups: Vec<usize> = match task {
                Task::Pcr => K_SET.to_vec(),
                _ => vec![1],
            };
            let share = |g: usize| config.n_per_size / groups.len() + usize::from(g < config.n_per_size % groups.len());
            let mut tally = RetrievalTally::default();
            let mut skipped = None;
            for (g, &k) in groups.iter().enumerate() {
                let cases = feasible(&sized, task, k, test_cases, config.seed);
                if cases.is_empty() {
                    skipped = Some(format!("no held-out case supports {size} choices with k = {k}"));
                    break;
                }
                tally = tally.merge(run_group(&sized, backend, task, k, &cases, share(g), config)?);
            }
            rows.push(match skipped {
                Some(reason) => SweepRow { task, choices: size, report: None, skipped: Some(reason) },
                None => SweepRow { task, choices: size, report: Some(tally.report(task)), skipped: None },
            });
        }
    }
    Ok(rows)
}
