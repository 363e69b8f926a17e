use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{CaseId, ProcessedCase, Verdict};
use crate::seed::derive_seed;

fn default_min_precedents() -> usize {
    5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    #[serde(default = "default_min_precedents")]
    pub min_precedents: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub balance_classes: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.5, min_precedents: 5, seed: 0, balance_classes: true }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("train_fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("cannot balance training classes: {class} has only {available} eligible case(s)")]
    InfeasibleBalance { class: String, available: usize },
    #[error("no held-out case has {min} precedents inside the training set ({unsatisfiable} candidate(s) fail)")]
    InfeasiblePrecedents { min: usize, unsatisfiable: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub id: CaseId,
    pub precedents: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub total_cases: usize,
    pub eligible: usize,
    /// Cases with fewer than `min_precedents` precedents overall.
    pub excluded_min_precedents: Vec<Shortfall>,
    /// Held-out cases with too few precedents inside the training set.
    pub excluded_train_precedents: Vec<Shortfall>,
    pub quota_per_class: usize,
    pub train_histogram: BTreeMap<String, usize>,
    pub test_histogram: BTreeMap<String, usize>,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: BTreeSet<CaseId>,
    pub test: BTreeSet<CaseId>,
    pub report: SplitReport,
}

/// Splits a corpus under three constraints:
///
/// 1. every kept case has at least `min_precedents` precedents;
/// 2. every test case has at least `min_precedents` precedents in train;
/// 3. the training verdict histogram is exactly balanced over the four
///    outcomes (`Unsure` cases never train).
///
/// Within each outcome, the most-cited cases are taken into training first
/// (ties broken by a seeded hash, then id), which maximises how many
/// held-out cases satisfy constraint 2.
pub fn split_corpus(cases: &[ProcessedCase], config: &SplitConfig) -> Result<Split, SplitError> {
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(SplitError::BadFraction(config.train_fraction));
    }
    let mut report = SplitReport { total_cases: cases.len(), ..Default::default() };
    let distinct = |c: &ProcessedCase| c.precedent_ids.iter().collect::<BTreeSet<_>>().len();

    let mut eligible: Vec<&ProcessedCase> = Vec::new();
    for case in cases {
        let n = distinct(case);
        if n >= config.min_precedents {
            eligible.push(case);
        } else {
            report.excluded_min_precedents.push(Shortfall { id: case.id.clone(), precedents: n });
        }
    }
    report.eligible = eligible.len();

    let eligible_ids: BTreeSet<&CaseId> = eligible.iter().map(|c| &c.id).collect();
    let mut cited: HashMap<&CaseId, usize> = HashMap::new();
    for case in &eligible {
        for p in case.precedent_ids.iter().collect::<BTreeSet<_>>() {
            if eligible_ids.contains(p) {
                *cited.entry(p).or_default() += 1;
            }
        }
    }
    let priority = |c: &&ProcessedCase| {
        let in_degree = cited.get(&c.id).copied().unwrap_or(0);
        (std::cmp::Reverse(in_degree), derive_seed(config.seed, &["split", c.id.as_str()]), c.id.clone())
    };

    let target = (config.train_fraction * eligible.len() as f64).floor() as usize;
    let mut train: BTreeSet<CaseId> = BTreeSet::new();
    if config.balance_classes {
        let mut pools: BTreeMap<Verdict, Vec<&ProcessedCase>> =
            Verdict::OUTCOMES.iter().map(|v| (*v, Vec::new())).collect();
        for case in &eligible {
            if let Some(pool) = pools.get_mut(&case.verdict) {
                pool.push(case);
            }
        }
        let (limiting, smallest) = pools
            .iter()
            .map(|(v, p)| (*v, p.len()))
            .min_by_key(|(_, n)| *n)
            .expect("four outcome pools");
        let quota = (target / 4).min(smallest);
        if quota == 0 {
            return Err(SplitError::InfeasibleBalance { class: limiting.label().to_string(), available: smallest });
        }
        report.quota_per_class = quota;
        for pool in pools.values_mut() {
            pool.sort_by_key(priority);
            train.extend(pool.iter().take(quota).map(|c| c.id.clone()));
        }
    } else {
        let mut pool: Vec<&ProcessedCase> = eligible.iter().copied().filter(|c| c.verdict.is_outcome()).collect();
        pool.sort_by_key(priority);
        train.extend(pool.iter().take(target).map(|c| c.id.clone()));
    }

    let mut test = BTreeSet::new();
    for case in &eligible {
        if train.contains(&case.id) {
            continue;
        }
        let inside = case.precedent_ids.iter().collect::<BTreeSet<_>>().into_iter().filter(|p| train.contains(*p)).count();
        if inside >= config.min_precedents {
            test.insert(case.id.clone());
        } else {
            report.excluded_train_precedents.push(Shortfall { id: case.id.clone(), precedents: inside });
        }
    }
    if test.is_empty() && !report.excluded_train_precedents.is_empty() {
        return Err(SplitError::InfeasiblePrecedents {
            min: config.min_precedents,
            unsatisfiable: report.excluded_train_precedents.len(),
        });
    }

    for case in cases {
        let hist = if train.contains(&case.id) {
            &mut report.train_histogram
        } else if test.contains(&case.id) {
            &mut report.test_histogram
        } else {
            continue;
        };
        *hist.entry(case.verdict.label().to_string()).or_default() += 1;
    }
    report.train_size = train.len();
    report.test_size = test.len();
    Ok(Split { train, test, report })
}
