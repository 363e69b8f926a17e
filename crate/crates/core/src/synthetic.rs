//! Deterministic synthetic corpora with known precedent structure.
//!
//! A fraction of the cases are landmarks that cite each other; every other
//! case cites landmarks only, so the most-cited cases can form a balanced
//! training set that covers every held-out case's precedents. Each case
//! (except the first) shares one feature with an earlier precedent, its
//! "planted" factor, while every other feature is drawn fresh, so the
//! primary factor of that pair is known in advance. A shared case detail
//! means the detail is drawn from the precedent's topic vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{first_sentences, CaseId, ProcessedCase, RawCase, Verdict};
use crate::embedding::{HashedBowEmbedder, DEFAULT_DIM};
use crate::graph::{primary_factor, PrimaryFactor};
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub cases: usize,
    pub landmark_fraction: f64,
    pub min_precedents: usize,
    pub max_precedents: usize,
    /// Share of planted pairs per factor; must sum to 1. Title is not supported.
    pub factor_mixture: BTreeMap<PrimaryFactor, f64>,
    pub topics: usize,
    /// Sentences kept by the summariser the corpus is meant for.
    pub summary_sentences: usize,
    /// Dimension of the factor embedder the planted pairs are checked against.
    pub factor_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            cases: 400,
            landmark_fraction: 0.4,
            min_precedents: 6,
            max_precedents: 9,
            factor_mixture: default_mixture(),
            topics: 40,
            summary_sentences: 4,
            factor_dim: DEFAULT_DIM,
            seed: 7,
        }
    }
}

pub fn default_mixture() -> BTreeMap<PrimaryFactor, f64> {
    BTreeMap::from([
        (PrimaryFactor::CaseDetail, 0.783),
        (PrimaryFactor::Judge, 0.149),
        (PrimaryFactor::Defendants, 0.041),
        (PrimaryFactor::Plaintiffs, 0.027),
    ])
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub case: CaseId,
    pub precedent: CaseId,
    pub factor: PrimaryFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub cases: Vec<RawCase>,
    pub planted: Vec<PlantedPair>,
}

const ONSETS: [&str; 16] = ["b", "br", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ae"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "x", "m"];
/// Substrings that would read as a verdict or a factor keyword.
const RESERVED: [&str; 11] =
    ["plaintiff", "defendant", "settle", "dismiss", "unsure", "detail", "court", "judge", "date", "title", "win"];

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(VOWELS.choose(&mut self.rng).unwrap());
                w.push_str(CODAS.choose(&mut self.rng).unwrap());
            }
            if !RESERVED.iter().any(|r| w.contains(r)) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn name(&mut self) -> String {
        let first = capitalize(&self.fresh(2));
        let last = capitalize(&self.fresh(3));
        format!("{first} {last}")
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn surname(name: &str) -> &str {
    name.rsplit(' ').next().unwrap_or(name)
}

/// Largest-remainder allocation of `n` slots over the mixture.
fn allocate(mixture: &BTreeMap<PrimaryFactor, f64>, n: usize) -> Vec<PrimaryFactor> {
    let mut counts: Vec<(PrimaryFactor, usize, f64)> = mixture
        .iter()
        .map(|(f, p)| {
            let exact = p * n as f64;
            (*f, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut left = n - counts.iter().map(|c| c.1).sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|a, b| counts[*b].2.total_cmp(&counts[*a].2).then(a.cmp(b)));
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i].1 += 1;
        left -= 1;
    }
    counts.into_iter().flat_map(|(f, c, _)| std::iter::repeat_n(f, c)).collect()
}

const MAX_ATTEMPTS: usize = 64;

/// The case as the extractive preprocessor would summarise it.
fn as_processed(raw: &RawCase, config: &SyntheticConfig) -> ProcessedCase {
    let summary = first_sentences(&raw.case_detail, config.summary_sentences);
    ProcessedCase::from_raw(raw, summary, raw.verdict.unwrap_or(Verdict::Unsure))
}

fn validate(config: &SyntheticConfig) -> Result<usize, SyntheticError> {
    let bad = |m: &str| Err(SyntheticError::Config(m.to_string()));
    if config.cases < 2 {
        return bad("need at least two cases");
    }
    if config.min_precedents == 0 || config.min_precedents > config.max_precedents {
        return bad("precedent range must satisfy 1 <= min <= max");
    }
    if !(config.landmark_fraction > 0.0 && config.landmark_fraction <= 1.0) {
        return bad("landmark_fraction must lie in (0, 1]");
    }
    let landmarks = ((config.landmark_fraction * config.cases as f64).round() as usize).clamp(1, config.cases);
    if landmarks <= config.max_precedents {
        return bad("too few landmarks for the precedent range");
    }
    let total: f64 = config.factor_mixture.values().sum();
    if (total - 1.0).abs() > 1e-9 || config.factor_mixture.values().any(|p| *p < 0.0) {
        return bad("factor mixture must be non-negative and sum to 1");
    }
    if config.factor_mixture.get(&PrimaryFactor::Title).is_some_and(|p| *p > 0.0) {
        return bad("title planting is not supported");
    }
    if config.topics == 0 {
        return bad("need at least one topic");
    }
    Ok(landmarks)
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus, SyntheticError> {
    let landmarks = validate(config)?;
    let n = config.cases;
    let mut r = rng(derive_seed(config.seed, &["synthetic", "structure"]));
    let mut words = Words { rng: rng(derive_seed(config.seed, &["synthetic", "words"])), used: HashSet::new() };

    let common: Vec<String> = (0..80).map(|_| words.fresh(2)).collect();
    let topics: Vec<Vec<String>> =
        (0..config.topics).map(|_| (0..16).map(|_| words.fresh(3)).collect()).collect();
    let judges: Vec<String> = (0..(n / 8).max(12)).map(|_| words.name()).collect();

    let ids: Vec<CaseId> = (0..n).map(|i| CaseId::new(format!("syn-{i:05}")).expect("non-empty")).collect();

    // Citations and the planted parent, always an earlier landmark.
    let mut cites: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut parents: Vec<Option<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let m = r.gen_range(config.min_precedents..=config.max_precedents);
        let pool: Vec<usize> = (0..landmarks).filter(|j| *j != i).collect();
        let mut chosen: Vec<usize> = pool.choose_multiple(&mut r, m).copied().collect();
        let parent = (i > 0).then(|| r.gen_range(0..i.min(landmarks)));
        if let Some(p) = parent {
            if !chosen.contains(&p) {
                chosen[0] = p;
            }
        }
        chosen.sort_unstable();
        cites.push(chosen);
        parents.push(parent);
    }

    let mut factors = allocate(&config.factor_mixture, n - 1);
    factors.shuffle(&mut r);
    let mut factor_of = vec![None; n];
    for (i, f) in (1..n).zip(factors) {
        factor_of[i] = Some(f);
    }

    let sentence = |topic: usize, r: &mut ChaCha8Rng| {
        let len = r.gen_range(7..=11);
        let body: Vec<&str> = (0..len)
            .map(|_| {
                if r.gen_bool(0.9) {
                    topics[topic].choose(r).unwrap().as_str()
                } else {
                    common.choose(r).unwrap().as_str()
                }
            })
            .collect();
        format!("{}.", capitalize(&body.join(" ")))
    };

    let factor_provider = HashedBowEmbedder::new(config.factor_dim);
    let mut case_topics: Vec<usize> = Vec::with_capacity(n);
    let mut titles = BTreeSet::new();
    let mut cases: Vec<RawCase> = Vec::with_capacity(n);
    let mut planted = Vec::new();
    for i in 0..n {
        let factor = factor_of[i];
        let parent = parents[i].map(|p| (&cases[p], case_topics[p]));
        let mut attempt = 0;
        let (case, topic) = loop {
            attempt += 1;
            let topic = match (parent, factor) {
                (Some((_, t)), Some(PrimaryFactor::CaseDetail)) => t,
                _ => r.gen_range(0..config.topics),
            };
            let sentences: Vec<String> = (0..6).map(|_| sentence(topic, &mut r)).collect();
            let mut date = loop {
                let d = NaiveDate::from_ymd_opt(r.gen_range(1990..2020), r.gen_range(1..=12), r.gen_range(13..=28))
                    .expect("valid day");
                if parent.is_none_or(|(p, _)| p.date.year() != d.year() && p.date.month() != d.month()) {
                    break d;
                }
            };
            let mut judge = loop {
                let j = judges.choose(&mut r).unwrap().clone();
                if parent.is_none_or(|(p, _)| p.judge != j) {
                    break j;
                }
            };
            let mut plaintiffs: Vec<String> = (0..r.gen_range(1..=2)).map(|_| words.name()).collect();
            let mut defendants: Vec<String> = (0..r.gen_range(1..=2)).map(|_| words.name()).collect();
            if let (Some((p, _)), Some(f)) = (parent, factor) {
                match f {
                    PrimaryFactor::CaseDetail => {}
                    PrimaryFactor::Judge => judge = p.judge.clone(),
                    PrimaryFactor::Plaintiffs => plaintiffs = p.plaintiffs.clone(),
                    PrimaryFactor::Defendants => defendants = p.defendants.clone(),
                    PrimaryFactor::Date => date = p.date,
                    PrimaryFactor::Title => unreachable!("rejected by validate"),
                }
            }
            let mut title = format!("{} v. {}", surname(&plaintiffs[0]), surname(&defendants[0]));
            while titles.contains(&title) {
                if factor == Some(PrimaryFactor::Defendants) {
                    plaintiffs[0] = words.name();
                } else {
                    defendants[0] = words.name();
                }
                title = format!("{} v. {}", surname(&plaintiffs[0]), surname(&defendants[0]));
            }
            let case = RawCase {
                id: ids[i].clone(),
                title,
                date,
                judge,
                plaintiffs,
                plaintiff_attorneys: Vec::new(),
                defendants,
                defendant_attorneys: Vec::new(),
                case_detail: sentences.join(" "),
                precedent_ids: cites[i].iter().map(|j| ids[*j].clone()).collect(),
                verdict: Some(Verdict::OUTCOMES[i % 4]),
            };
            // Fresh features can still collide in hash buckets; redraw them
            // until the planted factor is the pair's primary factor.
            let recovered = match (parent, factor) {
                (Some((p, _)), Some(f)) => {
                    primary_factor(&as_processed(&case, config), &as_processed(p, config), &factor_provider).primary == f
                }
                _ => true,
            };
            if recovered || attempt == MAX_ATTEMPTS {
                break (case, topic);
            }
        };
        titles.insert(case.title.clone());
        if let (Some(p), Some(f)) = (parents[i], factor) {
            planted.push(PlantedPair { case: ids[i].clone(), precedent: ids[p].clone(), factor: f });
        }
        cases.push(case);
        case_topics.push(topic);
    }
    Ok(SyntheticCorpus { cases, planted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess_corpus, ExtractivePreprocessor};
    use std::collections::HashMap;

    #[test]
    fn deterministic_and_valid() {
        let config = SyntheticConfig { cases: 120, ..Default::default() };
        let a = generate(&config).unwrap();
        assert_eq!(a, generate(&config).unwrap());
        assert_eq!(a.cases.len(), 120);
        let titles: BTreeSet<&str> = a.cases.iter().map(|c| c.title.as_str()).collect();
        assert_eq!(titles.len(), 120);
        for c in &a.cases {
            c.validate().unwrap();
            assert!((6..=9).contains(&c.precedent_ids.len()));
        }
        let other = generate(&SyntheticConfig { seed: 8, ..config }).unwrap();
        assert_ne!(a.cases, other.cases);
    }

    #[test]
    fn mixture_is_allocated_exactly() {
        let got = allocate(&default_mixture(), 1000);
        let count = |f| got.iter().filter(|x| **x == f).count();
        assert_eq!(count(PrimaryFactor::CaseDetail), 783);
        assert_eq!(count(PrimaryFactor::Judge), 149);
        assert_eq!(count(PrimaryFactor::Defendants), 41);
        assert_eq!(count(PrimaryFactor::Plaintiffs), 27);
        assert_eq!(allocate(&default_mixture(), 7).len(), 7);
    }

    #[test]
    fn planted_factor_is_the_primary_factor() {
        let mut mixture = default_mixture();
        mixture.insert(PrimaryFactor::CaseDetail, 0.683);
        mixture.insert(PrimaryFactor::Date, 0.1);
        let corpus = generate(&SyntheticConfig { cases: 300, factor_mixture: mixture, ..Default::default() }).unwrap();
        let (processed, report) = preprocess_corpus(&corpus.cases, &ExtractivePreprocessor::default());
        assert!(report.failures.is_empty());
        let by_id: HashMap<&CaseId, &ProcessedCase> = processed.iter().map(|c| (&c.id, c)).collect();
        let provider = HashedBowEmbedder::new(512);
        for pair in &corpus.planted {
            let got = primary_factor(by_id[&pair.case], by_id[&pair.precedent], &provider);
            assert_eq!(got.primary, pair.factor, "{pair:?} {:?}", got.scores);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = SyntheticConfig::default();
        c.factor_mixture.insert(PrimaryFactor::Title, 0.1);
        assert!(generate(&c).is_err());
        let c = SyntheticConfig { min_precedents: 5, max_precedents: 4, ..Default::default() };
        assert!(generate(&c).is_err());
    }
}
