//! Precedent knowledge graph and primary-factor attribution.
//!
//! Triples are `(source, cites, target)`: the source case relied on the
//! target as precedent. The graph is built once and then only read.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{CaseId, ProcessedCase};
use crate::embedding::EmbeddingProvider;

/// The single relation carried by every triple.
pub const PRECEDENT_RELATION: &str = "cites_as_precedent";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: BTreeSet<CaseId>,
    edges: BTreeMap<CaseId, BTreeSet<CaseId>>,
    triple_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub source: CaseId,
    pub target: CaseId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedEdge {
    pub source: CaseId,
    pub target: CaseId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedEdgeReport {
    pub count: usize,
    pub edges: Vec<DroppedEdge>,
}

impl KnowledgeGraph {
    /// Builds the graph from every case's precedent list, keeping only edges
    /// whose target lies in `restrict_to`.
    pub fn build(cases: &[ProcessedCase], restrict_to: &BTreeSet<CaseId>) -> (Self, DroppedEdgeReport) {
        let mut kg = KnowledgeGraph::default();
        let mut dropped = DroppedEdgeReport::default();
        for case in cases {
            if restrict_to.contains(&case.id) {
                kg.entities.insert(case.id.clone());
            }
            for target in &case.precedent_ids {
                if target == &case.id {
                    continue;
                }
                if restrict_to.contains(target) {
                    kg.add(case.id.clone(), target.clone());
                } else {
                    dropped.edges.push(DroppedEdge { source: case.id.clone(), target: target.clone() });
                }
            }
        }
        dropped.count = dropped.edges.len();
        (kg, dropped)
    }

    /// Rebuilds a graph from persisted triples and an entity manifest.
    pub fn from_parts(entities: impl IntoIterator<Item = CaseId>, triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut kg = KnowledgeGraph { entities: entities.into_iter().collect(), ..Default::default() };
        for t in triples {
            if t.source != t.target {
                kg.add(t.source, t.target);
            }
        }
        kg
    }

    fn add(&mut self, source: CaseId, target: CaseId) {
        self.entities.insert(source.clone());
        self.entities.insert(target.clone());
        if self.edges.entry(source).or_default().insert(target) {
            self.triple_count += 1;
        }
    }

    pub fn entities(&self) -> &BTreeSet<CaseId> {
        &self.entities
    }

    pub fn triple_count(&self) -> usize {
        self.triple_count
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.edges.iter().flat_map(|(s, ts)| {
            ts.iter().map(move |t| Triple { source: s.clone(), target: t.clone() })
        })
    }

    /// Answers `(id, cites, ?)`; borrowed view, `None` for unknown ids.
    pub fn precedents(&self, id: &CaseId) -> Option<&BTreeSet<CaseId>> {
        self.edges.get(id)
    }

    pub fn precedents_of(&self, id: &CaseId) -> BTreeSet<CaseId> {
        self.precedents(id).cloned().unwrap_or_default()
    }

    pub fn precedent_count(&self, id: &CaseId) -> usize {
        self.precedents(id).map_or(0, BTreeSet::len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeShortfall {
    pub id: CaseId,
    pub precedents: usize,
}

/// Every id in `ids` with fewer than `minimum` precedents in `kg`.
pub fn check_min_precedents<'a>(
    kg: &KnowledgeGraph,
    ids: impl IntoIterator<Item = &'a CaseId>,
    minimum: usize,
) -> Vec<DegreeShortfall> {
    ids.into_iter()
        .filter_map(|id| {
            let n = kg.precedent_count(id);
            (n < minimum).then(|| DegreeShortfall { id: id.clone(), precedents: n })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateOrderViolation {
    pub source: CaseId,
    pub target: CaseId,
}

/// Edges whose precedent is not strictly older than the citing case.
/// Advisory only; graph construction does not depend on it.
pub fn date_order_violations(kg: &KnowledgeGraph, cases: &[ProcessedCase]) -> Vec<DateOrderViolation> {
    let dates: BTreeMap<&CaseId, chrono::NaiveDate> = cases.iter().map(|c| (&c.id, c.date)).collect();
    kg.triples()
        .filter(|t| match (dates.get(&t.source), dates.get(&t.target)) {
            (Some(s), Some(p)) => p >= s,
            _ => false,
        })
        .map(|t| DateOrderViolation { source: t.source, target: t.target })
        .collect()
}

/// Factor scores closer than this are treated as tied; identical texts can
/// land a few ulps away from 1.0 depending on their token counts.
pub const SCORE_TIE_EPSILON: f64 = 1e-12;

/// Case features compared when attributing a precedent relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrimaryFactor {
    Title,
    Date,
    Judge,
    Plaintiffs,
    Defendants,
    CaseDetail,
}

impl PrimaryFactor {
    /// Canonical order.
    pub const ALL: [PrimaryFactor; 6] = [
        PrimaryFactor::Title,
        PrimaryFactor::Date,
        PrimaryFactor::Judge,
        PrimaryFactor::Plaintiffs,
        PrimaryFactor::Defendants,
        PrimaryFactor::CaseDetail,
    ];

    /// Default tie-break order, strongest first.
    pub const TIE_PRECEDENCE: [PrimaryFactor; 6] = [
        PrimaryFactor::CaseDetail,
        PrimaryFactor::Judge,
        PrimaryFactor::Defendants,
        PrimaryFactor::Plaintiffs,
        PrimaryFactor::Date,
        PrimaryFactor::Title,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimaryFactor::Title => "Title",
            PrimaryFactor::Date => "Date",
            PrimaryFactor::Judge => "Judge",
            PrimaryFactor::Plaintiffs => "Plaintiffs",
            PrimaryFactor::Defendants => "Defendants",
            PrimaryFactor::CaseDetail => "Case Detail",
        }
    }

    /// The text this factor compares.
    pub fn text(self, case: &ProcessedCase) -> String {
        match self {
            PrimaryFactor::Title => case.title.clone(),
            PrimaryFactor::Date => case.date.format("%Y-%m-%d").to_string(),
            PrimaryFactor::Judge => case.judge.clone(),
            PrimaryFactor::Plaintiffs => case.plaintiffs.join("; "),
            PrimaryFactor::Defendants => case.defendants.join("; "),
            PrimaryFactor::CaseDetail => case.case_summary.clone(),
        }
    }

    /// Sentence used in precedent-recommendation answers.
    pub fn reason(self) -> &'static str {
        match self {
            PrimaryFactor::CaseDetail => "due to their similar case details.",
            PrimaryFactor::Judge => "because they are under the same court.",
            PrimaryFactor::Date => "because of their close dates.",
            PrimaryFactor::Title => "due to their similar titles.",
            PrimaryFactor::Plaintiffs => "because they share plaintiffs.",
            PrimaryFactor::Defendants => "because they share defendants.",
        }
    }
}

impl fmt::Display for PrimaryFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSimilarity {
    pub score: f64,
    /// One side had no usable text; the score is forced to 0.
    pub missing_text: bool,
}

/// Cosine similarity of the two cases' factor texts, clamped to `[0, 1]`.
pub fn feature_similarity(
    a: &ProcessedCase,
    b: &ProcessedCase,
    factor: PrimaryFactor,
    provider: &dyn EmbeddingProvider,
) -> FeatureSimilarity {
    let embed = |case| provider.embed(&factor.text(case)).ok();
    match (embed(a), embed(b)) {
        (Some(x), Some(y)) => FeatureSimilarity { score: x.cosine(&y).clamp(0.0, 1.0), missing_text: false },
        _ => FeatureSimilarity { score: 0.0, missing_text: true },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorScores {
    pub scores: BTreeMap<PrimaryFactor, f64>,
    pub primary: PrimaryFactor,
}

impl FactorScores {
    /// Picks the highest score; scores within [`SCORE_TIE_EPSILON`] of the
    /// best count as equal and resolve by `precedence`.
    pub fn from_scores(scores: BTreeMap<PrimaryFactor, f64>, precedence: &[PrimaryFactor; 6]) -> Self {
        let mut primary = precedence[0];
        let mut best = f64::NEG_INFINITY;
        for factor in precedence {
            let s = scores.get(factor).copied().unwrap_or(0.0);
            if s > best + SCORE_TIE_EPSILON {
                best = s;
                primary = *factor;
            }
        }
        Self { scores, primary }
    }
}

pub fn primary_factor(a: &ProcessedCase, b: &ProcessedCase, provider: &dyn EmbeddingProvider) -> FactorScores {
    primary_factor_with(a, b, provider, &PrimaryFactor::TIE_PRECEDENCE)
}

pub fn primary_factor_with(
    a: &ProcessedCase,
    b: &ProcessedCase,
    provider: &dyn EmbeddingProvider,
    precedence: &[PrimaryFactor; 6],
) -> FactorScores {
    let scores = PrimaryFactor::ALL
        .iter()
        .map(|f| (*f, feature_similarity(a, b, *f, provider).score))
        .collect();
    FactorScores::from_scores(scores, precedence)
}
