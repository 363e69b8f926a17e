#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use lawcase::corpus::{preprocess_corpus, render_case, ExtractivePreprocessor};
use lawcase::dataset::{split_corpus, BuildContext, Split, SplitConfig, DEFAULT_TOKEN_BUDGET};
use lawcase::embedding::{CorpusStats, EmbeddingProvider};
use lawcase::synthetic::{generate, SyntheticConfig, SyntheticCorpus};
use lawcase::{CaseId, HashedBowEmbedder, KnowledgeGraph, ProcessedCase, VectorIndex};

pub const DIM: usize = 512;

/// In-memory equivalent of ingest → preprocess → embed → split → build-kg.
pub struct World {
    pub synthetic: SyntheticCorpus,
    pub cases: Vec<ProcessedCase>,
    pub by_id: HashMap<CaseId, ProcessedCase>,
    pub index: VectorIndex,
    pub train_index: VectorIndex,
    pub kg: KnowledgeGraph,
    pub split: Split,
    pub embedder: HashedBowEmbedder,
    pub factors: HashedBowEmbedder,
}

impl World {
    pub fn new(synthetic: SyntheticConfig, split: SplitConfig) -> World {
        let corpus = generate(&synthetic).expect("synthetic corpus");
        let (cases, report) = preprocess_corpus(&corpus.cases, &ExtractivePreprocessor::default());
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let texts: Vec<String> = cases.iter().map(|c| render_case(c, false)).collect();
        let stats = CorpusStats::from_texts(texts.iter().map(String::as_str));
        let embedder = HashedBowEmbedder::with_stats(DIM, stats);
        let mut index = VectorIndex::new(DIM);
        for (c, t) in cases.iter().zip(&texts) {
            index.insert(c.id.clone(), &embedder.embed(t).unwrap()).unwrap();
        }
        let split = split_corpus(&cases, &split).expect("feasible split");
        let (kg, _) = KnowledgeGraph::build(&cases, &split.train);
        let train_index = index.subset(&split.train);
        let by_id = cases.iter().map(|c| (c.id.clone(), c.clone())).collect();
        World {
            synthetic: corpus,
            cases,
            by_id,
            index,
            train_index,
            kg,
            split,
            embedder,
            factors: HashedBowEmbedder::new(DIM),
        }
    }

    pub fn small(cases: usize, seed: u64) -> World {
        World::new(
            SyntheticConfig { cases, seed, ..Default::default() },
            SplitConfig { train_fraction: 0.5, seed, ..Default::default() },
        )
    }

    pub fn ctx(&self, choices: usize) -> BuildContext<'_> {
        BuildContext::new(
            &self.by_id,
            &self.train_index,
            &self.kg,
            &self.embedder,
            Some(&self.index),
            &self.factors,
            choices,
            DEFAULT_TOKEN_BUDGET,
        )
        .unwrap()
    }

    pub fn test_cases(&self) -> Vec<&ProcessedCase> {
        self.split.test.iter().map(|id| &self.by_id[id]).collect()
    }

    pub fn train_cases(&self) -> Vec<&ProcessedCase> {
        self.split.train.iter().map(|id| &self.by_id[id]).collect()
    }

    pub fn train_ids(&self) -> &BTreeSet<CaseId> {
        &self.split.train
    }
}
