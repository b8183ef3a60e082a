#![allow(dead_code)]

use agmt_core::corpus::{make_bilingual_corpora, BilingualCorpora, FamilySpec, ParallelTuple, SyntheticFamily};
use agmt_core::model::{Hyperparams, ModelParams};
use agmt_core::TranslationGraph;
use std::collections::HashSet;

/// A small hub family with disjoint train and dev tuples.
pub struct Setup {
    pub family: SyntheticFamily,
    pub graph: TranslationGraph,
    pub corpora: BilingualCorpora,
    pub dev: Vec<ParallelTuple>,
    pub params: ModelParams,
}

pub fn setup(k: usize, hidden: usize, train_tuples: usize, seed: u64) -> Setup {
    let family = SyntheticFamily::generate(&FamilySpec::new(k, 8, 1, 3, 5, seed)).unwrap();
    let names: Vec<String> = (0..k).map(|i| format!("L{i}")).collect();
    let graph = TranslationGraph::hub(&names).unwrap();
    let mut seen = HashSet::new();
    let dev = family.sample_distinct_tuples(12, seed + 1, &mut seen).unwrap();
    let train = family.sample_distinct_tuples(train_tuples, seed + 2, &mut seen).unwrap();
    let corpora = make_bilingual_corpora(&train, &graph).unwrap();
    let mut h = Hyperparams::for_vocab(family.vocab());
    h.hidden_size = hidden;
    h.embed_size = hidden;
    let params = ModelParams::init(&h, seed + 3).unwrap();
    Setup { family, graph, corpora, dev, params }
}
