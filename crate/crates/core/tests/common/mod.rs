#![allow(dead_code)]

use std::collections::BTreeMap;

use mirror_core::ideology::{IdeologyLabel, LabelMap};
use mirror_core::network::{AccountId, MutualGraph, PageRankVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn id(s: &str) -> AccountId {
    AccountId::new(s).unwrap()
}

pub fn node(i: usize) -> AccountId {
    id(&format!("n{i:05}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi style edge list over `n` nodes (may contain duplicates and
/// self-loops, which the graph builder drops).
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<(usize, usize)> {
    (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect()
}

pub fn graph_from(edges: &[(usize, usize)]) -> MutualGraph {
    MutualGraph::from_edges(edges.iter().map(|&(a, b)| (node(a), node(b))))
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize) -> MutualGraph {
    graph_from(&random_edges(rng, n, m))
}

/// Random labels: roughly 40% Left, 40% Right, 20% Unsure.
pub fn random_labels(rng: &mut ChaCha8Rng, graph: &MutualGraph) -> LabelMap {
    graph
        .ids()
        .iter()
        .map(|a| {
            let r: f64 = rng.gen();
            let label = if r < 0.4 {
                IdeologyLabel::Left
            } else if r < 0.8 {
                IdeologyLabel::Right
            } else {
                IdeologyLabel::Unsure
            };
            (a.clone(), label)
        })
        .collect()
}

/// Arbitrary positive weights normalized to one.
pub fn random_weights(rng: &mut ChaCha8Rng, graph: &MutualGraph) -> PageRankVector {
    let raw: Vec<f64> = graph.ids().iter().map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let scores: BTreeMap<AccountId, f64> =
        graph.ids().iter().cloned().zip(raw.into_iter().map(|w| w / total)).collect();
    PageRankVector::from_scores(scores)
}

/// Base-2 entropy of a split, written out independently of the library.
pub fn entropy2(left: f64, right: f64) -> f64 {
    let total = left + right;
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for mass in [left, right] {
        let p = mass / total;
        if p > 0.0 {
            h -= p * p.ln() / std::f64::consts::LN_2;
        }
    }
    h
}
