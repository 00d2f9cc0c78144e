//! Mutual-follow graph and its structural quantities.
//!
//! A [`MutualGraph`] is undirected and simple: node ids are kept sorted in
//! ascending order and every neighbor list is sorted by node index, so all
//! derived quantities (core membership, samples, PageRank) are reproducible
//! for a given edge multiset regardless of input order.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("account id must be non-empty")]
    EmptyId,
    #[error("unknown account `{0}`")]
    UnknownNode(AccountId),
    #[error("graph is empty")]
    EmptyGraph,
    #[error("account `{account}` has fewer than {k} neighbors inside the core")]
    NotACore { account: AccountId, k: usize },
    #[error("pagerank did not converge after {} iterations (last L1 change {})", .last.iterations, .last.residual)]
    PageRankDidNotConverge { last: Box<PageRankVector> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Opaque account identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AccountId(String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Result<Self, NetworkError> {
        let id = id.into();
        if id.is_empty() {
            return Err(NetworkError::EmptyId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AccountId {
    type Error = NetworkError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AccountId> for String {
    fn from(value: AccountId) -> Self {
        value.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Undirected simple graph over [`AccountId`]s.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MutualGraph {
    ids: Vec<AccountId>,
    index: HashMap<AccountId, usize>,
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
}

impl MutualGraph {
    /// Builds a graph from id pairs. Self-loops are dropped, `(a,b)` and
    /// `(b,a)` collapse into one edge, and the node set is every id that
    /// appears in a kept edge.
    pub fn from_edges<I>(edges: I) -> Self
    where
        I: IntoIterator<Item = (AccountId, AccountId)>,
    {
        let kept: Vec<(AccountId, AccountId)> =
            edges.into_iter().filter(|(a, b)| a != b).collect();
        let nodes: BTreeSet<&AccountId> = kept.iter().flat_map(|(a, b)| [a, b]).collect();
        let ids: Vec<AccountId> = nodes.into_iter().cloned().collect();
        let mut graph = Self::with_nodes(ids);
        let mut pairs: Vec<(usize, usize)> = kept
            .iter()
            .map(|(a, b)| {
                let (i, j) = (graph.index[a], graph.index[b]);
                (i.min(j), i.max(j))
            })
            .collect();
        drop(kept);
        pairs.sort_unstable();
        pairs.dedup();
        graph.attach_edges(&pairs);
        graph
    }

    /// Reads a `idA,idB` edge list. Blank lines and lines starting with `#`
    /// are skipped.
    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Self, NetworkError> {
        let mut edges = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            edges.push(parse_edge_line(trimmed).map_err(|reason| NetworkError::Malformed {
                line: n + 1,
                reason,
            })?);
        }
        Ok(Self::from_edges(edges))
    }

    fn with_nodes(ids: Vec<AccountId>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let adjacency = vec![Vec::new(); ids.len()];
        Self { ids, index, adjacency, edge_count: 0 }
    }

    /// `pairs` must be sorted, deduplicated and have `i < j`.
    fn attach_edges(&mut self, pairs: &[(usize, usize)]) {
        for &(i, j) in pairs {
            self.adjacency[i].push(j);
            self.adjacency[j].push(i);
        }
        for list in &mut self.adjacency {
            list.sort_unstable();
        }
        self.edge_count = pairs.len();
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &AccountId) -> bool {
        self.index.contains_key(id)
    }

    /// Node ids in ascending order; positions are the node indices.
    pub fn ids(&self) -> &[AccountId] {
        &self.ids
    }

    pub fn index_of(&self, id: &AccountId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id_at(&self, index: usize) -> &AccountId {
        &self.ids[index]
    }

    pub fn neighbor_indices(&self, index: usize) -> &[usize] {
        &self.adjacency[index]
    }

    pub fn neighbors(&self, id: &AccountId) -> Result<impl Iterator<Item = &AccountId>, NetworkError> {
        let i = self.require(id)?;
        Ok(self.adjacency[i].iter().map(move |&j| &self.ids[j]))
    }

    pub fn degree(&self, id: &AccountId) -> Option<usize> {
        self.index_of(id).map(|i| self.adjacency[i].len())
    }

    pub fn degree_at(&self, index: usize) -> usize {
        self.adjacency[index].len()
    }

    pub fn has_edge(&self, a: &AccountId, b: &AccountId) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.adjacency[i].binary_search(&j).is_ok(),
            _ => false,
        }
    }

    /// Edges as index pairs `(i, j)` with `i < j`, in lexicographic order.
    pub fn edge_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&AccountId, &AccountId)> + '_ {
        self.edge_indices().map(|(i, j)| (&self.ids[i], &self.ids[j]))
    }

    pub(crate) fn require(&self, id: &AccountId) -> Result<usize, NetworkError> {
        self.index_of(id).ok_or_else(|| NetworkError::UnknownNode(id.clone()))
    }

    /// Induced subgraph on the selected node indices. Isolated selected nodes
    /// are kept.
    pub fn induced_by_indices(&self, selected: &[usize]) -> Self {
        let mut keep: Vec<usize> = selected.to_vec();
        keep.sort_unstable_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        keep.dedup();
        let mut remap = vec![usize::MAX; self.ids.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut sub = Self::with_nodes(keep.iter().map(|&i| self.ids[i].clone()).collect());
        let mut pairs = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            for &old_j in &self.adjacency[old_i] {
                let new_j = remap[old_j];
                if new_j != usize::MAX && new_i < new_j {
                    pairs.push((new_i, new_j));
                }
            }
        }
        pairs.sort_unstable();
        sub.attach_edges(&pairs);
        sub
    }

    /// Induced subgraph on the given ids; unknown ids are ignored.
    pub fn induced<'a, I>(&self, members: I) -> Self
    where
        I: IntoIterator<Item = &'a AccountId>,
    {
        let selected: Vec<usize> = members.into_iter().filter_map(|id| self.index_of(id)).collect();
        self.induced_by_indices(&selected)
    }
}

fn parse_edge_line(line: &str) -> Result<(AccountId, AccountId), String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 2 {
        return Err(format!("expected `idA,idB`, found {} field(s)", fields.len()));
    }
    let a = AccountId::new(fields[0]).map_err(|_| "first id is empty".to_string())?;
    let b = AccountId::new(fields[1]).map_err(|_| "second id is empty".to_string())?;
    Ok((a, b))
}

/// Maximal subgraph in which every member has at least `k` neighbors among
/// the members.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreSubgraph {
    k: usize,
    graph: MutualGraph,
}

impl CoreSubgraph {
    /// Rebuilds a previously computed core from its member list. Checks the
    /// degree bound but not maximality, which only a fresh peel can show.
    pub fn from_members<'a, I>(parent: &MutualGraph, k: usize, members: I) -> Result<Self, NetworkError>
    where
        I: IntoIterator<Item = &'a AccountId>,
    {
        let mut ids = Vec::new();
        for id in members {
            if !parent.contains(id) {
                return Err(NetworkError::UnknownNode(id.clone()));
            }
            ids.push(id);
        }
        let graph = parent.induced(ids);
        if let Some(weak) = graph.ids().iter().find(|a| graph.degree(a).unwrap_or(0) < k) {
            return Err(NetworkError::NotACore { account: weak.clone(), k });
        }
        Ok(Self { k, graph })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn graph(&self) -> &MutualGraph {
        &self.graph
    }

    pub fn into_graph(self) -> MutualGraph {
        self.graph
    }

    pub fn members(&self) -> &[AccountId] {
        self.graph.ids()
    }

    pub fn contains(&self, id: &AccountId) -> bool {
        self.graph.contains(id)
    }

    pub fn len(&self) -> usize {
        self.graph.node_count()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }
}

/// Peels nodes of degree `< k` until none remain. Runs in `O(V + E)`.
///
/// # Panics
///
/// Panics if `k == 0`.
pub fn k_core(graph: &MutualGraph, k: usize) -> CoreSubgraph {
    assert!(k >= 1, "k must be positive");
    let n = graph.node_count();
    let mut degree: Vec<usize> = (0..n).map(|i| graph.degree_at(i)).collect();
    let mut removed = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| degree[i] < k).collect();
    for &i in &stack {
        removed[i] = true;
    }
    while let Some(v) = stack.pop() {
        for &u in graph.neighbor_indices(v) {
            if removed[u] {
                continue;
            }
            degree[u] -= 1;
            if degree[u] < k {
                removed[u] = true;
                stack.push(u);
            }
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    CoreSubgraph { k, graph: graph.induced_by_indices(&kept) }
}

/// Induced subgraph on the `n` highest-degree nodes. Degree ties go to the
/// smaller id.
///
/// # Panics
///
/// Panics if `n == 0`.
pub fn top_degree_sample(graph: &MutualGraph, n: usize) -> MutualGraph {
    assert!(n >= 1, "sample size must be positive");
    if graph.node_count() <= n {
        return graph.clone();
    }
    let mut order: Vec<usize> = (0..graph.node_count()).collect();
    // ids are sorted, so index order is id order
    order.sort_by(|&a, &b| graph.degree_at(b).cmp(&graph.degree_at(a)).then(a.cmp(&b)));
    order.truncate(n);
    graph.induced_by_indices(&order)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        Self { damping: 0.85, tolerance: 1e-10, max_iterations: 200 }
    }
}

/// Stationary scores of the damped random walk, summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageRankVector {
    scores: BTreeMap<AccountId, f64>,
    pub damping: f64,
    pub iterations: usize,
    /// L1 change of the final update.
    pub residual: f64,
}

impl PageRankVector {
    /// Wraps externally supplied scores (e.g. a cached vector).
    pub fn from_scores(scores: BTreeMap<AccountId, f64>) -> Self {
        Self { scores, damping: PageRankConfig::default().damping, iterations: 0, residual: 0.0 }
    }

    pub fn get(&self, id: &AccountId) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn scores(&self) -> &BTreeMap<AccountId, f64> {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.values().sum()
    }
}

/// Power iteration on the undirected graph, each edge acting as two directed
/// links. Isolated nodes spread their mass uniformly over all nodes.
pub fn pagerank(graph: &MutualGraph, config: PageRankConfig) -> Result<PageRankVector, NetworkError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(NetworkError::EmptyGraph);
    }
    let nf = n as f64;
    let d = config.damping;
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let dangling: Vec<usize> = (0..n).filter(|&i| graph.degree_at(i) == 0).collect();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let dangling_mass: f64 = dangling.iter().map(|&i| rank[i]).sum();
        let base = (1.0 - d) / nf + d * dangling_mass / nf;
        for (v, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = graph
                .neighbor_indices(v)
                .iter()
                .map(|&u| rank[u] / graph.degree_at(u) as f64)
                .sum();
            *slot = base + d * inflow;
        }
        residual = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if residual <= config.tolerance {
            break;
        }
    }

    let scores = graph.ids().iter().cloned().zip(rank.iter().copied()).collect();
    let vector = PageRankVector { scores, damping: d, iterations, residual };
    if residual <= config.tolerance {
        Ok(vector)
    } else {
        Err(NetworkError::PageRankDidNotConverge { last: Box::new(vector) })
    }
}

/// Shortest-path length in hops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hops {
    Finite(u32),
    Unreachable,
}

impl Hops {
    pub fn finite(self) -> Option<u32> {
        match self {
            Hops::Finite(h) => Some(h),
            Hops::Unreachable => None,
        }
    }
}

pub fn hop_distance(graph: &MutualGraph, a: &AccountId, b: &AccountId) -> Result<Hops, NetworkError> {
    let source = graph.require(a)?;
    let target = graph.require(b)?;
    if source == target {
        return Ok(Hops::Finite(0));
    }
    let mut dist = vec![u32::MAX; graph.node_count()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for &u in graph.neighbor_indices(v) {
            if dist[u] == u32::MAX {
                dist[u] = dist[v] + 1;
                if u == target {
                    return Ok(Hops::Finite(dist[u]));
                }
                queue.push_back(u);
            }
        }
    }
    Ok(Hops::Unreachable)
}

/// Writes `id,degree,in_4core` rows for every node of `graph`.
pub fn write_node_table<W: Write>(
    graph: &MutualGraph,
    core: &CoreSubgraph,
    out: W,
) -> Result<(), NetworkError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["id", "degree", "in_4core"])?;
    for (i, id) in graph.ids().iter().enumerate() {
        writer.write_record([
            id.as_str(),
            &graph.degree_at(i).to_string(),
            if core.contains(id) { "true" } else { "false" },
        ])?;
    }
    writer.flush()?;
    Ok(())
}
