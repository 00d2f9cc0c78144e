//! Dataset ingestion: edge list → k-core → top-degree sample → PageRank →
//! 3D layout, cached on disk under a digest of the inputs and parameters.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mirror_core::ideology::{label_all, read_ideology_scores, AlignmentTable, IdeologyError, IdeologyScore};
use mirror_core::layout::{compute_layout, Layout, LayoutConfig, LayoutError};
use mirror_core::network::{
    k_core, pagerank, top_degree_sample, write_node_table, AccountId, CoreSubgraph, MutualGraph, NetworkError,
    PageRankConfig, PageRankVector,
};
use mirror_core::{IdeologyLabel, LabelMap};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::info;

use crate::config::Config;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Network { path: PathBuf, source: NetworkError },
    #[error("{}: {source}", path.display())]
    Ideology { path: PathBuf, source: IdeologyError },
    #[error("{}: record {record}: {reason}", path.display())]
    Tweets { path: PathBuf, record: usize, reason: String },
    #[error("the {k}-core of the input graph is empty")]
    EmptyCore { k: usize },
    #[error(transparent)]
    PageRank(NetworkError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("cache entry {}: {reason}", path.display())]
    Cache { path: PathBuf, reason: String },
}

/// Everything the service needs, computed once per input set.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub digest: String,
    pub graph: MutualGraph,
    pub core: CoreSubgraph,
    pub sample: MutualGraph,
    pub layout: Layout,
    pub pagerank: PageRankVector,
    pub scores: HashMap<AccountId, IdeologyScore>,
    /// Defined for every sample node; nodes without a score are `Unsure`.
    pub labels: LabelMap,
    pub alignment: AlignmentTable,
    pub tweets: HashMap<AccountId, Vec<String>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IngestReport {
    pub digest: String,
    pub cache_dir: PathBuf,
    pub cache_hit: bool,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub core_nodes: usize,
    pub sample_nodes: usize,
    pub sample_edges: usize,
    /// Sample nodes without an ideology score, labelled `Unsure`.
    pub unscored_sample_nodes: usize,
    pub elapsed: Duration,
}

/// Computed artifacts stored next to `layout.csv` in the cache entry.
#[derive(Serialize, Deserialize)]
struct Manifest {
    digest: String,
    core_k: usize,
    sample_size: usize,
    layout: LayoutConfig,
    core_members: Vec<AccountId>,
    sample_members: Vec<AccountId>,
    pagerank: PageRankVector,
}

const MANIFEST: &str = "manifest.json";
const LAYOUT: &str = "layout.csv";
const NODES: &str = "nodes.csv";

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|source| IngestError::Io { path: path.into(), source })
}

/// SHA-256 over every input file and every parameter that shapes the
/// computed artifacts.
pub fn input_digest(config: &Config) -> Result<String, IngestError> {
    let mut hasher = Sha256::new();
    let mut files = vec![&config.data.edges, &config.data.ideology, &config.data.alignment];
    files.extend(config.data.tweets.as_ref());
    for path in files {
        let mut bytes = Vec::new();
        open(path)?.read_to_end(&mut bytes).map_err(|source| IngestError::Io { path: path.clone(), source })?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    hasher.update((config.core_k as u64).to_le_bytes());
    hasher.update((config.sample_size as u64).to_le_bytes());
    hasher.update(config.layout.digest().to_le_bytes());
    hasher.update(config.label_threshold.to_bits().to_le_bytes());
    Ok(hex::encode(hasher.finalize()))
}

fn read_tweets(path: &Path) -> Result<HashMap<AccountId, Vec<String>>, IngestError> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        text: String,
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Fields).from_reader(open(path)?);
    let mut tweets: HashMap<AccountId, Vec<String>> = HashMap::new();
    for (n, row) in reader.deserialize::<Row>().enumerate() {
        let bad = |reason: String| IngestError::Tweets { path: path.into(), record: n + 1, reason };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let id = AccountId::new(row.id).map_err(|e| bad(e.to_string()))?;
        tweets.entry(id).or_default().push(row.text);
    }
    Ok(tweets)
}

/// Runs the pipeline, or loads the cached result when the inputs and
/// parameters are unchanged.
pub fn ingest(config: &Config) -> Result<(DatasetBundle, IngestReport), IngestError> {
    let started = Instant::now();
    let digest = input_digest(config)?;
    let entry = config.cache_dir.join(&digest);

    let edges_path = &config.data.edges;
    let graph = MutualGraph::read_edge_list(open(edges_path)?)
        .map_err(|source| IngestError::Network { path: edges_path.clone(), source })?;
    let score_list = read_ideology_scores(open(&config.data.ideology)?)
        .map_err(|source| IngestError::Ideology { path: config.data.ideology.clone(), source })?;
    let alignment = AlignmentTable::read_csv(open(&config.data.alignment)?)
        .map_err(|source| IngestError::Ideology { path: config.data.alignment.clone(), source })?;
    let tweets = match &config.data.tweets {
        Some(path) => read_tweets(path)?,
        None => HashMap::new(),
    };

    let (core, sample, pagerank, layout, cache_hit) = match load_cached(&entry, &graph, config)? {
        Some(cached) => {
            let (core, sample, pr, layout) = cached;
            (core, sample, pr, layout, true)
        }
        None => {
            let core = k_core(&graph, config.core_k);
            if core.is_empty() {
                return Err(IngestError::EmptyCore { k: config.core_k });
            }
            let sample = top_degree_sample(core.graph(), config.sample_size);
            let pr = pagerank(&sample, PageRankConfig::default()).map_err(IngestError::PageRank)?;
            let layout = compute_layout(&sample, &config.layout)?;
            store_cached(&entry, &digest, config, &graph, &core, &sample, &pr, &layout)?;
            (core, sample, pr, layout, false)
        }
    };

    let scores: HashMap<AccountId, IdeologyScore> =
        score_list.into_iter().map(|s| (s.account.clone(), s)).collect();
    let mut labels = label_all(scores.values(), config.label_threshold);
    let mut unscored = 0;
    for id in sample.ids() {
        labels.entry(id.clone()).or_insert_with(|| {
            unscored += 1;
            IdeologyLabel::Unsure
        });
    }

    let report = IngestReport {
        digest: digest.clone(),
        cache_dir: entry,
        cache_hit,
        graph_nodes: graph.node_count(),
        graph_edges: graph.edge_count(),
        core_nodes: core.len(),
        sample_nodes: sample.node_count(),
        sample_edges: sample.edge_count(),
        unscored_sample_nodes: unscored,
        elapsed: started.elapsed(),
    };
    info!(digest = %report.digest, cache_hit, core = report.core_nodes, sample = report.sample_nodes, "dataset ready");
    let bundle = DatasetBundle { digest, graph, core, sample, layout, pagerank, scores, labels, alignment, tweets };
    Ok((bundle, report))
}

type Cached = (CoreSubgraph, MutualGraph, PageRankVector, Layout);

fn load_cached(entry: &Path, graph: &MutualGraph, config: &Config) -> Result<Option<Cached>, IngestError> {
    let manifest_path = entry.join(MANIFEST);
    if !manifest_path.exists() {
        return Ok(None);
    }
    let corrupt = |reason: String| IngestError::Cache { path: entry.into(), reason };
    let manifest: Manifest = serde_json::from_reader(open(&manifest_path)?).map_err(|e| corrupt(e.to_string()))?;
    let core = CoreSubgraph::from_members(graph, manifest.core_k, &manifest.core_members)
        .map_err(|e| corrupt(e.to_string()))?;
    let sample = core.graph().induced(&manifest.sample_members);
    if sample.node_count() != manifest.sample_members.len() {
        return Err(corrupt("sample members are not all in the core".into()));
    }
    let layout = Layout::read_csv(open(&entry.join(LAYOUT))?, config.layout).map_err(|e| corrupt(e.to_string()))?;
    if layout.positions.len() != sample.node_count() {
        return Err(corrupt("layout does not cover the sample".into()));
    }
    Ok(Some((core, sample, manifest.pagerank, layout)))
}

#[allow(clippy::too_many_arguments)]
fn store_cached(
    entry: &Path,
    digest: &str,
    config: &Config,
    graph: &MutualGraph,
    core: &CoreSubgraph,
    sample: &MutualGraph,
    pagerank: &PageRankVector,
    layout: &Layout,
) -> Result<(), IngestError> {
    let io = |source| IngestError::Io { path: entry.into(), source };
    // write into a scratch directory first so a crash never leaves a
    // half-written entry that looks complete
    let scratch = entry.with_extension("partial");
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch).map_err(io)?;
    }
    std::fs::create_dir_all(&scratch).map_err(io)?;
    let create = |name: &str| File::create(scratch.join(name)).map(BufWriter::new).map_err(io);

    let manifest = Manifest {
        digest: digest.into(),
        core_k: config.core_k,
        sample_size: config.sample_size,
        layout: config.layout,
        core_members: core.members().to_vec(),
        sample_members: sample.ids().to_vec(),
        pagerank: pagerank.clone(),
    };
    serde_json::to_writer(create(MANIFEST)?, &manifest).map_err(|e| IngestError::Cache {
        path: entry.into(),
        reason: e.to_string(),
    })?;
    layout.write_csv(create(LAYOUT)?)?;
    write_node_table(graph, core, create(NODES)?)
        .map_err(|e| IngestError::Cache { path: entry.into(), reason: e.to_string() })?;

    if entry.exists() {
        std::fs::remove_dir_all(entry).map_err(io)?;
    }
    std::fs::rename(&scratch, entry).map_err(io)
}

/// Summary of PageRank over the sample for display sizing: each score
/// divided by the largest.
pub fn relative_sizes(pagerank: &PageRankVector) -> BTreeMap<AccountId, f64> {
    let max = pagerank.scores().values().copied().fold(0.0, f64::max);
    pagerank
        .scores()
        .iter()
        .map(|(id, s)| (id.clone(), if max > 0.0 { s / max } else { 0.0 }))
        .collect()
}
