//! Ideology labels, connection diversity and URL alignment.

use std::collections::{HashMap, HashSet};
use std::io::Read;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{AccountId, MutualGraph, PageRankVector};

pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum IdeologyError {
    #[error("p_left {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("alignment {value} for `{domain}` outside [-1, 1]")]
    AlignmentOutOfRange { domain: String, value: f64 },
    #[error("account `{0}` is not in the sample graph")]
    UnknownUser(AccountId),
    #[error("record {record}: {reason}")]
    Malformed { record: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdeologyScore {
    pub account: AccountId,
    p_left: f64,
}

impl IdeologyScore {
    pub fn new(account: AccountId, p_left: f64) -> Result<Self, IdeologyError> {
        if !(0.0..=1.0).contains(&p_left) {
            return Err(IdeologyError::ProbabilityOutOfRange(p_left));
        }
        Ok(Self { account, p_left })
    }

    pub fn p_left(&self) -> f64 {
        self.p_left
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IdeologyLabel {
    Left,
    Right,
    Unsure,
}

impl IdeologyLabel {
    pub fn is_partisan(self) -> bool {
        !matches!(self, IdeologyLabel::Unsure)
    }

    pub fn opposite(self) -> Self {
        match self {
            IdeologyLabel::Left => IdeologyLabel::Right,
            IdeologyLabel::Right => IdeologyLabel::Left,
            IdeologyLabel::Unsure => IdeologyLabel::Unsure,
        }
    }
}

pub type LabelMap = HashMap<AccountId, IdeologyLabel>;

/// `Left` when `p_left >= threshold`, `Right` when `1 - p_left >= threshold`,
/// otherwise `Unsure`.
///
/// # Panics
///
/// Panics unless `0.5 < threshold <= 1`.
pub fn label_ideology(score: &IdeologyScore, threshold: f64) -> IdeologyLabel {
    assert!(threshold > 0.5 && threshold <= 1.0, "threshold must lie in (0.5, 1]");
    if score.p_left >= threshold {
        IdeologyLabel::Left
    } else if 1.0 - score.p_left >= threshold {
        IdeologyLabel::Right
    } else {
        IdeologyLabel::Unsure
    }
}

pub fn label_all<'a, I>(scores: I, threshold: f64) -> LabelMap
where
    I: IntoIterator<Item = &'a IdeologyScore>,
{
    scores
        .into_iter()
        .map(|s| (s.account.clone(), label_ideology(s, threshold)))
        .collect()
}

#[derive(Deserialize)]
struct ScoreRow {
    id: String,
    p_left: f64,
}

/// Reads `id,p_left` rows.
pub fn read_ideology_scores<R: Read>(input: R) -> Result<Vec<IdeologyScore>, IdeologyError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for (n, row) in reader.deserialize::<ScoreRow>().enumerate() {
        let record = n as u64 + 1;
        let row = row.map_err(|e| IdeologyError::Malformed { record, reason: e.to_string() })?;
        let account = AccountId::new(row.id)
            .map_err(|e| IdeologyError::Malformed { record, reason: e.to_string() })?;
        out.push(
            IdeologyScore::new(account, row.p_left)
                .map_err(|e| IdeologyError::Malformed { record, reason: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Base-2 entropy of a Left/Right split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityBreakdown {
    pub p_left: f64,
    pub p_right: f64,
    pub score: f64,
    pub counted: usize,
    pub excluded: usize,
    /// No Left/Right mass was available; `score` is 0 by convention.
    pub degenerate: bool,
}

impl DiversityBreakdown {
    fn from_masses(left: f64, right: f64, counted: usize, excluded: usize) -> Self {
        let total = left + right;
        if counted == 0 || total <= 0.0 {
            return Self { p_left: 0.0, p_right: 0.0, score: 0.0, counted, excluded, degenerate: true };
        }
        let p_left = left / total;
        let p_right = right / total;
        Self { p_left, p_right, score: mass_entropy(left, right), counted, excluded, degenerate: false }
    }
}

/// `-p log2 p - (1-p) log2 (1-p)`, zero at the endpoints.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    (term(p) + term(1.0 - p)).clamp(0.0, 1.0)
}

/// Entropy of the split `left : right`. Exactly symmetric in its arguments,
/// so mirroring every label reproduces the score bit for bit.
pub fn mass_entropy(left: f64, right: f64) -> f64 {
    let total = left + right;
    if total <= 0.0 {
        return 0.0;
    }
    let (small, large) = if left <= right { (left, right) } else { (right, left) };
    let term = |m: f64| {
        let q = m / total;
        if q > 0.0 { -q * q.log2() } else { 0.0 }
    };
    (term(small) + term(large)).clamp(0.0, 1.0)
}

/// Unweighted diversity of a followee set. Accounts that are missing from
/// `labels` or labelled `Unsure` count as excluded. Duplicate ids are
/// counted once.
pub fn connection_diversity<'a, I>(followees: I, labels: &LabelMap) -> DiversityBreakdown
where
    I: IntoIterator<Item = &'a AccountId>,
{
    let unique: HashSet<&AccountId> = followees.into_iter().collect();
    let (mut left, mut right, mut excluded) = (0usize, 0usize, 0usize);
    for id in unique {
        match labels.get(id) {
            Some(IdeologyLabel::Left) => left += 1,
            Some(IdeologyLabel::Right) => right += 1,
            _ => excluded += 1,
        }
    }
    DiversityBreakdown::from_masses(left as f64, right as f64, left + right, excluded)
}

/// PageRank-weighted diversity over the user's neighbors in the sample graph.
pub fn displayed_diversity(
    user: &AccountId,
    sample: &MutualGraph,
    pagerank: &PageRankVector,
    labels: &LabelMap,
) -> Result<DiversityBreakdown, IdeologyError> {
    displayed_diversity_with(user, &[], sample, pagerank, labels)
}

/// [`displayed_diversity`] with `extra` accounts treated as additional
/// neighbors (ids already adjacent are not double counted).
pub fn displayed_diversity_with(
    user: &AccountId,
    extra: &[AccountId],
    sample: &MutualGraph,
    pagerank: &PageRankVector,
    labels: &LabelMap,
) -> Result<DiversityBreakdown, IdeologyError> {
    let neighbors = sample
        .neighbors(user)
        .map_err(|_| IdeologyError::UnknownUser(user.clone()))?;
    let mut seen: HashSet<&AccountId> = HashSet::new();
    let (mut left, mut right) = (0.0, 0.0);
    let (mut counted, mut excluded) = (0usize, 0usize);
    for id in neighbors.chain(extra.iter()) {
        if id == user || !seen.insert(id) {
            continue;
        }
        let weight = pagerank.get(id).unwrap_or(0.0);
        match labels.get(id) {
            Some(IdeologyLabel::Left) => {
                left += weight;
                counted += 1;
            }
            Some(IdeologyLabel::Right) => {
                right += weight;
                counted += 1;
            }
            _ => excluded += 1,
        }
    }
    Ok(DiversityBreakdown::from_masses(left, right, counted, excluded))
}

/// Lowercased host with a leading `www.` removed, or `None` when `url` has
/// no parseable host.
pub fn extract_domain(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url.trim()).ok()?;
    let host = parsed.host_str()?.to_ascii_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host);
    if host.is_empty() {
        None
    } else {
        Some(host.to_string())
    }
}

fn normalize_domain(domain: &str) -> String {
    let lower = domain.trim().to_ascii_lowercase();
    lower.strip_prefix("www.").unwrap_or(&lower).to_string()
}

/// Domain to political alignment in `[-1, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignmentTable {
    scores: HashMap<String, f64>,
}

impl AlignmentTable {
    pub fn new<I, S>(entries: I) -> Result<Self, IdeologyError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut scores = HashMap::new();
        for (domain, value) in entries {
            let domain = normalize_domain(domain.as_ref());
            if !(-1.0..=1.0).contains(&value) {
                return Err(IdeologyError::AlignmentOutOfRange { domain, value });
            }
            scores.insert(domain, value);
        }
        Ok(Self { scores })
    }

    /// Reads `domain,alignment` rows.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, IdeologyError> {
        #[derive(Deserialize)]
        struct Row {
            domain: String,
            alignment: f64,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input);
        let mut rows = Vec::new();
        for (n, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| IdeologyError::Malformed { record: n as u64 + 1, reason: e.to_string() })?;
            rows.push((row.domain, row.alignment));
        }
        Self::new(rows)
    }

    pub fn get(&self, domain: &str) -> Option<f64> {
        self.scores.get(domain).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharePhase {
    Before,
    After,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub user: AccountId,
    pub phase: SharePhase,
    /// `None` when no URL had a known domain.
    pub mean: Option<f64>,
    pub urls_counted: usize,
    pub urls_skipped: usize,
}

/// Mean alignment over the URLs whose domain is in `table`.
pub fn url_alignment_avg<'a, I>(
    user: &AccountId,
    phase: SharePhase,
    urls: I,
    table: &AlignmentTable,
) -> AlignmentSummary
where
    I: IntoIterator<Item = &'a str>,
{
    let (mut sum, mut counted, mut skipped) = (0.0, 0usize, 0usize);
    for url in urls {
        match extract_domain(url).and_then(|d| table.get(&d)) {
            Some(score) => {
                sum += score;
                counted += 1;
            }
            None => skipped += 1,
        }
    }
    let mean = (counted > 0).then(|| (sum / counted as f64).clamp(-1.0, 1.0));
    AlignmentSummary { user: user.clone(), phase, mean, urls_counted: counted, urls_skipped: skipped }
}

/// `|after| - |before|`; positive means more one-sided sharing afterwards.
pub fn alignment_delta(before: &AlignmentSummary, after: &AlignmentSummary) -> Option<f64> {
    Some(after.mean?.abs() - before.mean?.abs())
}

/// One row of a URL share log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrlShare {
    pub user_id: AccountId,
    pub timestamp_iso8601: DateTime<Utc>,
    pub url: String,
    pub phase: SharePhase,
}

/// Reads `user_id,timestamp_iso8601,url,phase` rows.
pub fn read_url_shares<R: Read>(input: R) -> Result<Vec<UrlShare>, IdeologyError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    reader
        .deserialize::<UrlShare>()
        .enumerate()
        .map(|(n, row)| row.map_err(|e| IdeologyError::Malformed { record: n as u64 + 1, reason: e.to_string() }))
        .collect()
}
