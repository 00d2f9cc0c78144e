//! Greedy follow recommendations that raise the displayed diversity score.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ideology::{mass_entropy, displayed_diversity_with, IdeologyError, IdeologyLabel, LabelMap};
use crate::network::{AccountId, MutualGraph, PageRankVector};

pub const DEFAULT_MAX_RECOMMENDATIONS: usize = 5;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("account `{0}` is not in the sample graph")]
    UnknownUser(AccountId),
    #[error("account `{0}` is not an eligible candidate")]
    IneligibleCandidate(AccountId),
    #[error("account `{0}` was not in the issued recommendation list")]
    NotRecommended(AccountId),
}

impl From<IdeologyError> for RecommendError {
    fn from(err: IdeologyError) -> Self {
        match err {
            IdeologyError::UnknownUser(id) => RecommendError::UnknownUser(id),
            other => unreachable!("displayed diversity only fails on unknown users: {other}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub account: AccountId,
    pub rank: usize,
    pub marginal_gain: f64,
    /// Displayed score once this and every higher-ranked account is followed.
    pub cumulative_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfState {
    pub user: AccountId,
    pub selected: Vec<AccountId>,
    pub current_score: f64,
}

/// Sample-graph nodes other than the user that the user does not already
/// neighbor and that carry a Left or Right label.
pub fn candidate_set(
    user: &AccountId,
    sample: &MutualGraph,
    labels: &LabelMap,
) -> Result<BTreeSet<AccountId>, RecommendError> {
    let u = sample.index_of(user).ok_or_else(|| RecommendError::UnknownUser(user.clone()))?;
    let neighbors = sample.neighbor_indices(u);
    Ok(sample
        .ids()
        .iter()
        .enumerate()
        .filter(|(i, id)| {
            *i != u
                && neighbors.binary_search(i).is_err()
                && labels.get(*id).is_some_and(|l| l.is_partisan())
        })
        .map(|(_, id)| id.clone())
        .collect())
}

/// Running Left/Right PageRank masses, accumulated in the same order as
/// [`displayed_diversity_with`] so scores agree bit for bit.
#[derive(Clone, Copy, Debug)]
struct Masses {
    left: f64,
    right: f64,
}

impl Masses {
    fn with(self, label: IdeologyLabel, weight: f64) -> Self {
        match label {
            IdeologyLabel::Left => Self { left: self.left + weight, ..self },
            IdeologyLabel::Right => Self { right: self.right + weight, ..self },
            IdeologyLabel::Unsure => self,
        }
    }

    fn score(self) -> f64 {
        mass_entropy(self.left, self.right)
    }
}

struct Context<'a> {
    user: &'a AccountId,
    sample: &'a MutualGraph,
    pagerank: &'a PageRankVector,
    labels: &'a LabelMap,
}

impl Context<'_> {
    fn masses(&self, follows: &[AccountId]) -> Result<Masses, RecommendError> {
        let mut seen: HashSet<&AccountId> = HashSet::new();
        let mut masses = Masses { left: 0.0, right: 0.0 };
        let neighbors = self
            .sample
            .neighbors(self.user)
            .map_err(|_| RecommendError::UnknownUser(self.user.clone()))?;
        for id in neighbors.chain(follows.iter()) {
            if id == self.user || !seen.insert(id) {
                continue;
            }
            if let Some(&label) = self.labels.get(id) {
                masses = masses.with(label, self.weight(id));
            }
        }
        Ok(masses)
    }

    fn weight(&self, id: &AccountId) -> f64 {
        self.pagerank.get(id).unwrap_or(0.0)
    }
}

/// Change in displayed score from following `candidate` on top of the
/// user's neighbors and `hypothetical_follows`. May be negative.
pub fn marginal_gain(
    user: &AccountId,
    hypothetical_follows: &[AccountId],
    candidate: &AccountId,
    sample: &MutualGraph,
    pagerank: &PageRankVector,
    labels: &LabelMap,
) -> Result<f64, RecommendError> {
    let eligible = candidate_set(user, sample, labels)?;
    if !eligible.contains(candidate) || hypothetical_follows.contains(candidate) {
        return Err(RecommendError::IneligibleCandidate(candidate.clone()));
    }
    let ctx = Context { user, sample, pagerank, labels };
    let base = ctx.masses(hypothetical_follows)?;
    let after = base.with(labels[candidate], ctx.weight(candidate));
    Ok(after.score() - base.score())
}

/// Picks up to `max_n` accounts one at a time, each maximising the gain
/// given the earlier picks. Stops early once no candidate has positive
/// gain. Ties prefer higher PageRank, then the smaller id.
pub fn recommend(
    user: &AccountId,
    sample: &MutualGraph,
    pagerank: &PageRankVector,
    labels: &LabelMap,
    max_n: usize,
) -> Result<Vec<Recommendation>, RecommendError> {
    let mut remaining: Vec<AccountId> = candidate_set(user, sample, labels)?.into_iter().collect();
    let ctx = Context { user, sample, pagerank, labels };
    let mut masses = ctx.masses(&[])?;
    let mut out: Vec<Recommendation> = Vec::new();

    while out.len() < max_n {
        let current = masses.score();
        let best = remaining
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let next = masses.with(labels[id], ctx.weight(id));
                (i, next, next.score() - current)
            })
            .filter(|(_, _, gain)| *gain > 0.0)
            .max_by(|a, b| {
                a.2.partial_cmp(&b.2)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| {
                        let (wa, wb) = (ctx.weight(&remaining[a.0]), ctx.weight(&remaining[b.0]));
                        wa.partial_cmp(&wb).unwrap_or(Ordering::Equal)
                    })
                    .then_with(|| remaining[b.0].cmp(&remaining[a.0]))
            });
        let Some((i, next, gain)) = best else { break };
        masses = next;
        out.push(Recommendation {
            account: remaining.remove(i),
            rank: out.len() + 1,
            marginal_gain: gain,
            cumulative_score: masses.score(),
        });
    }
    Ok(out)
}

/// Displayed score with the selected recommendations added as neighbors.
/// Repeated selections count once.
pub fn what_if(
    user: &AccountId,
    selected: &[AccountId],
    issued: &[Recommendation],
    sample: &MutualGraph,
    pagerank: &PageRankVector,
    labels: &LabelMap,
) -> Result<WhatIfState, RecommendError> {
    let mut unique: Vec<AccountId> = Vec::with_capacity(selected.len());
    for id in selected {
        if !issued.iter().any(|r| &r.account == id) {
            return Err(RecommendError::NotRecommended(id.clone()));
        }
        if !unique.contains(id) {
            unique.push(id.clone());
        }
    }
    let breakdown = displayed_diversity_with(user, &unique, sample, pagerank, labels)?;
    Ok(WhatIfState { user: user.clone(), selected: unique, current_score: breakdown.score })
}
