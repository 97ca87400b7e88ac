//! Like-minded peer and social friend mining, plus fixed-size sampling.
//!
//! A like-minded peer of a target user is any other user whose history
//! contains at least one item of the target's current session. A social
//! friend is any user with a social edge to the target and a non-empty
//! history. History for both means sessions in weeks strictly before the
//! target's current-session week.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, SessionStore, UserId, Week};

/// Inverted index `item → (week, user, session index)` sorted by week.
#[derive(Debug, Clone, Default)]
pub struct ItemUserIndex {
    occurrences: HashMap<ItemId, Vec<(Week, UserId, usize)>>,
}

impl ItemUserIndex {
    pub fn build(store: &SessionStore) -> Self {
        let mut occurrences: HashMap<ItemId, Vec<(Week, UserId, usize)>> = HashMap::new();
        for s in store.all_sessions() {
            for &item in &s.items {
                let list = occurrences.entry(item).or_default();
                if list.last() != Some(&(s.week, s.owner, s.index)) {
                    list.push((s.week, s.owner, s.index));
                }
            }
        }
        for list in occurrences.values_mut() {
            list.sort_unstable();
        }
        Self { occurrences }
    }

    pub fn occurrences(&self, item: ItemId) -> &[(Week, UserId, usize)] {
        self.occurrences.get(&item).map_or(&[], Vec::as_slice)
    }

    /// Occurrences of `item` in weeks strictly before `week`.
    pub fn occurrences_before(&self, item: ItemId, week: Week) -> &[(Week, UserId, usize)] {
        let list = self.occurrences(item);
        &list[..list.partition_point(|o| o.0 < week)]
    }
}

/// Users other than `target` whose pre-cutoff history shares an item with
/// `current`, mapped to the number of matching (item, session) hits.
pub fn lmp_candidate_volumes(
    index: &ItemUserIndex,
    target: UserId,
    cutoff: Week,
    current: &[ItemId],
) -> BTreeMap<UserId, usize> {
    let distinct: BTreeSet<ItemId> = current.iter().copied().collect();
    let mut out = BTreeMap::new();
    for item in distinct {
        for &(_, user, _) in index.occurrences_before(item, cutoff) {
            if user != target {
                *out.entry(user).or_insert(0) += 1;
            }
        }
    }
    out
}

pub fn lmp_candidates(
    index: &ItemUserIndex,
    target: UserId,
    cutoff: Week,
    current: &[ItemId],
) -> BTreeSet<UserId> {
    lmp_candidate_volumes(index, target, cutoff, current)
        .into_keys()
        .collect()
}

pub fn friend_candidates(store: &SessionStore, target: UserId, cutoff: Week) -> BTreeSet<UserId> {
    store
        .friends(target)
        .iter()
        .copied()
        .filter(|&u| u != target && !store.history_before(u, cutoff).is_empty())
        .collect()
}

/// Draws exactly `size` users: without replacement when there are enough
/// candidates, otherwise every candidate once plus uniform duplicates.
/// Returns an empty list for an empty candidate set.
pub fn sample_fixed<R: Rng + ?Sized>(candidates: &[UserId], size: usize, rng: &mut R) -> Vec<UserId> {
    if candidates.is_empty() || size == 0 {
        return Vec::new();
    }
    if candidates.len() >= size {
        return rand::seq::index::sample(rng, candidates.len(), size)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
    }
    let mut out = candidates.to_vec();
    while out.len() < size {
        out.push(candidates[rng.random_range(0..candidates.len())]);
    }
    out
}

/// Like [`sample_fixed`] but candidates are drawn proportionally to weight.
pub fn sample_weighted<R: Rng + ?Sized>(
    candidates: &[(UserId, f64)],
    size: usize,
    rng: &mut R,
) -> Vec<UserId> {
    if candidates.is_empty() || size == 0 {
        return Vec::new();
    }
    if candidates.len() >= size {
        let picked = rand::seq::index::sample_weighted(rng, candidates.len(), |i| candidates[i].1, size)
            .expect("weights are positive and finite");
        return picked.into_iter().map(|i| candidates[i].0).collect();
    }
    let mut out: Vec<UserId> = candidates.iter().map(|c| c.0).collect();
    let dist = WeightedIndex::new(candidates.iter().map(|c| c.1)).expect("positive weights");
    while out.len() < size {
        out.push(candidates[dist.sample(rng)].0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighbourKind {
    Lmp,
    Friend,
}

impl NeighbourKind {
    pub fn tag(self) -> &'static str {
        match self {
            NeighbourKind::Lmp => "lmp",
            NeighbourKind::Friend => "sf",
        }
    }
}

/// Which of a neighbour's sessions feed its interest encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NeighbourHistory {
    /// The latest session before the cutoff.
    #[default]
    Last,
    /// All sessions before the cutoff, concatenated in order.
    AllConcat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub lmp_size: usize,
    pub friend_size: usize,
    pub use_lmp: bool,
    pub use_friends: bool,
    pub volume_weighted: bool,
    pub history: NeighbourHistory,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            lmp_size: 15,
            friend_size: 25,
            use_lmp: true,
            use_friends: true,
            volume_weighted: false,
            history: NeighbourHistory::Last,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbour {
    pub user: UserId,
    pub kind: NeighbourKind,
    /// Index of the latest session used for the encoding.
    pub session_index: usize,
    pub items: Vec<ItemId>,
}

/// Sampled neighbours for one (target, current session) instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighbourSample {
    pub lmp: Vec<Neighbour>,
    pub friends: Vec<Neighbour>,
}

impl NeighbourSample {
    /// Union view: peers first, then friends. Overlapping users appear twice.
    pub fn all(&self) -> impl Iterator<Item = &Neighbour> {
        self.lmp.iter().chain(&self.friends)
    }

    pub fn len(&self) -> usize {
        self.lmp.len() + self.friends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn attach(
    store: &SessionStore,
    users: Vec<UserId>,
    kind: NeighbourKind,
    cutoff: Week,
    history: NeighbourHistory,
) -> Vec<Neighbour> {
    users
        .into_iter()
        .filter_map(|user| {
            let hist = store.history_before(user, cutoff);
            let last = hist.last()?;
            let items = match history {
                NeighbourHistory::Last => last.items.clone(),
                NeighbourHistory::AllConcat => hist.iter().flat_map(|s| s.items.iter().copied()).collect(),
            };
            Some(Neighbour {
                user,
                kind,
                session_index: last.index,
                items,
            })
        })
        .collect()
}

/// Mines both candidate sets and samples the configured quotas.
pub fn build_sample<R: Rng + ?Sized>(
    store: &SessionStore,
    index: &ItemUserIndex,
    target: UserId,
    cutoff: Week,
    current: &[ItemId],
    config: &SamplingConfig,
    rng: &mut R,
) -> NeighbourSample {
    let lmp_users = if config.use_lmp {
        let volumes = lmp_candidate_volumes(index, target, cutoff, current);
        if config.volume_weighted {
            let weighted: Vec<(UserId, f64)> = volumes.into_iter().map(|(u, c)| (u, c as f64)).collect();
            sample_weighted(&weighted, config.lmp_size, rng)
        } else {
            let cands: Vec<UserId> = volumes.into_keys().collect();
            sample_fixed(&cands, config.lmp_size, rng)
        }
    } else {
        Vec::new()
    };
    let friend_users = if config.use_friends {
        let cands: Vec<UserId> = friend_candidates(store, target, cutoff).into_iter().collect();
        sample_fixed(&cands, config.friend_size, rng)
    } else {
        Vec::new()
    };
    NeighbourSample {
        lmp: attach(store, lmp_users, NeighbourKind::Lmp, cutoff, config.history),
        friends: attach(store, friend_users, NeighbourKind::Friend, cutoff, config.history),
    }
}

/// Appends `user␉session_index␉kind␉neighbour_id` rows for one instance.
pub fn write_sample_tsv(out: &mut String, user: UserId, session_index: usize, sample: &NeighbourSample) {
    for n in sample.all() {
        let _ = writeln!(out, "{user}\t{session_index}\t{}\t{}", n.kind.tag(), n.user);
    }
}
