//! Synthetic interaction logs with planted preference clusters.
//!
//! Users are split evenly into clusters. Each cluster owns an item pool; a
//! session item comes from the pool with probability `alpha` and otherwise
//! uniformly from the items outside it. Social edges cross cluster lines with
//! probability `beta`, so friends need not share tastes.
//!
//! With `hot_set_size` set, each cluster narrows its pool to a random hot
//! subset that is redrawn every `drift_period_weeks`, counted back from the
//! last week. Recent sessions of other users then carry information that a
//! user's own older history does not.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Event, ItemId, UserId, WEEK_SECONDS};

#[derive(Debug, Error, PartialEq)]
#[error("invalid synthetic spec: {0}")]
pub struct SynthError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub sessions_per_user: usize,
    pub min_session_len: usize,
    pub max_session_len: usize,
    /// Probability that an item comes from the user's cluster pool.
    pub alpha: f64,
    /// Probability that a social edge joins two different clusters.
    pub beta: f64,
    pub weeks: usize,
    /// Edge draws per user; duplicates collapse.
    pub friends_per_user: usize,
    /// Fraction of the next cluster's block added to each pool.
    pub pool_overlap: f64,
    pub hot_set_size: Option<usize>,
    pub drift_period_weeks: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            users: 200,
            items: 50,
            clusters: 4,
            sessions_per_user: 8,
            min_session_len: 3,
            max_session_len: 8,
            alpha: 0.9,
            beta: 0.8,
            weeks: 20,
            friends_per_user: 3,
            pool_overlap: 0.0,
            hot_set_size: None,
            drift_period_weeks: 0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError(m));
        if self.clusters == 0 || self.clusters > self.items {
            return fail(format!("need 1..={} clusters, got {}", self.items, self.clusters));
        }
        if self.users < 2 || self.items == 0 {
            return fail("need at least two users and one item".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) || !(0.0..=1.0).contains(&self.pool_overlap) {
            return fail("beta and pool_overlap must lie in [0, 1]".into());
        }
        if self.min_session_len == 0 || self.min_session_len > self.max_session_len {
            return fail("session length range must satisfy 1 <= min <= max".into());
        }
        if self.sessions_per_user == 0 || self.sessions_per_user > self.weeks {
            return fail(format!(
                "sessions_per_user must be in 1..={} (one session per week)",
                self.weeks
            ));
        }
        if let Some(h) = self.hot_set_size {
            if h == 0 || self.drift_period_weeks == 0 {
                return fail("hot sets need a positive size and drift period".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub events: Vec<Event>,
    pub edges: Vec<(UserId, UserId)>,
    /// Cluster of each user, indexed by raw user id.
    pub clusters: Vec<usize>,
    /// Item pool of each cluster.
    pub pools: Vec<Vec<ItemId>>,
}

impl SynthData {
    pub fn events_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(out, "{}\t{}\t{}", e.user, e.item, e.timestamp);
        }
        out
    }

    pub fn edges_tsv(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a}\t{b}");
        }
        out
    }

    /// `user␉cluster` per user.
    pub fn clusters_tsv(&self) -> String {
        let mut out = String::new();
        for (u, c) in self.clusters.iter().enumerate() {
            let _ = writeln!(out, "{u}\t{c}");
        }
        out
    }

    pub fn in_pool(&self, user: UserId, item: ItemId) -> bool {
        self.pools[self.clusters[user.index()]].contains(&item)
    }
}

/// First week of the generated timeline, a multiple of the week length.
const EPOCH_WEEK: i64 = 2600;

pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.clusters;

    let mut clusters: Vec<usize> = (0..spec.users).map(|u| u % c).collect();
    clusters.shuffle(&mut rng);

    let blocks: Vec<Vec<ItemId>> = (0..c)
        .map(|k| {
            let lo = k * spec.items / c;
            let hi = (k + 1) * spec.items / c;
            (lo + 1..=hi).map(|i| ItemId(i as u64)).collect()
        })
        .collect();
    let pools: Vec<Vec<ItemId>> = (0..c)
        .map(|k| {
            let mut pool = blocks[k].clone();
            if c > 1 {
                let next = &blocks[(k + 1) % c];
                let extra = (spec.pool_overlap * next.len() as f64).ceil() as usize;
                pool.extend(next.iter().take(extra));
            }
            pool
        })
        .collect();
    let outside: Vec<Vec<ItemId>> = pools
        .iter()
        .map(|pool| {
            let set: BTreeSet<ItemId> = pool.iter().copied().collect();
            (1..=spec.items as u64).map(ItemId).filter(|i| !set.contains(i)).collect()
        })
        .collect();

    let periods = if spec.hot_set_size.is_some() {
        spec.weeks.div_ceil(spec.drift_period_weeks)
    } else {
        1
    };
    // hot[cluster][period], period 0 being the one that ends at the last week
    let hot: Vec<Vec<Vec<ItemId>>> = pools
        .iter()
        .map(|pool| {
            (0..periods)
                .map(|_| match spec.hot_set_size {
                    Some(h) => pool.choose_multiple(&mut rng, h.min(pool.len())).copied().collect(),
                    None => pool.clone(),
                })
                .collect()
        })
        .collect();

    let mut events = Vec::new();
    let all_weeks: Vec<usize> = (0..spec.weeks).collect();
    for (u, &cluster) in clusters.iter().enumerate() {
        let mut weeks: Vec<usize> = all_weeks
            .choose_multiple(&mut rng, spec.sessions_per_user)
            .copied()
            .collect();
        weeks.sort_unstable();
        for w in weeks {
            let period = if spec.hot_set_size.is_some() {
                (spec.weeks - 1 - w) / spec.drift_period_weeks
            } else {
                0
            };
            let source = &hot[cluster][period];
            let len = rng.random_range(spec.min_session_len..=spec.max_session_len);
            let base = (EPOCH_WEEK + w as i64) * WEEK_SECONDS;
            for pos in 0..len {
                let from_pool = rng.random::<f64>() < spec.alpha || outside[cluster].is_empty();
                let item = if from_pool {
                    *source.choose(&mut rng).expect("pools are non-empty")
                } else {
                    *outside[cluster].choose(&mut rng).expect("checked non-empty")
                };
                events.push(Event {
                    user: UserId(u as u64),
                    item,
                    timestamp: base + 3600 * (pos as i64 + 1),
                });
            }
        }
    }

    let members: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..spec.users).filter(|&u| clusters[u] == k).collect())
        .collect();
    let mut edges = BTreeSet::new();
    for u in 0..spec.users {
        for _ in 0..spec.friends_per_user {
            let cross = c > 1 && rng.random::<f64>() < spec.beta;
            let partner = if cross {
                let mut k = rng.random_range(0..c - 1);
                if k >= clusters[u] {
                    k += 1;
                }
                members[k].choose(&mut rng).copied()
            } else {
                let same: Vec<usize> = members[clusters[u]].iter().copied().filter(|&v| v != u).collect();
                same.choose(&mut rng).copied()
            };
            if let Some(v) = partner {
                edges.insert((UserId(u.min(v) as u64), UserId(u.max(v) as u64)));
            }
        }
    }

    Ok(SynthData {
        events,
        edges: edges.into_iter().collect(),
        clusters,
        pools,
    })
}
