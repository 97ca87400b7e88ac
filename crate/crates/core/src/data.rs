//! Event ingestion, weekly session segmentation and the holdout split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WEEK_SECONDS: i64 = 604_800;

pub type Week = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u64);

/// Item identifier. `ItemId(0)` is the padding item and never names a real item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u64);

pub const PADDING_ITEM: ItemId = ItemId(0);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn week_of(timestamp: i64) -> Week {
    timestamp.div_euclid(WEEK_SECONDS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub owner: UserId,
    /// 1-based position in the owner's chronology.
    pub index: usize,
    pub week: Week,
    pub items: Vec<ItemId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{file}: line {line}, column {column}: {message}")]
    Ingest {
        file: &'static str,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("inconsistent data: {0}")]
    Invalid(String),
}

/// Undirected social edge stored with the smaller id first.
pub type Edge = (UserId, UserId);

fn normalize_edge(a: UserId, b: UserId) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Per-user chronological sessions plus the social graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionStore {
    sessions: BTreeMap<UserId, Vec<Session>>,
    edges: BTreeSet<Edge>,
    adjacency: BTreeMap<UserId, Vec<UserId>>,
    items: BTreeSet<ItemId>,
}

impl SessionStore {
    /// Groups a flat list of sessions by owner and validates it with
    /// [`SessionStore::from_parts`].
    pub fn from_sessions(
        sessions: impl IntoIterator<Item = Session>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, DataError> {
        let mut by_user: BTreeMap<UserId, Vec<Session>> = BTreeMap::new();
        for s in sessions {
            by_user.entry(s.owner).or_default().push(s);
        }
        Self::from_parts(by_user, edges)
    }

    /// Builds a store, checking chronology, index contiguity and edge sanity.
    pub fn from_parts(
        sessions: BTreeMap<UserId, Vec<Session>>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, DataError> {
        let mut items = BTreeSet::new();
        for (user, list) in &sessions {
            for (pos, s) in list.iter().enumerate() {
                if s.owner != *user {
                    return Err(DataError::Invalid(format!(
                        "session {} listed under user {user} is owned by {}",
                        s.index, s.owner
                    )));
                }
                if s.index != pos + 1 {
                    return Err(DataError::Invalid(format!(
                        "user {user}: session indices must run 1.. consecutively, found {} at position {}",
                        s.index,
                        pos + 1
                    )));
                }
                if s.items.is_empty() {
                    return Err(DataError::Invalid(format!(
                        "user {user}: session {} is empty",
                        s.index
                    )));
                }
                if pos > 0 && list[pos - 1].week > s.week {
                    return Err(DataError::Invalid(format!(
                        "user {user}: session {} precedes its predecessor in time",
                        s.index
                    )));
                }
                if s.items.contains(&PADDING_ITEM) {
                    return Err(DataError::Invalid(format!(
                        "user {user}: session {} contains the padding item",
                        s.index
                    )));
                }
                items.extend(s.items.iter().copied());
            }
        }
        let mut store = Self {
            sessions: sessions.into_iter().filter(|(_, v)| !v.is_empty()).collect(),
            edges: BTreeSet::new(),
            adjacency: BTreeMap::new(),
            items,
        };
        store.set_edges(edges);
        Ok(store)
    }

    pub fn with_edges(mut self, edges: impl IntoIterator<Item = Edge>) -> Self {
        self.set_edges(edges);
        self
    }

    fn set_edges(&mut self, edges: impl IntoIterator<Item = Edge>) {
        self.edges = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| normalize_edge(a, b))
            .collect();
        self.adjacency.clear();
        for &(a, b) in &self.edges {
            self.adjacency.entry(a).or_default().push(b);
            self.adjacency.entry(b).or_default().push(a);
        }
    }

    /// Users that own at least one session, ascending.
    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.sessions.keys().copied()
    }

    pub fn num_users(&self) -> usize {
        self.sessions.len()
    }

    pub fn sessions(&self, user: UserId) -> &[Session] {
        self.sessions.get(&user).map_or(&[], Vec::as_slice)
    }

    pub fn all_sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values().flatten()
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.values().map(Vec::len).sum()
    }

    pub fn num_events(&self) -> usize {
        self.all_sessions().map(|s| s.items.len()).sum()
    }

    /// Sessions of `user` that lie strictly before `week`.
    pub fn history_before(&self, user: UserId, week: Week) -> &[Session] {
        let list = self.sessions(user);
        let end = list.partition_point(|s| s.week < week);
        &list[..end]
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn has_edge(&self, a: UserId, b: UserId) -> bool {
        self.edges.contains(&normalize_edge(a, b))
    }

    /// Direct social neighbours of `user`, ascending.
    pub fn friends(&self, user: UserId) -> &[UserId] {
        self.adjacency.get(&user).map_or(&[], Vec::as_slice)
    }

    pub fn items(&self) -> &BTreeSet<ItemId> {
        &self.items
    }

    pub fn max_week(&self) -> Option<Week> {
        self.all_sessions().map(|s| s.week).max()
    }

    pub fn max_user_id(&self) -> Option<UserId> {
        let from_sessions = self.sessions.keys().next_back().copied();
        let from_edges = self.edges.iter().map(|&(_, b)| b).max();
        from_sessions.max(from_edges)
    }

    pub fn max_item_id(&self) -> Option<ItemId> {
        self.items.iter().next_back().copied()
    }

    /// Keeps only sessions strictly before `week`; edges are retained.
    pub fn truncated_before(&self, week: Week) -> Self {
        let sessions = self
            .sessions
            .iter()
            .map(|(&u, list)| (u, list.iter().filter(|s| s.week < week).cloned().collect()))
            .collect();
        Self::from_parts(sessions, self.edges.iter().copied())
            .expect("a prefix of a valid store is valid")
    }

    /// Serialises sessions as `user␉index␉week␉item,item,…`.
    pub fn sessions_tsv(&self) -> String {
        let mut out = String::new();
        for s in self.all_sessions() {
            let items: Vec<String> = s.items.iter().map(|i| i.0.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{}\t{}", s.owner, s.index, s.week, items.join(","));
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

    pub fn from_tsv(sessions_text: &str, edges_text: &str) -> Result<Self, DataError> {
        let mut sessions: BTreeMap<UserId, Vec<Session>> = BTreeMap::new();
        for (ln, line) in content_lines(sessions_text) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(ingest("sessions", ln, cols.len().min(4) + 1, "expected 4 columns"));
            }
            let user = UserId(parse_field("sessions", ln, 1, cols[0])?);
            let index = parse_field::<usize>("sessions", ln, 2, cols[1])?;
            let week = parse_field::<i64>("sessions", ln, 3, cols[2])?;
            let items = cols[3]
                .split(',')
                .map(|t| parse_field::<u64>("sessions", ln, 4, t).map(ItemId))
                .collect::<Result<Vec<_>, _>>()?;
            sessions.entry(user).or_default().push(Session {
                owner: user,
                index,
                week,
                items,
            });
        }
        let (_, edges) = parse_events("", edges_text)?;
        Self::from_parts(sessions, edges)
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn ingest(file: &'static str, line: usize, column: usize, message: impl Into<String>) -> DataError {
    DataError::Ingest {
        file,
        line,
        column,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(
    file: &'static str,
    line: usize,
    column: usize,
    text: &str,
) -> Result<T, DataError> {
    text.trim()
        .parse()
        .map_err(|_| ingest(file, line, column, format!("cannot parse {:?} as an integer", text)))
}

/// Parses tab-separated `user␉item␉timestamp` events and `user␉user` edges.
///
/// Blank lines and lines starting with `#` are skipped. Edges are undirected;
/// duplicates and self-loops are dropped.
pub fn parse_events(
    event_text: &str,
    edge_text: &str,
) -> Result<(Vec<Event>, BTreeSet<Edge>), DataError> {
    let mut events = Vec::new();
    for (ln, line) in content_lines(event_text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(ingest("events", ln, cols.len() + 1, "expected user, item and timestamp"));
        }
        let user = UserId(parse_field("events", ln, 1, cols[0])?);
        let item = ItemId(parse_field("events", ln, 2, cols[1])?);
        let timestamp: i64 = parse_field("events", ln, 3, cols[2])?;
        if item == PADDING_ITEM {
            return Err(ingest("events", ln, 2, "item id 0 is reserved for padding"));
        }
        if timestamp < 0 {
            return Err(ingest("events", ln, 3, "timestamp must be non-negative"));
        }
        events.push(Event {
            user,
            item,
            timestamp,
        });
    }
    let mut edges = BTreeSet::new();
    for (ln, line) in content_lines(edge_text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(ingest("edges", ln, cols.len() + 1, "expected two user ids"));
        }
        let a = UserId(parse_field("edges", ln, 1, cols[0])?);
        let b = UserId(parse_field("edges", ln, 2, cols[1])?);
        if a != b {
            edges.insert(normalize_edge(a, b));
        }
    }
    Ok((events, edges))
}

/// Groups each user's events into fixed 7-day buckets, one session per
/// non-empty bucket, ordered by timestamp (ties by item id).
pub fn segment_weekly(events: &[Event]) -> SessionStore {
    let mut by_user: BTreeMap<UserId, Vec<(i64, ItemId)>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user).or_default().push((e.timestamp, e.item));
    }
    let mut sessions = BTreeMap::new();
    for (user, mut evs) in by_user {
        evs.sort_unstable();
        let mut list: Vec<Session> = Vec::new();
        for (ts, item) in evs {
            let week = week_of(ts);
            match list.last_mut() {
                Some(s) if s.week == week => s.items.push(item),
                _ => list.push(Session {
                    owner: user,
                    index: list.len() + 1,
                    week,
                    items: vec![item],
                }),
            }
        }
        sessions.insert(user, list);
    }
    SessionStore::from_parts(sessions, std::iter::empty()).expect("segmentation yields a valid store")
}

/// Dense id assignment. Users map to `0..|U|`, items to `1..=|I|`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMaps {
    users: Vec<u64>,
    items: Vec<u64>,
    user_lookup: HashMap<u64, UserId>,
    item_lookup: HashMap<u64, ItemId>,
}

impl IdMaps {
    pub fn from_raw(users: Vec<u64>, items: Vec<u64>) -> Self {
        let user_lookup = users
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, UserId(i as u64)))
            .collect();
        let item_lookup = items
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, ItemId(i as u64 + 1)))
            .collect();
        Self {
            users,
            items,
            user_lookup,
            item_lookup,
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user(&self, raw: u64) -> Option<UserId> {
        self.user_lookup.get(&raw).copied()
    }

    pub fn item(&self, raw: u64) -> Option<ItemId> {
        self.item_lookup.get(&raw).copied()
    }

    pub fn raw_user(&self, id: UserId) -> Option<u64> {
        self.users.get(id.index()).copied()
    }

    pub fn raw_item(&self, id: ItemId) -> Option<u64> {
        id.index().checked_sub(1).and_then(|i| self.items.get(i)).copied()
    }

    /// Two-column TSV `dense␉raw` for users and items.
    pub fn to_tsv(&self) -> (String, String) {
        let mut users = String::new();
        for (i, r) in self.users.iter().enumerate() {
            let _ = writeln!(users, "{i}\t{r}");
        }
        let mut items = String::new();
        for (i, r) in self.items.iter().enumerate() {
            let _ = writeln!(items, "{}\t{r}", i + 1);
        }
        (users, items)
    }

    pub fn from_tsv(users_text: &str, items_text: &str) -> Result<Self, DataError> {
        let read = |file: &'static str, text: &str, base: u64| -> Result<Vec<u64>, DataError> {
            let mut out = Vec::new();
            for (ln, line) in content_lines(text) {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 2 {
                    return Err(ingest(file, ln, cols.len().min(2) + 1, "expected dense and raw id"));
                }
                let dense: u64 = parse_field(file, ln, 1, cols[0])?;
                if dense != out.len() as u64 + base {
                    return Err(ingest(file, ln, 1, "dense ids must be contiguous"));
                }
                out.push(parse_field(file, ln, 2, cols[1])?);
            }
            Ok(out)
        };
        Ok(Self::from_raw(read("users", users_text, 0)?, read("items", items_text, 1)?))
    }
}

/// Re-labels users and items densely in ascending raw-id order. Edges that
/// touch users without events are dropped.
pub fn reindex(store: &SessionStore) -> (SessionStore, IdMaps) {
    let users: Vec<u64> = store.users().map(|u| u.0).collect();
    let items: Vec<u64> = store.items().iter().map(|i| i.0).collect();
    let maps = IdMaps::from_raw(users, items);
    let sessions = store
        .sessions
        .iter()
        .map(|(u, list)| {
            let nu = maps.user(u.0).expect("user present");
            let list = list
                .iter()
                .map(|s| Session {
                    owner: nu,
                    index: s.index,
                    week: s.week,
                    items: s.items.iter().map(|i| maps.item(i.0).expect("item present")).collect(),
                })
                .collect();
            (nu, list)
        })
        .collect();
    let edges: Vec<Edge> = store
        .edges
        .iter()
        .filter_map(|(a, b)| Some((maps.user(a.0)?, maps.user(b.0)?)))
        .collect();
    let out = SessionStore::from_parts(sessions, edges).expect("relabelling keeps validity");
    (out, maps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitPart {
    Valid,
    Test,
}

impl SplitPart {
    pub fn tag(self) -> &'static str {
        match self {
            SplitPart::Valid => "valid",
            SplitPart::Test => "test",
        }
    }
}

/// One held-out (target user, current session) pair. History is the target's
/// training sessions; neighbours are read from the training window only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalInstance {
    pub user: UserId,
    pub session_index: usize,
    pub week: Week,
    pub items: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: SessionStore,
    pub valid: Vec<EvalInstance>,
    pub test: Vec<EvalInstance>,
    pub holdout_weeks: i64,
    /// First week of the evaluation window.
    pub boundary_week: Week,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[EvalInstance] {
        match part {
            SplitPart::Valid => &self.valid,
            SplitPart::Test => &self.test,
        }
    }

    /// Manifest with one `user␉session_index␉split` record per instance.
    pub fn manifest_tsv(&self) -> String {
        let mut out = format!("# holdout_weeks\t{}\n", self.holdout_weeks);
        for (part, list) in [(SplitPart::Valid, &self.valid), (SplitPart::Test, &self.test)] {
            for inst in list {
                let _ = writeln!(out, "{}\t{}\t{}", inst.user, inst.session_index, part.tag());
            }
        }
        out
    }

    /// Rebuilds a split from the full store and a manifest.
    pub fn from_manifest(store: &SessionStore, manifest: &str) -> Result<Self, DataError> {
        let holdout_weeks = manifest
            .lines()
            .find_map(|l| l.strip_prefix("# holdout_weeks\t"))
            .ok_or_else(|| DataError::Invalid("manifest lacks a holdout_weeks header".into()))?
            .trim()
            .parse::<i64>()
            .map_err(|_| DataError::Invalid("bad holdout_weeks header".into()))?;
        let (train, boundary_week) = train_window(store, holdout_weeks)?;
        let vocab = train.items().clone();
        let mut valid = Vec::new();
        let mut test = Vec::new();
        for (ln, line) in content_lines(manifest) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(ingest("manifest", ln, cols.len().min(3) + 1, "expected 3 columns"));
            }
            let user = UserId(parse_field("manifest", ln, 1, cols[0])?);
            let index: usize = parse_field("manifest", ln, 2, cols[1])?;
            let session = index
                .checked_sub(1)
                .and_then(|i| store.sessions(user).get(i))
                .ok_or_else(|| ingest("manifest", ln, 2, "no such session"))?;
            let inst = eval_instance(session, &vocab)
                .ok_or_else(|| ingest("manifest", ln, 2, "session is not a valid evaluation instance"))?;
            match cols[2] {
                "valid" => valid.push(inst),
                "test" => test.push(inst),
                other => return Err(ingest("manifest", ln, 3, format!("unknown split tag {other:?}"))),
            }
        }
        Ok(Self {
            train,
            valid,
            test,
            holdout_weeks,
            boundary_week,
        })
    }
}

fn train_window(store: &SessionStore, s: i64) -> Result<(SessionStore, Week), DataError> {
    if s < 1 {
        return Err(DataError::Config(format!("holdout weeks must be >= 1, got {s}")));
    }
    let max_week = store
        .max_week()
        .ok_or_else(|| DataError::Config("store has no sessions".into()))?;
    let boundary = max_week - s + 1;
    let train = store.truncated_before(boundary);
    if train.num_sessions() == 0 {
        return Err(DataError::Config(format!(
            "holdout of {s} weeks leaves no training sessions"
        )));
    }
    Ok((train, boundary))
}

fn eval_instance(session: &Session, vocab: &BTreeSet<ItemId>) -> Option<EvalInstance> {
    let items: Vec<ItemId> = session.items.iter().copied().filter(|i| vocab.contains(i)).collect();
    (items.len() >= 2).then_some(EvalInstance {
        user: session.owner,
        session_index: session.index,
        week: session.week,
        items,
    })
}

/// Holds out the final `s` weeks, filters items unseen in training and splits
/// the remaining evaluation sessions evenly at random into valid and test.
pub fn split_holdout(store: &SessionStore, s: i64, seed: u64) -> Result<DatasetSplit, DataError> {
    let (train, boundary_week) = train_window(store, s)?;
    let vocab = train.items().clone();
    let mut pool: Vec<EvalInstance> = store
        .all_sessions()
        .filter(|sess| sess.week >= boundary_week)
        .filter(|sess| !train.sessions(sess.owner).is_empty())
        .filter_map(|sess| eval_instance(sess, &vocab))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let test = pool.split_off(pool.len() / 2);
    let mut valid = pool;
    let mut test = test;
    let key = |i: &EvalInstance| (i.user, i.session_index);
    valid.sort_by_key(key);
    test.sort_by_key(key);
    Ok(DatasetSplit {
        train,
        valid,
        test,
        holdout_weeks: s,
        boundary_week,
    })
}

/// Summary statistics in the layout of a dataset description table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub social_links: usize,
    pub sessions: usize,
    pub avg_friends_per_user: f64,
    pub avg_events_per_user: f64,
    pub avg_session_length: f64,
}

impl StoreStats {
    pub fn compute(store: &SessionStore) -> Self {
        let users = store.num_users();
        let events = store.num_events();
        let sessions = store.num_sessions();
        let links = store.edges().len();
        let per_user = |x: f64| if users == 0 { 0.0 } else { x / users as f64 };
        Self {
            users,
            items: store.items().len(),
            events,
            social_links: links,
            sessions,
            avg_friends_per_user: per_user(2.0 * links as f64),
            avg_events_per_user: per_user(events as f64),
            avg_session_length: if sessions == 0 {
                0.0
            } else {
                events as f64 / sessions as f64
            },
        }
    }
}

impl fmt::Display for StoreStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# Users\t{}", self.users)?;
        writeln!(f, "# Items\t{}", self.items)?;
        writeln!(f, "# Events\t{}", self.events)?;
        writeln!(f, "# Social links\t{}", self.social_links)?;
        writeln!(f, "# Sessions\t{}", self.sessions)?;
        writeln!(f, "Avg. friends/user\t{:.2}", self.avg_friends_per_user)?;
        writeln!(f, "Avg. events/user\t{:.2}", self.avg_events_per_user)?;
        writeln!(f, "Avg. session length\t{:.2}", self.avg_session_length)
    }
}
