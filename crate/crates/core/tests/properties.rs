use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tegaarec::data::{
    parse_events, reindex, segment_weekly, split_holdout, Event, ItemId, SessionStore, UserId, PADDING_ITEM,
};
use tegaarec::masking::{assemble_batch, expand_session, SessionGroup};
use tegaarec::metrics::{ndcg_at_k, recall_at_k, EvalResult};
use tegaarec::model::{score_items, ScoredRanking};
use tegaarec::neighbours::{build_sample, ItemUserIndex, NeighbourSample, SamplingConfig};
use tegaarec::numerics::{Tape, Tensor};
use tegaarec::synth::{generate, SynthSpec};

const WEEK: i64 = 604_800;

fn events() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u64..8, 1u64..16, 0i64..7 * WEEK), 1..120).prop_map(|raw| {
        raw.into_iter()
            .map(|(u, i, t)| Event {
                user: UserId(u),
                item: ItemId(i),
                timestamp: t,
            })
            .collect()
    })
}

fn edges() -> impl Strategy<Value = Vec<(u64, u64)>> {
    prop::collection::vec((0u64..8, 0u64..8), 0..20)
}

fn store(events: &[Event], edges: &[(u64, u64)]) -> SessionStore {
    let edges = edges
        .iter()
        .filter(|(a, b)| a != b)
        .map(|&(a, b)| (UserId(a.min(b)), UserId(a.max(b))));
    segment_weekly(events).with_edges(edges)
}

fn events_of(store: &SessionStore) -> Vec<Event> {
    // timestamps are synthetic but keep week and within-week order
    store
        .all_sessions()
        .flat_map(|s| {
            s.items.iter().enumerate().map(move |(k, &item)| Event {
                user: s.owner,
                item,
                timestamp: s.week * WEEK + k as i64,
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sessions_are_chronological(evs in events()) {
        let st = segment_weekly(&evs);
        prop_assert_eq!(st.num_events(), evs.len());
        for u in st.users() {
            let sessions = st.sessions(u);
            for (t, s) in sessions.iter().enumerate() {
                prop_assert_eq!(s.index, t + 1);
                prop_assert!(!s.items.is_empty());
            }
            for pair in sessions.windows(2) {
                prop_assert!(pair[0].week < pair[1].week);
            }
        }
    }

    #[test]
    fn segmentation_ignores_order_and_is_idempotent(evs in events(), seed in any::<u64>()) {
        let st = segment_weekly(&evs);
        let mut shuffled = evs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&segment_weekly(&shuffled), &st);
        prop_assert_eq!(&segment_weekly(&events_of(&st)), &st);
    }

    #[test]
    fn store_tsv_round_trip(evs in events(), es in edges()) {
        let st = store(&evs, &es);
        let back = SessionStore::from_tsv(&st.sessions_tsv(), &st.edges_tsv()).unwrap();
        prop_assert_eq!(back, st);
    }

    #[test]
    fn edges_are_symmetric_without_self_loops(evs in events(), es in edges()) {
        let text: String = es.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
        let (_, parsed) = parse_events("", &text).unwrap();
        let st = segment_weekly(&evs).with_edges(parsed);
        for &(a, b) in st.edges() {
            prop_assert!(a != b);
            prop_assert!(st.has_edge(a, b) && st.has_edge(b, a));
        }
        for u in st.users() {
            for &f in st.friends(u) {
                prop_assert!(st.friends(f).contains(&u));
            }
        }
    }

    #[test]
    fn reindex_round_trips_raw_ids(evs in events(), es in edges()) {
        let st = store(&evs, &es);
        let (dense, maps) = reindex(&st);
        prop_assert!(!dense.items().contains(&PADDING_ITEM));
        prop_assert_eq!(maps.num_items(), st.items().len());
        for s in dense.all_sessions() {
            let raw_owner = UserId(maps.raw_user(s.owner).unwrap());
            let orig = &st.sessions(raw_owner)[s.index - 1];
            prop_assert_eq!(orig.week, s.week);
            let raw_items: Vec<ItemId> = s.items.iter().map(|&i| ItemId(maps.raw_item(i).unwrap())).collect();
            prop_assert_eq!(&raw_items, &orig.items);
        }
        for &(a, b) in dense.edges() {
            prop_assert!(st.has_edge(UserId(maps.raw_user(a).unwrap()), UserId(maps.raw_user(b).unwrap())));
        }
        let (users, items) = maps.to_tsv();
        prop_assert_eq!(tegaarec::data::IdMaps::from_tsv(&users, &items).unwrap(), maps);
    }

    #[test]
    fn holdout_invariants(evs in events(), s in 1i64..3, seed in any::<u64>()) {
        let st = segment_weekly(&evs);
        let Ok(split) = split_holdout(&st, s, seed) else { return Ok(()); };
        let vocab = split.train.items();
        let mut seen = BTreeSet::new();
        for inst in split.valid.iter().chain(&split.test) {
            prop_assert!(seen.insert((inst.user, inst.session_index)), "valid and test overlap");
            prop_assert!(inst.items.len() >= 2);
            prop_assert!(inst.items.iter().all(|i| vocab.contains(i)));
            prop_assert!(inst.week >= split.boundary_week);
            prop_assert!(inst.week > st.max_week().unwrap() - s);
            prop_assert!(!split.train.history_before(inst.user, inst.week).is_empty());
        }
        prop_assert!(split.train.max_week().unwrap() < split.boundary_week);
        let back = tegaarec::data::DatasetSplit::from_manifest(&st, &split.manifest_tsv()).unwrap();
        prop_assert_eq!(back, split);
    }

    #[test]
    fn expansion_counts_and_reconstructs(raw in prop::collection::vec(1u64..50, 2..30)) {
        let items: Vec<ItemId> = raw.iter().map(|&i| ItemId(i)).collect();
        let out = expand_session(&items).unwrap();
        prop_assert_eq!(out.len(), items.len() - 1);
        for (k, inst) in out.iter().enumerate() {
            prop_assert_eq!(inst.len, k + 1);
            prop_assert_eq!(inst.input.len(), items.len() - 1);
            prop_assert!(inst.target != PADDING_ITEM);
            prop_assert!(inst.input[inst.len..].iter().all(|&i| i == PADDING_ITEM));
            let mut rebuilt = inst.prefix().to_vec();
            rebuilt.extend(out[k..].iter().map(|i| i.target));
            prop_assert_eq!(&rebuilt, &items);
        }
    }

    #[test]
    fn batches_preserve_rows(lens in prop::collection::vec(2usize..12, 1..8), batch in 1usize..20) {
        let groups: Vec<SessionGroup> = lens
            .iter()
            .enumerate()
            .map(|(g, &n)| SessionGroup {
                user: UserId(g as u64),
                instances: expand_session(&(1..=n as u64).map(ItemId).collect::<Vec<_>>()).unwrap(),
                sample: Arc::new(NeighbourSample::default()),
            })
            .collect();
        let batches = assemble_batch(&groups, batch);
        let flat: Vec<_> = groups.iter().flat_map(|g| g.instances.iter().map(move |i| (g.user, i))).collect();
        prop_assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), flat.len());
        let mut row = 0;
        for b in &batches {
            prop_assert!(b.len() <= batch);
            let width = b.lengths.iter().copied().max().unwrap();
            prop_assert_eq!(b.width(), width);
            for r in 0..b.len() {
                let (user, inst) = flat[row];
                prop_assert_eq!(b.users[r], user);
                prop_assert_eq!(b.prefix(r), inst.prefix());
                prop_assert_eq!(b.targets[r], inst.target);
                prop_assert!(b.inputs[r][b.lengths[r]..].iter().all(|&i| i == PADDING_ITEM));
                row += 1;
            }
        }
    }

    #[test]
    fn sampled_neighbours_satisfy_their_definitions(
        evs in events(),
        es in edges(),
        target in 0u64..8,
        current in prop::collection::vec(1u64..16, 1..6),
        week in 1i64..8,
        seed in any::<u64>(),
    ) {
        let st = store(&evs, &es);
        let index = ItemUserIndex::build(&st);
        let target = UserId(target);
        let current: Vec<ItemId> = current.into_iter().map(ItemId).collect();
        let config = SamplingConfig { lmp_size: 4, friend_size: 3, ..SamplingConfig::default() };
        let draw = |s| build_sample(&st, &index, target, week, &current, &config, &mut ChaCha8Rng::seed_from_u64(s));
        let sample = draw(seed);
        prop_assert_eq!(&sample, &draw(seed));
        prop_assert!(sample.lmp.len() <= 4 && sample.friends.len() <= 3);
        for n in &sample.lmp {
            prop_assert!(n.user != target);
            let shares = st
                .history_before(n.user, week)
                .iter()
                .any(|s| s.items.iter().any(|i| current.contains(i)));
            prop_assert!(shares);
        }
        for n in &sample.friends {
            prop_assert!(n.user != target);
            prop_assert!(st.has_edge(target, n.user));
            prop_assert!(!st.history_before(n.user, week).is_empty());
        }
        for n in sample.all() {
            let last = st.history_before(n.user, week).last().unwrap();
            prop_assert_eq!(n.session_index, last.index);
            prop_assert_eq!(&n.items, &last.items);
        }
    }

    #[test]
    fn recall_and_ndcg_ordering(ranks in prop::collection::vec(1usize..60, 1..200)) {
        let r = EvalResult::from_ranks(&[10, 20], ranks);
        prop_assert!(r.recall_at(10).unwrap() <= r.recall_at(20).unwrap());
        prop_assert!(r.ndcg_at(20).unwrap() <= r.recall_at(20).unwrap());
        prop_assert!(r.ndcg_at(10).unwrap() <= r.ndcg_at(20).unwrap());
    }

    #[test]
    fn metrics_ignore_monotone_transforms(scores in prop::collection::vec(-40i32..40, 2..60), t in 0usize..60) {
        let target = ItemId((t % scores.len()) as u64 + 1);
        let base = ScoredRanking::new(scores.iter().map(|&s| s as f64).collect());
        let warped = ScoredRanking::new(scores.iter().map(|&s| (s as f64 / 7.0).exp() * 3.0 + 1.0).collect());
        let cubed = ScoredRanking::new(scores.iter().map(|&s| (s as f64).powi(3)).collect());
        for other in [&warped, &cubed] {
            prop_assert_eq!(base.rank_of(target), other.rank_of(target));
            for k in [10, 20] {
                let (a, b) = (base.top_k(k), other.top_k(k));
                prop_assert_eq!(recall_at_k(&a, target, k), recall_at_k(&b, target, k));
                prop_assert_eq!(ndcg_at_k(&a, target, k), ndcg_at_k(&b, target, k));
            }
        }
    }

    #[test]
    fn item_table_shift_keeps_the_ranking(
        h in prop::collection::vec(-3i32..4, 4),
        table in prop::collection::vec(-5i32..6, 4 * 9),
        shift in prop::collection::vec(-5i32..6, 4),
    ) {
        let h: Vec<f64> = h.into_iter().map(f64::from).collect();
        let plain = Tensor::matrix(9, 4, table.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let shifted = Tensor::from_fn(9, 4, |r, c| plain.get(r, c) + f64::from(shift[c]));
        let (a, b) = (score_items(&h, &plain), score_items(&h, &shifted));
        prop_assert_eq!(a.top_k(8), b.top_k(8));
        let p: f64 = a.probabilities().iter().sum();
        prop_assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_cross_entropy_is_shift_invariant(
        vals in prop::collection::vec(-20.0f64..20.0, 12),
        shifts in prop::collection::vec(-50.0f64..50.0, 3),
        targets in prop::collection::vec(0usize..4, 3),
    ) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 4, vals.clone()).unwrap());
        let soft = x.row_softmax().value();
        for r in 0..3 {
            prop_assert!((soft.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let moved: Vec<f64> = vals.iter().enumerate().map(|(i, v)| v + shifts[i / 4]).collect();
        let y = tape.constant(Tensor::matrix(3, 4, moved).unwrap());
        let a = x.cross_entropy(&targets).unwrap().value().item().unwrap();
        let b = y.cross_entropy(&targets).unwrap().value().item().unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn synthetic_files_round_trip(seed in any::<u64>(), alpha in 0.5f64..0.95) {
        let spec = SynthSpec { users: 300, sessions_per_user: 8, alpha, seed, ..SynthSpec::default() };
        let data = generate(&spec).unwrap();
        prop_assert!(data.events.len() >= 10_000);
        let (mut parsed, edges) = parse_events(&data.events_tsv(), &data.edges_tsv()).unwrap();
        let mut events = data.events.clone();
        let key = |e: &Event| (e.user, e.timestamp, e.item);
        parsed.sort_by_key(key);
        events.sort_by_key(key);
        prop_assert_eq!(&parsed, &events);
        let want: BTreeSet<_> = data.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        prop_assert_eq!(edges, want);
        prop_assert_eq!(segment_weekly(&parsed).num_events(), data.events.len());
        let inside = data.events.iter().filter(|e| data.in_pool(e.user, e.item)).count();
        let rate = inside as f64 / data.events.len() as f64;
        prop_assert!((rate - alpha).abs() <= 0.02, "rate {} alpha {}", rate, alpha);
    }
}
