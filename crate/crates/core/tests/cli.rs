mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tegaarec::data::{parse_events, segment_weekly, StoreStats};
use tegaarec::model::{write_checkpoint, Checkpoint, Model};
use tegaarec::trainer::{TrainConfig, TrainReport};
use tegaarec::workdir::Prepared;

const SMALL: &[&str] = &[
    "--set", "synth.users=50", "--set", "synth.items=24", "--set", "dim=8", "--set", "heads=2",
    "--set", "lmp_size=4", "--set", "friend_size=3", "--set", "max_epochs=2",
];

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tegaarec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let mut all: Vec<&str> = args.to_vec();
    all.extend_from_slice(SMALL);
    let out = bin(&all);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

struct Fixture {
    _root: tempfile::TempDir,
    data: PathBuf,
    work: PathBuf,
}

impl Fixture {
    fn events(&self) -> String {
        s(&self.data.join("events.tsv"))
    }

    fn edges(&self) -> String {
        s(&self.data.join("edges.tsv"))
    }

    fn dir(&self, name: &str) -> String {
        s(&self.work.join(name))
    }

    fn prepare(&self, name: &str) -> String {
        ok(&["prepare", "--workdir", &self.dir(name), "--events", &self.events(), "--edges", &self.edges()])
    }
}

fn fixture() -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    ok(&["synth", "--out", &s(&data)]);
    let work = root.path().to_path_buf();
    Fixture {
        _root: root,
        data,
        work,
    }
}

#[test]
fn missing_events_path_is_a_user_error() {
    let root = tempfile::tempdir().unwrap();
    let missing = root.path().join("nope.tsv");
    let out = bin(&["prepare", "--workdir", &s(root.path()), "--events", &s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&s(&missing)));
}

#[test]
fn malformed_events_are_a_data_error_with_location() {
    let root = tempfile::tempdir().unwrap();
    let events = root.path().join("events.tsv");
    fs::write(&events, "1\t2\t100\n1\tx\t200\n").unwrap();
    let out = bin(&["prepare", "--workdir", &s(root.path()), "--events", &s(&events)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("column 2"), "{err}");
}

#[test]
fn unknown_config_key_is_a_user_error() {
    let out = bin(&["synth", "--out", "/tmp/unused", "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn prepare_is_deterministic_and_reports_stats() {
    let f = fixture();
    let printed = f.prepare("a");
    f.prepare("b");
    for file in ["split.tsv", "sessions.tsv", "users.tsv", "items.tsv", "edges.tsv", "stats.txt"] {
        assert_eq!(
            fs::read(f.work.join("a").join(file)).unwrap(),
            fs::read(f.work.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    let (events, _) = parse_events(&fs::read_to_string(f.events()).unwrap(), "").unwrap();
    let stats = StoreStats::compute(&segment_weekly(&events));
    assert!(printed.contains(&format!("# Users\t{}\n", stats.users)));
    assert!(printed.contains(&format!("# Items\t{}\n", stats.items)));
    assert!(printed.contains(&format!("# Events\t{}\n", stats.events)));
    assert!(printed.contains(&format!("Avg. session length\t{:.2}", stats.avg_session_length)));
}

#[test]
fn ablation_flag_reaches_the_report() {
    let f = fixture();
    f.prepare("w");
    ok(&["train", "--workdir", &f.dir("w"), "--ablation", "no_lmp", "--max-epochs", "1"]);
    let report = TrainReport::from_jsonl(&fs::read_to_string(f.work.join("w/report.jsonl")).unwrap()).unwrap();
    assert_eq!(report.ablations, vec!["no_lmp".to_string()]);
    assert!(report.config.ablations.no_lmp && !report.config.ablations.no_sf);
    assert_eq!(report.epochs.len(), 1);
}

#[test]
fn config_file_then_overrides() {
    let f = fixture();
    f.prepare("w");
    let conf = f.work.join("run.conf");
    fs::write(&conf, "# short run\nmax_epochs = 1\nlearning_rate = 0.02\n").unwrap();
    let out = bin(&[
        "train", "--workdir", &f.dir("w"), "--config", &s(&conf), "--set", "synth.users=50", "--set", "dim=8",
        "--set", "heads=2", "--set", "lmp_size=4", "--set", "friend_size=3", "--set", "max_epochs=2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = TrainReport::from_jsonl(&fs::read_to_string(f.work.join("w/report.jsonl")).unwrap()).unwrap();
    assert_eq!(report.epochs.len(), 2, "override wins over the file");
    assert_eq!(report.config.learning_rate, 0.02);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let f = fixture();
    for w in ["full", "split"] {
        f.prepare(w);
    }
    ok(&["train", "--workdir", &f.dir("full"), "--max-epochs", "4"]);
    ok(&["train", "--workdir", &f.dir("split"), "--max-epochs", "2"]);
    ok(&["train", "--workdir", &f.dir("split"), "--resume", "--max-epochs", "4"]);
    for file in ["model.ckpt", "last.ckpt", "report.jsonl"] {
        assert_eq!(
            fs::read(f.work.join("full").join(file)).unwrap(),
            fs::read(f.work.join("split").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn grid_writes_one_report_per_cell() {
    let f = fixture();
    f.prepare("g");
    let out = ok(&[
        "grid", "--workdir", &f.dir("g"), "--max-epochs", "1", "--set", "grid.learning_rate=0.01,0.005",
        "--set", "grid.layers=1,2", "--set", "grid.friend_size=3", "--set", "grid.lmp_size=4",
        "--set", "grid.warmup_steps=10", "--set", "grid.tolerance=10",
    ]);
    let mut cells: Vec<String> = fs::read_dir(f.work.join("g/grid"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("cell-"))
        .collect();
    cells.sort();
    assert_eq!(cells, ["cell-000.jsonl", "cell-001.jsonl", "cell-002.jsonl", "cell-003.jsonl"]);
    assert!(out.contains("selected cell"));
    assert!(f.work.join("g/model.ckpt").exists());
}

/// Checkpoint whose scores put `item` first for every input.
fn oracle_checkpoint(prepared: &Prepared, item: usize) -> Checkpoint {
    let config = TrainConfig {
        dim: 8,
        heads: 2,
        ..TrainConfig::default()
    }
    .model_config(prepared.maps.num_users(), prepared.maps.num_items());
    let mut model = Model::new(config, 1).unwrap();
    let layout = model.params.layout.clone();
    let table = model.params.get_mut(layout.item_embedding);
    let d = table.cols();
    table.data_mut().iter_mut().for_each(|v| *v = 0.0);
    table.data_mut()[item * d] = 1.0;
    model.params.get_mut(layout.social.out).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let bias = model.params.get_mut(layout.social.out_bias).data_mut();
    bias.iter_mut().for_each(|v| *v = 0.0);
    bias[0] = 10.0;
    Checkpoint::new(model)
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let root = tempfile::tempdir().unwrap();
    // every session continues with raw item 7 after an arbitrary first item
    let mut events = String::new();
    for user in 0..12u64 {
        for week in 0..4i64 {
            let first = 1 + (user + week as u64) % 5;
            let ts = (2600 + week) * 604_800;
            events.push_str(&format!("{user}\t{first}\t{}\n", ts + 1));
            for k in 0..2 {
                events.push_str(&format!("{user}\t7\t{}\n", ts + 10 + k));
            }
        }
    }
    let ev = root.path().join("events.tsv");
    fs::write(&ev, events).unwrap();
    let w = root.path().join("w");
    ok(&["prepare", "--workdir", &s(&w), "--events", &s(&ev)]);
    let prepared = Prepared::load(&w).unwrap();
    let dense = prepared.maps.item(7).unwrap().index();
    fs::write(w.join("model.ckpt"), write_checkpoint(&oracle_checkpoint(&prepared, dense))).unwrap();
    let out = ok(&["evaluate", "--workdir", &s(&w), "--split", "test"]);
    assert!(out.contains("R@20: 100.00") && out.contains("N@20: 100.00"), "{out}");
    let again = ok(&["evaluate", "--workdir", &s(&w), "--split", "test"]);
    assert_eq!(out, again);
}

#[test]
fn checkpoint_shape_mismatch_is_a_load_error() {
    let f = fixture();
    f.prepare("w");
    let prepared = Prepared::load(&f.work.join("w")).unwrap();
    let mut ck = oracle_checkpoint(&prepared, 1);
    ck.model.config.num_items += 1;
    let text = write_checkpoint(&ck);
    fs::write(f.work.join("w/model.ckpt"), text).unwrap();
    let out = bin(&["evaluate", "--workdir", &f.dir("w")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_train_split_and_repeatability() {
    let f = fixture();
    f.prepare("w");
    ok(&["train", "--workdir", &f.dir("w")]);
    let a = ok(&["evaluate", "--workdir", &f.dir("w"), "--split", "train"]);
    let ranks_a = fs::read(f.work.join("w/ranks-train.tsv")).unwrap();
    let b = ok(&["evaluate", "--workdir", &f.dir("w"), "--split", "train"]);
    assert_eq!(a, b);
    assert_eq!(ranks_a, fs::read(f.work.join("w/ranks-train.tsv")).unwrap());
    assert!(a.starts_with("label\tR@10\tR@20\tN@10\tN@20\tcount\ntrain\t"));
}

#[test]
fn recommend_matches_evaluation_ranks() {
    let f = fixture();
    f.prepare("w");
    ok(&["train", "--workdir", &f.dir("w")]);
    ok(&["evaluate", "--workdir", &f.dir("w"), "--split", "test"]);
    let prepared = Prepared::load(&f.work.join("w")).unwrap();
    let ranks = fs::read_to_string(f.work.join("w/ranks-test.tsv")).unwrap();
    let num_items = prepared.maps.num_items();
    let mut checked = 0;
    for inst in prepared.split.test.iter().take(5) {
        let raw = |i: &tegaarec::data::ItemId| prepared.maps.raw_item(*i).unwrap().to_string();
        let k = inst.items.len() - 1;
        let items: Vec<String> = inst.items[..k].iter().map(raw).collect();
        let context: Vec<String> = inst.items[k..].iter().map(raw).collect();
        let user = prepared.maps.raw_user(inst.user).unwrap().to_string();
        let week = inst.week.to_string();
        let out = ok(&[
            "recommend", "--workdir", &f.dir("w"), "--user", &user, "--items", &items.join(","),
            "--context", &context.join(","), "--week", &week, "-k", &(num_items + 5).to_string(),
        ]);
        let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
        assert_eq!(rows.len(), num_items, "k above the catalogue size returns every item");
        let target = raw(&inst.items[k]);
        let rec_rank: usize = rows.iter().find(|r| r[2] == target).unwrap()[1].parse().unwrap();
        let key = format!("{}\t{}\t{}\t{}\t", inst.user, inst.session_index, k, inst.items[k]);
        let eval_rank: usize = ranks
            .lines()
            .find(|l| l.starts_with(&key))
            .unwrap()
            .rsplit('\t')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(rec_rank, eval_rank);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn recommend_rejects_unknown_ids() {
    let f = fixture();
    f.prepare("w");
    ok(&["train", "--workdir", &f.dir("w"), "--max-epochs", "1"]);
    let out = bin(&["recommend", "--workdir", &f.dir("w"), "--user", "0", "--items", "1,987654"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("987654"));
    let out = bin(&["recommend", "--workdir", &f.dir("w"), "--user", "99999", "--items", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_is_a_numeric_failure() {
    let f = fixture();
    f.prepare("w");
    let out = bin(&[
        "train", "--workdir", &f.dir("w"), "--set", "learning_rate=1e300", "--set", "warmup_steps=1",
        "--set", "dim=8", "--set", "heads=2",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn commands_without_a_prepared_workdir_fail_cleanly() {
    let root = tempfile::tempdir().unwrap();
    let out = bin(&["train", "--workdir", &s(root.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("users.tsv"));
}
