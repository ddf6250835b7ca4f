use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsg_core::data::{load_checkpoint, synth_generate, synth_stats, Preset, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const FAST: &str = r#"
[schedule]
T = 10

[model]
hidden = 8
layers = 1
time_dim = 4
phi_dim = 2

[train]
epochs = 2
batch_size = 8
max_steps = 30
"#;

fn dsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = dsg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        fs::write(f.path("fast.toml"), FAST).unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    /// Small deterministic-relation corpus and a briefly trained checkpoint.
    fn trained(&self) -> String {
        ok(&["synth", "--preset", "deterministic", "--objects", "3", "--relations", "2", "--n", "40", "--out", &self.s("corpus.jsonl"), "--seed", "1"]);
        ok(&["train", "--corpus", &self.s("corpus.jsonl"), "--config", &self.s("fast.toml"), "--out", &self.s("model.dsg"), "--seed", "2"]);
        self.s("model.dsg")
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn synth_is_deterministic_and_writes_exact_stats() {
    let f = Fixture::new();
    for name in ["a.jsonl", "b.jsonl"] {
        ok(&["synth", "--n", "25", "--out", &f.s(name), "--seed", "7"]);
    }
    assert_eq!(read(&f.path("a.jsonl")), read(&f.path("b.jsonl")));
    assert_eq!(fs::read_to_string(f.path("a.jsonl")).unwrap().lines().count(), 25);
    let spec = SynthSpec::preset(Preset::LongTailed, 6, 8);
    let regenerated = serde_json::to_string_pretty(&synth_stats(&spec).unwrap()).unwrap() + "\n";
    assert_eq!(fs::read_to_string(f.path("a.jsonl.stats.json")).unwrap(), regenerated);
    let (_, graphs, _) = synth_generate(&spec, 25, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(graphs.len(), 25);
}

#[test]
fn synth_with_zero_graphs_writes_empty_corpus() {
    let f = Fixture::new();
    ok(&["synth", "--n", "0", "--out", &f.s("empty.jsonl")]);
    assert!(read(&f.path("empty.jsonl")).is_empty());
    assert!(f.path("empty.jsonl.stats.json").exists());
}

#[test]
fn synth_reads_spec_files_and_reports_bad_ones() {
    let f = Fixture::new();
    let spec = r#"
objects = ["cup", "table"]
relations = ["on"]
node_count = { kind = "fixed", n = 2 }
object_law = { kind = "uniform" }
edge_law = { kind = "constant", p = 1.0 }
relation_law = { kind = "deterministic" }
"#;
    fs::write(f.path("spec.toml"), spec).unwrap();
    ok(&["synth", "--spec", &f.s("spec.toml"), "--n", "3", "--out", &f.s("c.jsonl")]);
    assert!(fs::read_to_string(f.path("c.jsonl")).unwrap().lines().all(|l| l.contains("\"on\"")));
    fs::write(f.path("bad.toml"), spec.replace("p = 1.0", "p = 2.0")).unwrap();
    assert_eq!(dsg(&["synth", "--spec", &f.s("bad.toml"), "--n", "3", "--out", &f.s("d.jsonl")]).status.code(), Some(3));
}

#[test]
fn training_is_reproducible_and_logs_epochs() {
    let f = Fixture::new();
    ok(&["synth", "--n", "30", "--out", &f.s("c.jsonl"), "--seed", "3"]);
    let mut logs = Vec::new();
    for name in ["m1.dsg", "m2.dsg"] {
        let out = ok(&["train", "--corpus", &f.s("c.jsonl"), "--config", &f.s("fast.toml"), "--out", &f.s(name), "--seed", "4"]);
        logs.push(String::from_utf8(out.stdout).unwrap());
    }
    assert_eq!(read(&f.path("m1.dsg")), read(&f.path("m2.dsg")));
    assert_eq!(logs[0], logs[1]);
    let lines: Vec<serde_json::Value> = logs[0].lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|v| v["epoch"].is_u64() && v["total"].is_f64()));
    assert!(load_checkpoint(&f.path("m1.dsg"), None).unwrap().header.trained);
}

#[test]
fn zero_epochs_gives_untrained_checkpoint() {
    let f = Fixture::new();
    ok(&["synth", "--n", "5", "--out", &f.s("c.jsonl")]);
    let out = ok(&["train", "--corpus", &f.s("c.jsonl"), "--config", &f.s("fast.toml"), "--epochs", "0", "--out", &f.s("m.dsg")]);
    assert!(out.stdout.is_empty());
    assert!(!load_checkpoint(&f.path("m.dsg"), None).unwrap().header.trained);
    let refused = dsg(&["sample", "--ckpt", &f.s("m.dsg"), "--out", &f.s("s.jsonl")]);
    assert_eq!(refused.status.code(), Some(3));
    ok(&["sample", "--ckpt", &f.s("m.dsg"), "--out", &f.s("s.jsonl"), "--allow-untrained"]);
}

#[test]
fn divergence_exits_with_four() {
    let f = Fixture::new();
    ok(&["synth", "--n", "10", "--out", &f.s("c.jsonl")]);
    fs::write(f.path("wild.toml"), FAST.replace("epochs = 2", "epochs = 2\nlearning_rate = 1e300\ngrad_clip = 1e300")).unwrap();
    let out = dsg(&["train", "--corpus", &f.s("c.jsonl"), "--config", &f.s("wild.toml"), "--out", &f.s("m.dsg")]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sampling_writes_valid_graphs_and_dot_files() {
    let f = Fixture::new();
    let ckpt = f.trained();
    ok(&["sample", "--ckpt", &ckpt, "--n", "1", "--out", &f.s("one.jsonl"), "--seed", "5"]);
    assert_eq!(fs::read_to_string(f.path("one.jsonl")).unwrap().lines().count(), 1);
    ok(&["sample", "--ckpt", &ckpt, "--n", "4", "--out", &f.s("a.jsonl"), "--dot", &f.s("dots"), "--seed", "6"]);
    ok(&["sample", "--ckpt", &ckpt, "--n", "4", "--out", &f.s("b.jsonl"), "--seed", "6"]);
    assert_eq!(read(&f.path("a.jsonl")), read(&f.path("b.jsonl")));
    let dots: Vec<_> = fs::read_dir(f.path("dots")).unwrap().collect();
    assert_eq!(dots.len(), 4);
    let ckpt_vocab = load_checkpoint(Path::new(&ckpt), None).unwrap().header.vocab;
    let graphs = dsg_core::data::load_corpus_with(&f.path("a.jsonl"), &ckpt_vocab, false).unwrap();
    assert!(graphs.iter().all(|g| dsg_core::validate(g, &ckpt_vocab).is_valid()));
}

#[test]
fn conditioning_with_zero_beta_matches_sampling() {
    let f = Fixture::new();
    let ckpt = f.trained();
    ok(&["sample", "--ckpt", &ckpt, "--n", "1", "--out", &f.s("plain.jsonl"), "--seed", "9"]);
    ok(&["condition", "--ckpt", &ckpt, "--prompt", "person near dog", "--particles", "1", "--beta", "0", "--out", &f.s("cond.json"), "--seed", "9"]);
    let cond: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("cond.json")).unwrap()).unwrap();
    let plain: serde_json::Value = serde_json::from_str(fs::read_to_string(f.path("plain.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(cond["graph"], plain);

    ok(&["condition", "--ckpt", &ckpt, "--prompt", "person near dog", "--particles", "4", "--beta", "4", "--out", &f.s("c4.json"), "--seed", "1"]);
    let c4: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("c4.json")).unwrap()).unwrap();
    let trace = c4["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 10);
    for step in trace {
        let r = step["max_reward"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn embedding_reward_failures_follow_the_fallback_flag() {
    let f = Fixture::new();
    let ckpt = f.trained();
    fs::write(f.path("embed.toml"), "[reward]\nkind = \"embed\"\nurl = \"http://127.0.0.1:9\"\ntimeout_secs = 1.0\n").unwrap();
    let (cfg, out) = (f.s("embed.toml"), f.s("e.json"));
    let base = ["condition", "--config", &cfg, "--ckpt", &ckpt, "--prompt", "cup", "--particles", "2", "--out", &out];
    assert_eq!(dsg(&base).status.code(), Some(3));
    ok(&[&base[..], &["--fallback"]].concat());
}

#[test]
fn completion_reports_monotone_win_rates() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let out = ok(&["complete", "--ckpt", &ckpt, "--corpus", &f.s("corpus.jsonl"), "--mode", "relation", "--n-list", "1,2,4", "--seed", "3"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let w: Vec<f64> = ["1", "2", "4"].iter().map(|k| report["win_rates"][k].as_f64().unwrap()).collect();
    assert!(w.windows(2).all(|p| p[0] <= p[1]), "{w:?}");
    assert_eq!(dsg(&["complete", "--ckpt", &ckpt, "--corpus", &f.s("corpus.jsonl"), "--n-list", "0"]).status.code(), Some(2));
}

#[test]
fn eval_of_identical_sets_is_perfect() {
    let f = Fixture::new();
    ok(&["synth", "--n", "20", "--out", &f.s("c.jsonl"), "--seed", "2"]);
    let out = ok(&["eval", "--generated", &f.s("c.jsonl"), "--reference", &f.s("c.jsonl")]);
    let report: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.len(), 11);
    for (k, v) in &report {
        let v = v.as_f64().unwrap();
        if k.starts_with("f1_") {
            assert!((v - 1.0).abs() < 1e-12, "{k} {v}");
        } else {
            assert!(v.abs() < 1e-12, "{k} {v}");
        }
    }
    let out = ok(&["eval", "--generated", &f.s("c.jsonl"), "--reference", &f.s("c.jsonl"), "--metrics", "triplet_tv,node_mmd"]);
    let report: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&str> = report.keys().map(String::as_str).collect();
    assert_eq!(keys, ["node_mmd", "triplet_tv"]);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let f = Fixture::new();
    ok(&["synth", "--n", "3", "--out", &f.s("c.jsonl")]);
    assert_eq!(dsg(&["eval", "--generated", &f.s("c.jsonl"), "--reference", &f.s("c.jsonl"), "--metrics", "fid"]).status.code(), Some(2));
    assert_eq!(dsg(&["sample"]).status.code(), Some(2));
    assert_eq!(dsg(&["bogus"]).status.code(), Some(2));
    fs::write(f.path("empty.jsonl"), "").unwrap();
    assert_eq!(dsg(&["eval", "--generated", &f.s("empty.jsonl"), "--reference", &f.s("c.jsonl")]).status.code(), Some(3));
    assert_eq!(dsg(&["sample", "--ckpt", &f.s("c.jsonl"), "--out", &f.s("x.jsonl")]).status.code(), Some(3));
    fs::write(f.path("bad.toml"), "[schedule]\nsteps = 3\n").unwrap();
    assert_eq!(dsg(&["synth", "--config", &f.s("bad.toml"), "--out", &f.s("y.jsonl")]).status.code(), Some(3));
}
