use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[experiment]
name = "small"

[graph]
languages = ["L1", "L2", "L3"]
supervised = ["L1-L2", "L1-L3"]

[family]
vocab_size = 8
pairs_per_corpus = 60
dev_tuples = 10
test_tuples = 12

[model]
hidden_size = 6
embed_size = 6

[train]
gamma = 0.1
burn_in = 10
max_steps = 40
batch_size = 4
eval_interval = 10
log_interval = 5
"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn root(&self) -> PathBuf {
        self.dir.path().join("runs")
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_agmt")).args(args).env("AGMT_RUNS_ROOT", self.root()).current_dir(self.dir.path()).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect();
    out.sort();
    out
}

fn metrics(run: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(run.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wallclock_ms");
            v
        })
        .collect()
}

#[test]
fn gen_data_layout_and_reproducibility() {
    let env = Env::new();
    let cfg = env.config("small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    env.ok(&["gen-data", "--config", cfg]);
    let run = env.root().join("small");
    let corpora = files(&run.join("corpora"));
    let names: Vec<&str> = corpora.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["L1-L2.tsv", "L1-L3.tsv", "dev.tsv", "manifest.json", "test.tsv"]);
    let l12 = String::from_utf8(corpora[0].1.clone()).unwrap();
    assert_eq!(l12.lines().count(), 60);
    assert!(l12.lines().all(|l| l.starts_with("L1\tL2\t")));
    let manifest: serde_json::Value = serde_json::from_slice(&corpora[3].1).unwrap();
    assert_eq!(manifest["family_seed"], 7);
    assert_eq!(manifest["train_tuples"]["count"], 120);

    let again = env.run(&["gen-data", "--config", cfg]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));
    env.ok(&["gen-data", "--config", cfg, "--force"]);
    assert_eq!(files(&run.join("corpora")), corpora);

    // no tuple reaches two corpora
    let first = |(_, bytes): &(String, Vec<u8>)| -> BTreeSet<String> {
        String::from_utf8(bytes.clone()).unwrap().lines().map(|l| l.split('\t').nth(2).unwrap().to_string()).collect()
    };
    assert!(first(&corpora[0]).is_disjoint(&first(&corpora[1])));
}

#[test]
fn invalid_configs_exit_2_before_writing() {
    let env = Env::new();
    let cases = [
        SMALL.replace("supervised = [\"L1-L2\", \"L1-L3\"]", "supervised = [\"L1-L2\", \"L1-L9\"]"),
        SMALL.replace("supervised = [\"L1-L2\", \"L1-L3\"]", "supervised = [\"L1-L2\"]"),
        SMALL.replace("[model]", "[model]\nwidth = 3"),
        SMALL.replace("gamma = 0.1", "gamma = -1.0"),
        SMALL.replace("vocab_size = 8", "vocab_size = 2\nmax_len = 5"),
        SMALL.replace("name = \"small\"", "name = \"../escape\""),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = env.config(&format!("bad{i}.toml"), text);
        let out = env.run(&["gen-data", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "case {i}: {}", stderr(&out));
        assert!(!env.root().exists(), "case {i} wrote files");
    }
    let cfg = env.config("small.toml", SMALL);
    let out = env.run(&["gen-data", "--config", cfg.to_str().unwrap(), "--set", "train.lr=0"]);
    assert_eq!(code(&out), 2);
    let out = env.run(&["gen-data", "--config", cfg.to_str().unwrap(), "--set", "nodot=1"]);
    assert_eq!(code(&out), 2);
    assert!(!env.root().exists());
}

#[test]
fn overrides_reach_the_snapshot_and_lock_it() {
    let env = Env::new();
    let cfg = env.config("small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    env.ok(&["gen-data", "--config", cfg, "--set", "train.gamma=0", "--set", "train.protection=samples_and_scorers"]);
    let snap = fs::read_to_string(env.root().join("small/config.toml")).unwrap();
    assert!(snap.contains("gamma = 0.0") && snap.contains("protection = \"samples_and_scorers\""));
    let out = env.run(&["train", "--config", cfg, "--set", "train.gamma=0", "--until", "5"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("snapshot"));
    env.ok(&["train", "--config", cfg, "--set", "train.gamma=0", "--set", "train.protection=samples_and_scorers", "--until", "5"]);
    let m = metrics(&env.root().join("small"));
    assert!(m.iter().all(|r| r["mode"] == "basic" && r["agree_s"].is_null()));
}

#[test]
fn two_languages_warn_and_refuse_agreement() {
    let env = Env::new();
    let text = SMALL.replace("[\"L1\", \"L2\", \"L3\"]", "[\"L1\", \"L2\"]").replace("supervised = [\"L1-L2\", \"L1-L3\"]", "supervised = [\"L1-L2\"]");
    let cfg = env.config("two.toml", &text);
    let out = env.ok(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert!(stderr(&out).contains("warning: agreement is enabled"));
    let out = env.run(&["train", "small"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!env.root().join("small/checkpoints").read_dir().is_ok_and(|mut d| d.next().is_some()));
}

#[test]
fn resume_replays_an_uninterrupted_run() {
    let env = Env::new();
    let a = env.config("a.toml", SMALL);
    let b = env.config("b.toml", &SMALL.replace("name = \"small\"", "name = \"whole\""));
    env.ok(&["gen-data", "--config", a.to_str().unwrap()]);
    env.ok(&["gen-data", "--config", b.to_str().unwrap()]);

    env.ok(&["train", "whole"]);
    env.ok(&["train", "small", "--until", "20"]);
    let run = env.root().join("small");
    let out = env.run(&["train", "small"]);
    assert_eq!(code(&out), 2);

    // a crash mid-write leaves a temporary and trailing metrics behind
    fs::write(run.join("checkpoints/step-00000030.tmp"), b"partial").unwrap();
    let mut text = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    text.push_str(&text.lines().last().unwrap().replace("\"step\":20", "\"step\":25"));
    text.push('\n');
    fs::write(run.join("metrics.jsonl"), text).unwrap();

    env.ok(&["train", "small", "--resume"]);
    let (whole, resumed) = (metrics(&env.root().join("whole")), metrics(&run));
    assert_eq!(whole.len(), 8);
    assert_eq!(whole, resumed);
    assert!(whole.iter().all(|r| r["mode"] == "agree"));
    let steps: Vec<String> = files(&run.join("checkpoints")).into_iter().map(|(n, _)| n).filter(|n| n.ends_with(".ckpt")).collect();
    assert_eq!(steps, ["step-00000010.ckpt", "step-00000020.ckpt", "step-00000030.ckpt", "step-00000040.ckpt"]);
}

#[test]
fn eval_reports_and_missing_checkpoint() {
    let env = Env::new();
    let cfg = env.config("small.toml", SMALL);
    env.ok(&["gen-data", "--config", cfg.to_str().unwrap()]);
    let out = env.run(&["eval", "small"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no checkpoint"));
    assert_eq!(code(&env.run(&["eval", "nonexistent"])), 2);

    env.ok(&["train", "small", "--until", "1"]);
    env.ok(&["eval", "small", "--modes", "basic,pivot"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(env.root().join("small/reports/eval.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    for r in rows.iter().filter(|r| r["zero_shot"] == true) {
        assert!(r["bleu"].as_f64().unwrap() < 10.0, "{r}");
    }
    let c: serde_json::Value = serde_json::from_slice(&fs::read(env.root().join("small/reports/consistency.json")).unwrap()).unwrap();
    assert!(c["ratio"].as_f64().unwrap() > 0.5);
}

#[test]
fn verify_theory_default_and_refusal() {
    let env = Env::new();
    let out = env.ok(&["verify-theory", "--out", "reports/t1.json"]);
    assert!(stderr(&out).contains("200 systems, 0 violations"));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(env.dir.path().join("reports/t1.json")).unwrap()).unwrap();
    let reports = doc.as_array().unwrap();
    assert_eq!(reports.len(), 200);
    assert!(reports.iter().all(|r| r["satisfied"] == true && r["seed"].is_u64() && r["xi"].as_f64().unwrap() <= 0.6));

    let out = env.ok(&["verify-theory", "--theorem", "pivoting", "--count", "20"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc.as_array().unwrap().len(), 20);

    let out = env.run(&["verify-theory", "--single", "3,3,3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("enumeration refused"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn plot_collects_four_sizes() {
    let env = Env::new();
    let mut runs = vec![];
    for size in [20, 40, 80, 160] {
        for gamma in ["0", "0.1"] {
            let name = format!("s{size}-g{gamma}");
            let text = SMALL
                .replace("name = \"small\"", &format!("name = \"{name}\""))
                .replace("pairs_per_corpus = 60", &format!("pairs_per_corpus = {size}"))
                .replace("max_steps = 40", "max_steps = 12")
                .replace("burn_in = 10", "burn_in = 6")
                .replace("gamma = 0.1", &format!("gamma = {gamma}"));
            let cfg = env.config(&format!("{name}.toml"), &text);
            env.ok(&["gen-data", "--config", cfg.to_str().unwrap()]);
            env.ok(&["train", &name]);
            env.ok(&["eval", &name]);
            runs.push(name);
        }
    }
    let mut args = vec!["plot"];
    args.extend(runs.iter().map(String::as_str));
    env.ok(&args);
    let plots = env.root().join("plots");
    let mut reader = csv_rows(&plots.join("sweep.csv"));
    let header = reader.remove(0);
    assert_eq!(header, ["run_id", "corpus_size", "direction", "mode", "bleu", "ce"]);
    for mode in ["basic", "pivot", "agree", "agree-pivot"] {
        let sizes: BTreeSet<&str> = reader.iter().filter(|r| r[3] == mode).map(|r| r[1].as_str()).collect();
        assert_eq!(sizes.len(), 4, "{mode}");
    }
    let svg = fs::read_to_string(plots.join("zero_shot_bleu.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert_eq!(code(&env.run(&["plot", "missing-run"])), 2);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn shipped_config_generates_data() {
    let env = Env::new();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/hub3.toml");
    env.ok(&["gen-data", "--config", cfg.to_str().unwrap(), "--set", "family.pairs_per_corpus=50"]);
    let run = env.root().join("hub3");
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("pairs_per_corpus = 50"), "{snapshot}");
    let names: Vec<String> = files(&run.join("corpora")).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["L1-L2.tsv", "L1-L3.tsv", "dev.tsv", "manifest.json", "test.tsv"]);
}
