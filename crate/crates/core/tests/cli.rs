use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eventcl::cli::RunManifest;

fn eventcl(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eventcl"));
    cmd.args(args).env_remove("EVENTCL_OUT");
    if let Some(p) = env_out {
        cmd.env("EVENTCL_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = eventcl(
            &["generate-data", "--out", s(&data), "--clusters", "6", "--events-per-cluster", "8", "--mcnc-instances", "20"],
            None,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::write(
            dir.path().join("small.cfg"),
            "# tiny model for fast tests\nhidden_dim = 16\nnum_layers = 1\nnum_heads = 2\nffn_dim = 32\nbatch_size = 8\nprototype_count = 4\n",
        )
        .unwrap();
        Self { dir }
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn cfg(&self) -> PathBuf {
        self.dir.path().join("small.cfg")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &Path, extra: &[&str]) -> Output {
        let (data, cfg) = (self.data(), self.cfg());
        let mut args = vec!["train", "--data", s(&data), "--config", s(&cfg), "--steps", "3", "--out", s(out)];
        args.extend(extra);
        eventcl(&args, None)
    }
}

#[test]
fn usage_errors_exit_two() {
    let out = eventcl(&["train", "--definitely-not-a-flag"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--definitely-not-a-flag"));
    let out = eventcl(&["frobnicate"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = eventcl(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn train_writes_manifest_and_is_reproducible() {
    let fx = Fixture::new();
    let (a, b) = (fx.path("run-a"), fx.path("run-b"));
    for dir in [&a, &b] {
        let out = fx.train(dir, &["--seed", "7", "--pi", "0.3", "--tau", "0.5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ma = RunManifest::load(&a.join(RunManifest::FILE)).unwrap();
    let mb = RunManifest::load(&b.join(RunManifest::FILE)).unwrap();
    assert_eq!(ma.seed, 7);
    assert_eq!(ma.config.insertion_probability, 0.3);
    assert_eq!(ma.config.temperature, 0.5);
    assert_eq!(ma.config.hidden_dim, 16);
    assert_eq!(ma.metrics.as_ref().unwrap().steps, 3);
    assert!(ma.checkpoint.is_file());
    let hashes = |m: &RunManifest| m.hashes.values().cloned().collect::<Vec<_>>();
    assert_eq!(hashes(&ma), hashes(&mb));
    assert_eq!(ma.hashes.len(), 2);
    assert_eq!(
        std::fs::read(a.join("metrics.jsonl")).unwrap(),
        std::fs::read(b.join("metrics.jsonl")).unwrap()
    );

    let c = fx.path("run-c");
    assert!(fx.train(&c, &["--seed", "8"]).status.success());
    let mc = RunManifest::load(&c.join(RunManifest::FILE)).unwrap();
    assert_ne!(hashes(&ma), hashes(&mc));
}

#[test]
fn ablation_flags_reach_the_config() {
    let fx = Fixture::new();
    let out_dir = fx.path("abl");
    let out = fx.train(
        &out_dir,
        &["--no-prompt", "--no-mlm", "--no-cp", "--word-order", "pso", "--template", "bare_labels"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = RunManifest::load(&out_dir.join(RunManifest::FILE)).unwrap();
    assert!(!m.config.enable_prompt && !m.config.enable_mlm && !m.config.enable_cp);
    assert_eq!(m.config.word_order.to_string(), "pso");

    let bad = fx.train(&fx.path("bad"), &["--word-order", "osp"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = fx.train(&fx.path("bad"), &["--pi", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn output_root_defaults_to_environment() {
    let fx = Fixture::new();
    let root = fx.path("from-env");
    let out = eventcl(
        &["train", "--data", s(&fx.data()), "--config", s(&fx.cfg()), "--steps", "1"],
        Some(&root),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join(RunManifest::FILE).is_file());
    assert!(root.join("model.ckpt").is_file());
}

#[test]
fn divergence_exits_three() {
    let fx = Fixture::new();
    let cfg = fx.path("hot.cfg");
    let mut text = std::fs::read_to_string(fx.cfg()).unwrap();
    text.push_str("learning_rate = 1e300\nwarmup_fraction = 0\n");
    std::fs::write(&cfg, text).unwrap();
    let out_dir = fx.path("hot");
    let out = eventcl(
        &["train", "--data", s(&fx.data()), "--config", s(&cfg), "--steps", "6", "--out", s(&out_dir)],
        None,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("divergence.json").is_file());
}

#[test]
fn eval_embed_and_tables() {
    let fx = Fixture::new();
    let run = fx.path("run");
    assert!(fx.train(&run, &[]).status.success());
    let ckpt = run.join("model.ckpt");
    let cases = fx.path("cases.tsv");
    let report = fx.path("report.json");
    let sweep = fx.path("sweep.tsv");
    let align = fx.path("align.tsv");
    let out = eventcl(
        &[
            "eval", "--checkpoint", s(&ckpt), "--data", s(&fx.data()),
            "--report", s(&report), "--dump-cases", s(&cases),
            "--sweep-table", s(&sweep), "--align-table", s(&align),
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys.len(), 6, "{keys:?}");
    for k in ["original_acc", "extended_acc", "transitive_rho", "mcnc_acc", "align", "uniform"] {
        assert!(json[k].is_number(), "{k}");
    }
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&std::fs::read(&report).unwrap()).unwrap(), json);
    let tsv = std::fs::read_to_string(&cases).unwrap();
    assert!(tsv.starts_with("event_a\tevent_b\tcosine\tlabel\n"), "{tsv}");
    assert!(tsv.lines().count() > 2);
    let sweep = std::fs::read_to_string(&sweep).unwrap();
    assert!(sweep.lines().nth(1).unwrap().starts_with("0.200000\t"), "{sweep}");
    assert_eq!(std::fs::read_to_string(&align).unwrap().lines().count(), 2);

    let missing = eventcl(
        &["eval", "--checkpoint", s(&ckpt), "--data", s(&fx.path("nowhere"))],
        None,
    );
    assert_eq!(missing.status.code(), Some(2));

    let emb = fx.path("emb.jsonl");
    let out = eventcl(
        &["embed", "--checkpoint", s(&ckpt), "--events", s(&fx.data().join("corpus.jsonl")), "--output", s(&emb)],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read_to_string(&emb).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    let v: Vec<f64> = serde_json::from_value(line["vector"].clone()).unwrap();
    assert_eq!(v.len(), 16);
    assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn ablate_and_sweep_tables() {
    let fx = Fixture::new();
    let root = fx.path("exp");
    let (data, cfg) = (fx.data(), fx.cfg());
    let common = ["--data", s(&data), "--config", s(&cfg), "--steps", "2", "--out", s(&root)];
    let mut args = vec!["ablate"];
    args.extend(common);
    let out = eventcl(&args, None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(root.join("ablate/ablation.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().skip(1).all(|r| r.split('\t').count() == 4));
    assert!(rows[2].starts_with("w/o Prompt Template"));

    let mut args = vec!["sweep", "--grid", "0,0.5"];
    args.extend(common);
    let out = eventcl(&args, None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(root.join("sweep/sweep.tsv")).unwrap();
    let pis: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(pis, ["0.000000", "0.500000"]);
}

#[test]
fn untrained_checkpoint_scores_chance_on_mcnc() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(eventcl(&["generate-data", "--out", s(&data)], None).status.success());
    let run = dir.path().join("init");
    let out = eventcl(&["train", "--data", s(&data), "--steps", "0", "--out", s(&run)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = eventcl(&["eval", "--checkpoint", s(&run.join("model.ckpt")), "--data", s(&data)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = json["mcnc_acc"].as_f64().unwrap();
    assert!((acc - 20.0).abs() <= 3.0, "untrained MCNC accuracy {acc}");
}
