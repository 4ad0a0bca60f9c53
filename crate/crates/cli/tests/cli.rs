use std::path::Path;
use std::process::{Command, Output};

fn genir(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genir"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env_remove("GENIR_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) {
    let o = genir(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn search_pipeline_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (data, base, joint) = (root.join("data"), root.join("base"), root.join("joint"));
    let d = data.to_str().unwrap();
    ok(&["simulate", "sim3", "--pairs-in-qrels", "1.0", "--seed", "1"], &data);
    for f in ["rec.jsonl", "search.jsonl", "meta.json", "manifest.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    ok(&["train", "search", "--data", d, "--seed", "1"], &base);
    ok(&["train", "joint", "--data", d, "--seed", "1"], &joint);
    for m in [&base, &joint] {
        let ckpt = m.join("model.ckpt");
        ok(&["retrieve", "--data", d, "--checkpoint", ckpt.to_str().unwrap(), "--task", "search"], m);
        let run = read(&m.join("run.trec"));
        let first = run.lines().next().unwrap();
        assert_eq!(first.split_whitespace().count(), 6, "{first}");
    }
    let eval = root.join("eval");
    ok(
        &[
            "evaluate",
            "--run",
            joint.join("run.trec").to_str().unwrap(),
            "--qrels",
            joint.join("qrels.jsonl").to_str().unwrap(),
            "--baseline",
            base.join("run.trec").to_str().unwrap(),
            "--data",
            d,
            "--task",
            "search",
        ],
        &eval,
    );
    let csv = read(&eval.join("eval.csv"));
    assert!(csv.lines().count() >= 3, "{csv}");
    assert!(eval.join("eval_per_instance.csv").exists());

    let analysis = root.join("analysis");
    for (kind, file) in [("pop", "table4_pop.csv"), ("latent", "table5_latent.csv"), ("redundancy", "table6_redundancy.csv")] {
        ok(
            &[
                "analyze",
                kind,
                "--data",
                d,
                "--baseline",
                base.join("run.trec").to_str().unwrap(),
                "--joint",
                joint.join("run.trec").to_str().unwrap(),
                "--task",
                "search",
            ],
            &analysis,
        );
        assert!(read(&analysis.join(file)).lines().count() >= 2, "{file}");
    }

    ok(&["stats", "--data", d], &root.join("stats"));
    let stats = read(&root.join("stats").join("stats.csv"));
    assert!(stats.starts_with("dataset") || stats.lines().count() >= 2, "{stats}");

    let manifest: serde_json::Value = serde_json::from_str(&read(&joint.join("manifest.json"))).unwrap();
    let outputs = manifest["outputs"].as_object().unwrap();
    assert!(outputs.contains_key("run.trec") && outputs.contains_key("qrels.jsonl"));
    let inputs = manifest["inputs"].as_object().unwrap();
    assert!(inputs.keys().any(|k| k.ends_with("model.ckpt")), "{inputs:?}");
    assert!(outputs.values().all(|h| h.as_str().unwrap().len() == 64));
    assert_eq!(manifest["seeds"], serde_json::json!([0]));
}

#[test]
fn projection_of_sim2_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    let d = data.to_str().unwrap();
    ok(&["simulate", "sim2", "--query-match", "1.0"], &data);
    ok(&["train", "joint", "--data", d], &model);
    ok(&["project", "--data", d, "--checkpoint", model.join("model.ckpt").to_str().unwrap()], &model);
    let proj = read(&model.join("fig4_projection.csv"));
    assert!(proj.starts_with("item_id,x,y,popularity_count,cluster\n"));
    assert_eq!(proj.lines().count(), 31);
    assert!(!proj.contains("NA"));
}

#[test]
fn experiment_writes_csv_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["experiment", "cap", "--levels", "0,inf", "--seeds", "2"], tmp.path());
    let csv = read(&tmp.path().join("fig5_cap.csv"));
    assert!(csv.lines().next().unwrap().starts_with("sample_fraction,"));
    assert!(csv.contains(",inf,"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let json: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("fig5_cap.json"))).unwrap();
    assert_eq!(json["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let by_flag = tmp.path().join("flag");
    let by_env = tmp.path().join("env");
    let other = tmp.path().join("other");
    ok(&["simulate", "sim1", "--seed", "7"], &by_flag);
    let o = Command::new(env!("CARGO_BIN_EXE_genir"))
        .args(["simulate", "sim1", "--output-dir"])
        .arg(&by_env)
        .env("GENIR_SEED", "7")
        .output()
        .unwrap();
    assert!(o.status.success());
    ok(&["simulate", "sim1", "--seed", "8"], &other);
    let rec = |p: &Path| read(&p.join("rec.jsonl"));
    assert_eq!(rec(&by_flag), rec(&by_env));
    assert_ne!(rec(&by_flag), rec(&other));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert_eq!(genir(&["stats", "--bogus"], out).status.code(), Some(1));
    assert_eq!(genir(&["frobnicate"], out).status.code(), Some(1));
    assert_eq!(genir(&["--help"], out).status.code(), Some(0));
    let missing = out.join("nowhere");
    assert_eq!(genir(&["stats", "--data", missing.to_str().unwrap()], out).status.code(), Some(2));
    assert_eq!(genir(&["simulate", "sim2", "--query-match", "1.5"], out).status.code(), Some(1));

    let cfg = out.join("cfg.json");
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let o = genir(&["--config", cfg.to_str().unwrap(), "simulate", "sim1"], out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}
