use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn styleforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_styleforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("STYLEFORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = styleforge(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(dir: &Path, output: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join(format!("{output}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn synthetic(dir: &Path) {
    ok(
        dir,
        &[
            "extract-features",
            "--synthetic",
            "4",
            "9",
            "5",
            "--out",
            "emb.bin",
            "--labels-out",
            "labels.jsonl",
            "--vocab-out",
            "vocab.txt",
            "--split-out",
            "split.json",
            "--images-out",
            "imgs",
        ],
    );
}

#[test]
fn help_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ok(dir.path(), &["--help"]).contains("train"));
    let train = ok(dir.path(), &["train", "--help"]);
    for expected in [
        "[default: 0.1]",
        "[default: 0.2]",
        "[default: 0.003]",
        "[default: 0.9]",
        "[default: 16]",
    ] {
        assert!(train.contains(expected), "train help lacks {expected}");
    }
    assert!(ok(dir.path(), &["dedup", "--help"]).contains("[default: 0.8]"));
    assert!(ok(dir.path(), &["curate", "--help"]).contains("[default: 100000]"));
}

#[test]
fn usage_and_validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        styleforge(dir.path(), &["eval", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(styleforge(dir.path(), &["nonsense"]).status.code(), Some(1));
    synthetic(dir.path());
    let out = styleforge(
        dir.path(),
        &[
            "train",
            "--embeddings",
            "emb.bin",
            "--labels",
            "labels.jsonl",
            "--tau",
            "-1",
            "--out",
            "h.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau must be positive"));
    assert!(!dir.path().join("h.bin.manifest.json").exists());
}

#[test]
fn missing_input_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = styleforge(
        dir.path(),
        &[
            "eval",
            "--embeddings",
            "absent.bin",
            "--labels",
            "l.jsonl",
            "--split",
            "s.json",
            "--out",
            "r.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.bin"));
}

#[test]
fn malformed_embedding_file_exits_2_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.bin"), b"CSDX\x01\x00").unwrap();
    let out = styleforge(
        dir.path(),
        &["dedup", "--embeddings", "bad.bin", "--out", "d.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("byte 0") && stderr.contains("bad.bin"),
        "{stderr}"
    );
}

#[test]
fn pipeline_produces_report_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d);
    assert_eq!(fs::read_dir(d.join("imgs")).unwrap().count(), 36);
    ok(
        d,
        &[
            "train",
            "--embeddings",
            "emb.bin",
            "--labels",
            "labels.jsonl",
            "--split",
            "split.json",
            "--iterations",
            "100",
            "--out",
            "head.bin",
        ],
    );
    let trace = fs::read_to_string(d.join("head.bin.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 101);
    ok(
        d,
        &[
            "eval",
            "--embeddings",
            "emb.bin",
            "--labels",
            "labels.jsonl",
            "--split",
            "split.json",
            "--head",
            "head.bin",
            "--k",
            "1,5",
            "--out",
            "report.json",
        ],
    );

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["per_query"].as_array().unwrap().len(), 12);
    let map1 = report["map_at_k"]["1"].as_f64().unwrap();
    assert_eq!(map1, report["recall_at_k"]["1"].as_f64().unwrap());
    assert!(fs::read_to_string(d.join("report.csv"))
        .unwrap()
        .starts_with("k,map,recall\n1,"));

    let m = manifest(d, "report.json");
    assert_eq!(m["command"], "eval");
    assert_eq!(m["config"]["k"]["source"], "flag");
    assert_eq!(m["config"]["ap_mode"]["source"], "default");
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 4);
    assert!(inputs
        .iter()
        .all(|i| i["sha256"].as_str().unwrap().len() == 64));

    // Same inputs, same bytes.
    let first = fs::read(d.join("report.json")).unwrap();
    ok(
        d,
        &[
            "eval",
            "--embeddings",
            "emb.bin",
            "--labels",
            "labels.jsonl",
            "--split",
            "split.json",
            "--head",
            "head.bin",
            "--k",
            "1,5",
            "--out",
            "report.json",
        ],
    );
    assert_eq!(fs::read(d.join("report.json")).unwrap(), first);
    let head = fs::read(d.join("head.bin")).unwrap();
    ok(
        d,
        &[
            "train",
            "--embeddings",
            "emb.bin",
            "--labels",
            "labels.jsonl",
            "--split",
            "split.json",
            "--iterations",
            "100",
            "--out",
            "head.bin",
        ],
    );
    assert_eq!(fs::read(d.join("head.bin")).unwrap(), head);
}

#[test]
fn image_training_and_style_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d);
    ok(
        d,
        &[
            "train",
            "--images",
            "imgs",
            "--labels",
            "labels.jsonl",
            "--split",
            "split.json",
            "--iterations",
            "20",
            "--dim-out",
            "16",
            "--bias",
            "--out",
            "head.bin",
        ],
    );
    ok(
        d,
        &[
            "prototype",
            "--embeddings",
            "emb.bin",
            "--labels",
            "labels.jsonl",
            "--head",
            "head.bin",
            "--out",
            "protos.bin",
        ],
    );
    ok(
        d,
        &[
            "gss",
            "--prototypes",
            "protos.bin",
            "--images",
            "imgs",
            "--head",
            "head.bin",
            "--out",
            "gss.csv",
        ],
    );
    let gss = fs::read_to_string(d.join("gss.csv")).unwrap();
    assert_eq!(gss.lines().count(), 1 + 36 * 4);

    ok(
        d,
        &[
            "eval",
            "--embeddings",
            "emb.bin",
            "--labels",
            "labels.jsonl",
            "--split",
            "split.json",
            "--k",
            "1",
            "--out",
            "report.json",
        ],
    );
    fs::write(
        d.join("groups.json"),
        r#"{"style-00":"a","style-01":"a","style-02":"b","style-03":"b"}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "confusion",
            "--report",
            "report.json",
            "--groups",
            "groups.json",
            "--labels",
            "labels.jsonl",
            "--out",
            "conf.csv",
        ],
    );
    let conf = fs::read_to_string(d.join("conf.csv")).unwrap();
    assert!(conf.starts_with("truth\\predicted,"));

    ok(
        d,
        &[
            "query",
            "--embeddings",
            "emb.bin",
            "--image",
            "imgs/s00-0000.png",
            "-k",
            "3",
            "--out",
            "q.csv",
        ],
    );
    let q = fs::read_to_string(d.join("q.csv")).unwrap();
    assert!(q.lines().nth(1).unwrap().starts_with("1,s00-0000,"));
}

#[test]
fn plots_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("scores.csv"),
        "id,label,score,band\na,x,0.7,inconclusive\n",
    )
    .unwrap();
    ok(d, &["plot", "--gss", "scores.csv", "--out", "one.svg"]);
    let svg = fs::read_to_string(d.join("one.svg")).unwrap();
    assert_eq!(svg.matches("class=\"marker\"").count(), 1);
    assert_eq!(
        fs::read_to_string(d.join("one.csv")).unwrap(),
        "series,label,x,y\ngss,a/x,0,0.7\n"
    );
    let clobber = styleforge(d, &["plot", "--gss", "scores.csv", "--out", "scores.svg"]);
    assert_eq!(clobber.status.code(), Some(1));

    fs::write(d.join("m.csv"), "truth\\predicted,a,b\na,0,2\nb,1,0\n").unwrap();
    ok(
        d,
        &[
            "plot",
            "--confusion",
            "m.csv",
            "--out",
            "m.svg",
            "--csv",
            "m.table.csv",
        ],
    );
    let first = fs::read(d.join("m.table.csv")).unwrap();
    ok(
        d,
        &[
            "plot",
            "--confusion",
            "m.csv",
            "--out",
            "m.svg",
            "--csv",
            "m.table.csv",
        ],
    );
    assert_eq!(fs::read(d.join("m.table.csv")).unwrap(), first);
    assert_eq!(
        fs::read_to_string(d.join("m.svg"))
            .unwrap()
            .matches("class=\"cell\"")
            .count(),
        4
    );

    fs::write(d.join("empty.csv"), "id,label,score,band\n").unwrap();
    assert_eq!(
        styleforge(d, &["plot", "--gss", "empty.csv", "--out", "e.svg"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn config_file_sits_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d);
    fs::write(
        d.join("sweep.cfg"),
        "# ablation\ntau = 0.5\niterations = 40\nssl_only = true\nunrelated = 1\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "--config",
            "sweep.cfg",
            "train",
            "--embeddings",
            "emb.bin",
            "--iterations",
            "10",
            "--out",
            "h.bin",
        ],
    );
    let m = manifest(d, "h.bin");
    assert_eq!(m["config"]["tau"]["value"], "0.5");
    assert_eq!(m["config"]["tau"]["source"], "config");
    assert_eq!(m["config"]["iterations"]["value"], "10");
    assert_eq!(m["config"]["iterations"]["source"], "flag");
    assert_eq!(m["config"]["ssl_only"]["value"], "true");
    assert_eq!(m["config"]["lr"]["source"], "default");
    assert_eq!(
        fs::read_to_string(d.join("h.bin.trace.csv"))
            .unwrap()
            .lines()
            .count(),
        11
    );

    fs::write(d.join("bad.cfg"), "tau 0.5\n").unwrap();
    let out = styleforge(
        d,
        &[
            "--config",
            "bad.cfg",
            "train",
            "--embeddings",
            "emb.bin",
            "--out",
            "h2.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_styleforge"))
        .args([
            "extract-features",
            "--synthetic",
            "2",
            "3",
            "1",
            "--out",
            "emb.bin",
        ])
        .current_dir(d)
        .env("STYLEFORGE_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(d, "emb.bin")["threads"], 3);
    ok(
        d,
        &[
            "--threads",
            "2",
            "extract-features",
            "--synthetic",
            "2",
            "3",
            "1",
            "--out",
            "emb2.bin",
        ],
    );
    assert_eq!(manifest(d, "emb2.bin")["threads"], 2);
    assert_eq!(
        fs::read(d.join("emb.bin")).unwrap(),
        fs::read(d.join("emb2.bin")).unwrap()
    );
}

#[test]
fn curation_ingest_and_dedup() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bank.txt"), "impressionism\ncubism\noil\n").unwrap();
    fs::write(
        d.join("captions.jsonl"),
        concat!(
            "{\"id\":\"a\",\"caption\":\"An Impressionism oil study\"}\n",
            "{\"id\":\"b\",\"caption\":\"cubism, oil on canvas\"}\n",
            "{\"id\":\"c\",\"caption\":\"boiling water\"}\n",
        ),
    )
    .unwrap();
    ok(
        d,
        &[
            "curate",
            "--captions",
            "captions.jsonl",
            "--bank",
            "bank.txt",
            "--cutoff",
            "1",
            "--out",
            "labels.jsonl",
            "--counts",
            "counts.csv",
        ],
    );
    assert_eq!(
        fs::read_to_string(d.join("labels.jsonl")).unwrap(),
        "{\"id\":\"a\",\"labels\":[\"impressionism\"]}\n{\"id\":\"b\",\"labels\":[\"cubism\"]}\n"
    );
    assert_eq!(
        fs::read_to_string(d.join("counts.csv")).unwrap(),
        "tag,count,retained\nimpressionism,1,true\ncubism,1,true\noil,2,false\n"
    );

    fs::write(
        d.join("vectors.jsonl"),
        concat!(
            "{\"id\":\"a\",\"vector\":[1,0,0],\"labels\":[\"x\"]}\n",
            "{\"id\":\"b\",\"vector\":[0.99,0.1,0],\"labels\":[\"y\"]}\n",
            "{\"id\":\"c\",\"vector\":[0,0,1]}\n",
        ),
    )
    .unwrap();
    ok(
        d,
        &[
            "ingest",
            "--vectors",
            "vectors.jsonl",
            "--out",
            "v.bin",
            "--labels-out",
            "v.jsonl",
        ],
    );
    ok(
        d,
        &[
            "dedup",
            "--embeddings",
            "v.bin",
            "--labels",
            "v.jsonl",
            "--out",
            "d.json",
            "--embeddings-out",
            "kept.bin",
            "--labels-out",
            "kept.jsonl",
        ],
    );
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("d.json")).unwrap()).unwrap();
    assert_eq!(result["clusters"], serde_json::json!([["a", "b"], ["c"]]));
    assert_eq!(result["representatives"], serde_json::json!(["a", "c"]));
    assert_eq!(
        fs::read_to_string(d.join("kept.jsonl")).unwrap(),
        "{\"id\":\"a\",\"labels\":[\"x\",\"y\"]}\n{\"id\":\"c\",\"labels\":[]}\n"
    );
}
