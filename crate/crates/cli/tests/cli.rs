use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use streamlat_cli::{run_evaluate, EvaluateConfig, ReportFormat};
use tempfile::TempDir;

const TRACE: &str =
    r#"{"source_stream":"a b c d","hypothesis_stream":"A B C D E F","delays":[1,2,3,3,4,4]}"#;

fn streamlat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamlat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn table_fixture() -> TempDir {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "trace.jsonl", &format!("{TRACE}\n"));
    write(dir.path(), "src.txt", "a b\nc d\n");
    write(dir.path(), "ref.txt", "A B\nC D E F\n");
    write(dir.path(), "src.seg", "2 4\n");
    write(dir.path(), "hyp.seg", "2 6\n");
    dir
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn values(report: &Value) -> Vec<(String, f64)> {
    report["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| {
            (
                m["label"].as_str().unwrap().to_string(),
                m["value"].as_f64().unwrap(),
            )
        })
        .collect()
}

fn pairs(expected: &[(&str, f64)]) -> Vec<(String, f64)> {
    expected.iter().map(|(l, v)| (l.to_string(), *v)).collect()
}

#[test]
fn concat1_report_matches_table_values() {
    let dir = table_fixture();
    let report = json(&streamlat(
        dir.path(),
        &[
            "evaluate",
            "--trace",
            "trace.jsonl",
            "--mode",
            "concat1",
            "--s",
            "1",
        ],
    ));
    assert_eq!(
        values(&report),
        pairs(&[("AP", 0.7083), ("AL", 1.2667), ("DAL(s=1)", 1.5)])
    );
    assert_eq!(report["sentences"], 1);
    assert!(report.get("segmentation").is_none());
}

#[test]
fn stream_and_sentence_modes_agree_on_the_two_sentence_trace() {
    let dir = table_fixture();
    let expected = pairs(&[("AP", 0.75), ("AL", 0.9167), ("DAL(s=1)", 1.0)]);
    for mode in ["stream", "sentence"] {
        let from_files = json(&streamlat(
            dir.path(),
            &[
                "evaluate",
                "--trace",
                "trace.jsonl",
                "--src-seg",
                "src.seg",
                "--hyp-seg",
                "hyp.seg",
                "--mode",
                mode,
                "--s",
                "1",
            ],
        ));
        let from_refs = json(&streamlat(
            dir.path(),
            &[
                "evaluate",
                "--trace",
                "trace.jsonl",
                "--src-refs",
                "src.txt",
                "--tgt-refs",
                "ref.txt",
                "--mode",
                mode,
                "--s",
                "1",
            ],
        ));
        assert_eq!(values(&from_files), expected, "{mode}");
        assert_eq!(values(&from_refs), expected, "{mode}");
        assert_eq!(from_refs["segmentation"]["source"], "references");
        assert_eq!(from_refs["segmentation"]["hypothesis"], "resegmented");
    }
}

#[test]
fn per_sentence_values_and_tsv() {
    let dir = table_fixture();
    let args = [
        "evaluate",
        "--trace",
        "trace.jsonl",
        "--src-seg",
        "src.seg",
        "--hyp-seg",
        "hyp.seg",
        "--s",
        "1",
        "--per-sentence",
    ];
    let report = json(&streamlat(dir.path(), &args));
    assert_eq!(report["scored"], serde_json::json!([0, 1]));
    assert_eq!(
        report["metrics"][1]["per_sentence"],
        serde_json::json!([1.0, 0.8333])
    );

    let mut tsv_args = args.to_vec();
    tsv_args.extend(["--format", "tsv"]);
    let out = streamlat(dir.path(), &tsv_args);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text,
        "sentence\tAP\tAL\tDAL(s=1)\n0\t0.7500\t1.0000\t1.0000\n1\t0.7500\t0.8333\t1.0000\nall\t0.7500\t0.9167\t1.0000\n"
    );
}

#[test]
fn echoed_config_reproduces_the_report_byte_for_byte() {
    let dir = table_fixture();
    let first = streamlat(
        dir.path(),
        &[
            "evaluate",
            "--trace",
            "trace.jsonl",
            "--src-refs",
            "src.txt",
            "--tgt-refs",
            "ref.txt",
            "--decimals",
            "6",
            "--per-sentence",
        ],
    );
    assert!(first.status.success());
    fs::write(dir.path().join("report.json"), &first.stdout).unwrap();
    let again = streamlat(dir.path(), &["evaluate", "--config", "report.json"]);
    assert!(again.status.success());
    assert_eq!(first.stdout, again.stdout);
}

#[test]
fn library_and_binary_render_identically() {
    let dir = table_fixture();
    let mut cfg = EvaluateConfig::new(dir.path().join("trace.jsonl"));
    cfg.mode = "concat1".into();
    let report = run_evaluate(&cfg).unwrap();
    let trace = dir.path().join("trace.jsonl");
    let out = streamlat(
        dir.path(),
        &[
            "evaluate",
            "--trace",
            trace.to_str().unwrap(),
            "--mode",
            "concat1",
        ],
    );
    assert_eq!(
        report.render(ReportFormat::Json).as_bytes(),
        out.stdout.as_slice()
    );
}

/// Two simulated streams in one trace file with pooled reference files.
fn multi_stream_fixture() -> TempDir {
    let dir = TempDir::new().unwrap();
    for (prefix, seed) in [("a", "1"), ("b", "2")] {
        let out = streamlat(
            dir.path(),
            &[
                "simulate",
                "--random",
                "40",
                "--k",
                "3",
                "--gamma-mode",
                "global",
                "--seed",
                seed,
                "--noise",
                "0.2",
                "--out-prefix",
                prefix,
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for suffix in ["trace.jsonl", "src.txt", "ref.txt"] {
        let joined = format!(
            "{}{}",
            fs::read_to_string(dir.path().join(format!("a.{suffix}"))).unwrap(),
            fs::read_to_string(dir.path().join(format!("b.{suffix}"))).unwrap()
        );
        write(dir.path(), &format!("all.{suffix}"), &joined);
    }
    dir
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let dir = multi_stream_fixture();
    let args = [
        "evaluate",
        "--trace",
        "all.trace.jsonl",
        "--src-refs",
        "all.src.txt",
        "--tgt-refs",
        "all.ref.txt",
        "--per-sentence",
    ];
    let run = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_streamlat"))
            .current_dir(dir.path())
            .env("RAYON_NUM_THREADS", threads)
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    let one = run("1");
    assert_eq!(one, run("1"));
    assert_eq!(one, run("4"));
    let report: Value = serde_json::from_slice(&one).unwrap();
    assert_eq!(report["streams"], 2);
    assert_eq!(report["sentences"], 80);
}

#[test]
fn simulated_policy_files_evaluate_to_increasing_lag() {
    let dir = TempDir::new().unwrap();
    let mut al = Vec::new();
    for k in ["1", "3", "5"] {
        let out = streamlat(
            dir.path(),
            &[
                "simulate",
                "--random",
                "200",
                "--k",
                k,
                "--seed",
                "7",
                "--out-prefix",
                "p",
            ],
        );
        assert!(out.status.success());
        let listed = String::from_utf8(out.stdout).unwrap();
        assert_eq!(listed.lines().count(), 5);
        let report = json(&streamlat(
            dir.path(),
            &[
                "evaluate",
                "--trace",
                "p.trace.jsonl",
                "--src-seg",
                "p.src.seg",
                "--hyp-seg",
                "p.hyp.seg",
                "--metrics",
                "al,dal",
                "--s",
                "1",
            ],
        ));
        let v = values(&report);
        assert!(v[1].1 >= v[0].1, "DAL below AL at k={k}");
        assert!(
            (v[1].1 - k.parse::<f64>().unwrap()).abs() < 0.05,
            "DAL(s=1) {} far from k={k}",
            v[1].1
        );
        al.push(v[0].1);
    }
    assert!(al.windows(2).all(|w| w[1] > w[0]), "{al:?}");
}

#[test]
fn simulate_from_length_corpus_with_perturbed_input() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "corpus.txt", "2 2\n2 4\n");
    let out = streamlat(
        dir.path(),
        &[
            "simulate",
            "--corpus",
            "corpus.txt",
            "--k",
            "1",
            "--out-prefix",
            "t",
        ],
    );
    assert!(out.status.success());
    let trace: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("t.trace.jsonl")).unwrap())
            .unwrap();
    assert_eq!(trace["delays"], serde_json::json!([1, 2, 3, 3, 4, 4]));
    assert_eq!(
        fs::read_to_string(dir.path().join("t.src.seg")).unwrap(),
        "2 4\n"
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("t.hyp.seg")).unwrap(),
        "2 6\n"
    );

    let out = streamlat(
        dir.path(),
        &[
            "simulate",
            "--random",
            "30",
            "--k",
            "2",
            "--perturb-max-shift",
            "2",
            "--seed",
            "3",
            "--out-prefix",
            "q",
        ],
    );
    assert!(out.status.success());
    assert!(dir.path().join("q.sys.seg").exists());
}

#[test]
fn resegment_writes_segmentation_cost_and_text() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "hyp.txt", "the cat sat\non the mat today\n");
    write(dir.path(), "refs.txt", "The cat sat on\nthe mat\ntoday\n");
    let out = streamlat(
        dir.path(),
        &[
            "resegment",
            "--hyp",
            "hyp.txt",
            "--refs",
            "refs.txt",
            "--out-prefix",
            "r",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("r.seg")).unwrap(),
        "4 6 7\n"
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("r.txt")).unwrap(),
        "the cat sat on\nthe mat\ntoday\n"
    );
    let cost: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.cost.json")).unwrap()).unwrap();
    assert_eq!(
        cost,
        serde_json::json!({"total_cost": 0, "per_segment_cost": [0, 0, 0]})
    );

    let out = streamlat(
        dir.path(),
        &[
            "resegment",
            "--hyp",
            "hyp.txt",
            "--refs",
            "refs.txt",
            "--out-prefix",
            "c",
            "--case-sensitive",
        ],
    );
    assert!(out.status.success());
    let cost: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("c.cost.json")).unwrap()).unwrap();
    assert_eq!(cost["total_cost"], 1);
}

#[test]
fn exit_codes_separate_io_from_validation() {
    let dir = table_fixture();
    let missing = streamlat(
        dir.path(),
        &["evaluate", "--trace", "missing.jsonl", "--mode", "concat1"],
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.jsonl"));

    let bad_mode = streamlat(
        dir.path(),
        &["evaluate", "--trace", "trace.jsonl", "--mode", "bogus"],
    );
    assert_eq!(bad_mode.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_mode.stderr).contains("concat1, sentence, stream"));

    let bad_metric = streamlat(
        dir.path(),
        &[
            "evaluate",
            "--trace",
            "trace.jsonl",
            "--mode",
            "concat1",
            "--metrics",
            "ap,bleu",
        ],
    );
    assert_eq!(bad_metric.status.code(), Some(1));

    write(dir.path(), "short.seg", "2 5\n");
    let mismatch = streamlat(
        dir.path(),
        &[
            "evaluate",
            "--trace",
            "trace.jsonl",
            "--src-seg",
            "short.seg",
            "--hyp-seg",
            "hyp.seg",
        ],
    );
    assert_eq!(mismatch.status.code(), Some(1));

    let no_segs = streamlat(dir.path(), &["evaluate", "--trace", "trace.jsonl"]);
    assert_eq!(no_segs.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&no_segs.stderr).contains("--src-seg or --src-refs"));

    write(
        dir.path(),
        "broken.jsonl",
        &format!("{TRACE}\n{{\"source_stream\": 3}}\n"),
    );
    let broken = streamlat(
        dir.path(),
        &["evaluate", "--trace", "broken.jsonl", "--mode", "concat1"],
    );
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("line 2"));

    let usage = streamlat(dir.path(), &["evaluate", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn empty_segments_are_rejected_unless_allowed() {
    let dir = table_fixture();
    write(dir.path(), "gap.seg", "2 2 6\n");
    write(dir.path(), "src3.seg", "1 2 4\n");
    let args = [
        "evaluate",
        "--trace",
        "trace.jsonl",
        "--src-seg",
        "src3.seg",
        "--hyp-seg",
        "gap.seg",
        "--s",
        "1",
    ];
    let rejected = streamlat(dir.path(), &args);
    assert_eq!(rejected.status.code(), Some(1));

    let mut allowed = args.to_vec();
    allowed.push("--allow-empty");
    let out = streamlat(dir.path(), &allowed);
    let report = json(&out);
    assert_eq!(report["skipped"], serde_json::json!([1]));
    assert_eq!(report["warnings"]["empty_segments"], 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped"));
}
