use std::path::Path;
use std::process::Command;

use serde_json::Value;
use vsematch::Matrix;
use vsematch_cli::format::{self, Precision};

fn vsematch(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vsematch"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--classes",
        "10",
        "--per-class",
        "20",
        "--dim",
        "32",
        "--seed",
        "7",
        "--out-dir",
        p(dir),
    ];
    args.extend_from_slice(extra);
    let (code, _, err) = vsematch(&args);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn synth_is_deterministic_and_counts_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &[]);
    synth(&b, &[]);
    for f in ["queries.emb", "items.emb", "pairs.tsv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        std::fs::read_to_string(a.join("pairs.tsv")).unwrap().lines().count(),
        200
    );
    assert!(std::fs::read(a.join("queries.emb"))
        .unwrap()
        .starts_with(b"EMB1 200 32 f64\n"));
}

#[test]
fn hub_fraction_out_of_range_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = vsematch(&["synth", "--hub-fraction", "1.5", "--out-dir", p(tmp.path())]);
    assert_eq!(code, 2);
    assert!(err.contains("--hub-fraction"), "{err}");
}

#[test]
fn embedding_files_round_trip_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let m = Matrix::from_rows(&[[0.1, -1e-310, f64::MAX], [std::f64::consts::PI, -0.0, 1.0]]).unwrap();
    let path = tmp.path().join("m.emb");
    format::write_embeddings(&path, &m, Precision::F64).unwrap();
    let back = format::read_embeddings(&path).unwrap();
    assert!(m
        .as_slice()
        .iter()
        .zip(back.as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    let exact32 = Matrix::from_rows(&[[0.5, -2.25, 1024.0]]).unwrap();
    format::write_embeddings(&path, &exact32, Precision::F32).unwrap();
    assert_eq!(format::read_embeddings(&path).unwrap(), exact32);
}

#[test]
fn truncated_embedding_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let q = tmp.path().join("queries.emb");
    let bytes = std::fs::read(&q).unwrap();
    std::fs::write(&q, &bytes[..bytes.len() - 3]).unwrap();
    let (code, _, err) = vsematch(&["eval", "--queries", p(&q), "--items", p(&tmp.path().join("items.emb"))]);
    assert_eq!(code, 3);
    assert!(err.contains("bytes"), "{err}");
    let (code, _, _) = vsematch(&["eval", "--queries", "/nonexistent/q.emb", "--items", p(&q)]);
    assert_eq!(code, 3);
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let (q, i, pairs) = (data.join("queries.emb"), data.join("items.emb"), data.join("pairs.tsv"));
    let mut args = vec![
        "train",
        "--queries",
        p(&q),
        "--items",
        p(&i),
        "--pairs",
        p(&pairs),
        "--out-dir",
        p(out),
        "--epochs",
        "6",
        "--batch-size",
        "32",
    ];
    args.extend_from_slice(extra);
    let (code, _, err) = vsematch(&args);
    (code, err)
}

#[test]
fn knn_one_and_max_write_identical_histories() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(train(&data, &a, &["--loss", "knn", "--knn-k", "1"]).0, 0);
    assert_eq!(train(&data, &b, &["--loss", "max"]).0, 0);
    assert_eq!(
        std::fs::read(a.join("history.tsv")).unwrap(),
        std::fs::read(b.join("history.tsv")).unwrap()
    );
}

#[test]
fn zero_lr_history_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out = tmp.path().join("m");
    assert_eq!(train(&data, &out, &["--lr", "0"]).0, 0);
    let h = format::read_history(&out.join("history.tsv")).unwrap();
    assert_eq!(h.len(), 6);
    assert_eq!(h.first().unwrap().loss, h.last().unwrap().loss);
}

#[test]
fn default_schedule_is_nonincreasing() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--per-class", "30"]);
    let out = tmp.path().join("m");
    let (code, err) = train(&data, &out, &["--epochs", "30", "--batch-size", "128"]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(out.join("history.tsv")).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert!(text.lines().all(|l| l.split('\t').count() == 3));
    let h = format::read_history(&out.join("history.tsv")).unwrap();
    assert!(h.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert_eq!(h[0].lr, 0.001);
    assert!((h[29].lr - 1e-5).abs() < 1e-18);
    let enc = format::read_encoder(&out.join("query_encoder.emb")).unwrap();
    assert_eq!((enc.d_in(), enc.d_out()), (32, 16));
}

#[test]
fn oversized_batch_or_k_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    assert_eq!(train(&data, &tmp.path().join("m"), &["--batch-size", "500"]).0, 2);
    assert_eq!(train(&data, &tmp.path().join("m"), &["--knn-k", "32"]).0, 2);
    assert_eq!(train(&data, &tmp.path().join("m"), &["--batch-size", "1"]).0, 2);
}

fn eval(data: &Path, extra: &[&str]) -> (i32, String, String) {
    let (q, i) = (data.join("queries.emb"), data.join("items.emb"));
    let mut args = vec!["eval", "--queries", p(&q), "--items", p(&i)];
    args.extend_from_slice(extra);
    vsematch(&args)
}

#[test]
fn noiseless_naive_eval_is_perfect_both_ways() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let (code, out, err) = eval(tmp.path(), &["--pairs", p(&tmp.path().join("pairs.tsv"))]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        assert_eq!(r["r_at_1"], 100.0);
        for key in [
            "direction",
            "r_at_1",
            "r_at_5",
            "r_at_10",
            "med_r",
            "mean_r",
            "strategy",
            "params",
        ] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn json_and_tsv_agree_at_full_precision() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--noise", "0.3", "--per-class", "7"]);
    let (_, json, _) = eval(tmp.path(), &["--inference", "is", "--diagnose"]);
    let (_, tsv, _) = eval(tmp.path(), &["--inference", "is", "--diagnose", "--format", "tsv"]);
    let v: Value = serde_json::from_str(&json).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "direction\tr_at_1\tr_at_5\tr_at_10\tmed_r\tmean_r\tstrategy\tparams"
    );
    for r in v["reports"].as_array().unwrap() {
        let cells: Vec<&str> = lines.next().unwrap().split('\t').collect();
        assert_eq!(cells[0], r["direction"].as_str().unwrap());
        for (c, key) in ["r_at_1", "r_at_5", "r_at_10", "med_r", "mean_r"].iter().enumerate() {
            assert_eq!(cells[c + 1].parse::<f64>().unwrap(), r[key].as_f64().unwrap(), "{key}");
        }
        assert_eq!(cells[6], "is");
        assert_eq!(serde_json::from_str::<Value>(cells[7]).unwrap(), r["params"]);
    }
    assert!(tsv.contains("\tat_least_5\t"));
    assert!(v["hubs"].as_array().unwrap().len() == 2);
}

#[test]
fn csls_k_beyond_set_size_names_the_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let (code, _, err) = eval(tmp.path(), &["--inference", "csls", "--csls-k", "201"]);
    assert_eq!(code, 2);
    assert!(err.contains("--csls-k") && err.contains("200"), "{err}");
}

#[test]
fn mismatched_dimensions_exit_five() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--dim-item", "16"]);
    let (code, _, err) = eval(tmp.path(), &[]);
    assert_eq!(code, 5, "{err}");
}

#[test]
fn csls_bucket_does_not_exceed_naive_on_hubbed_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (code, _, _) = vsematch(&[
        "synth",
        "--classes",
        "10",
        "--per-class",
        "50",
        "--dim",
        "128",
        "--noise",
        "0.044",
        "--class-spread",
        "0.2",
        "--hub-fraction",
        "0.3",
        "--hub-strength",
        "2",
        "--seed",
        "3",
        "--out-dir",
        p(dir),
    ]);
    assert_eq!(code, 0);
    let bucket = |strategy: &str| {
        let (_, out, _) = eval(dir, &["--inference", strategy, "--diagnose"]);
        let v: Value = serde_json::from_str(&out).unwrap();
        let t2i = &v["hubs"][1];
        assert_eq!(t2i["direction"], "text_to_image");
        let at_least = t2i["at_least"].as_array().unwrap();
        at_least.iter().find(|e| e[0] == 5).unwrap()[1]["count"]
            .as_u64()
            .unwrap()
    };
    let naive = bucket("naive");
    assert!(naive > 0);
    assert!(bucket("csls") <= naive);
}

#[test]
fn folds_and_hungarian_reports() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--noise", "0.2"]);
    let (code, out, err) = eval(tmp.path(), &["--folds", "5"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["reports"][0]["params"]["folds"], 5);
    let (code, out, _) = eval(tmp.path(), &["--inference", "hungarian", "--format", "tsv"]);
    assert_eq!(code, 0);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(&row[2..6], &["NA"; 4]);
    assert!(row[7].contains("matching_weight"));
}

#[test]
fn report_file_is_written_atomically_in_place() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let out = tmp.path().join("report.tsv");
    let (code, stdout, _) = eval(tmp.path(), &["--format", "tsv", "--out", p(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("R@1 100.0"));
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("direction\t"));
    let leftovers = std::fs::read_dir(tmp.path()).unwrap().count();
    assert_eq!(leftovers, 4);
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = vsematch(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("synth") && out.contains("eval"));
}
