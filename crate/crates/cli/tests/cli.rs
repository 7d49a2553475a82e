use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nblda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nblda"))
        .args(args)
        .env("NBLDA_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nblda(args);
    assert!(
        out.status.success(),
        "nblda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Six samples, two classes, three genes; gene a is high in class 2,
/// gene c is high in class 1.
fn separable(dir: &Path) -> (PathBuf, PathBuf) {
    let counts = dir.join("counts.tsv");
    let labels = dir.join("labels.tsv");
    fs::write(
        &counts,
        "gene\ts1\ts2\ts3\ts4\ts5\ts6\n\
         a\t3\t5\t4\t300\t410\t250\n\
         b\t90\t120\t70\t80\t110\t100\n\
         c\t200\t310\t260\t6\t2\t9\n",
    )
    .unwrap();
    fs::write(&labels, "sample\tclass\ns1\t1\ns2\t1\ns3\t1\ns4\t2\ns5\t2\ns6\t2\n").unwrap();
    (counts, labels)
}

fn predicted_classes(tsv: &str) -> Vec<String> {
    tsv.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap().to_string()).collect()
}

#[test]
fn fit_then_predict_recovers_training_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (counts, labels) = separable(dir.path());
    let model = dir.path().join("model.json");
    ok(&["fit", "--counts", path_str(&counts), "--labels", path_str(&labels), "--output", path_str(&model)]);
    for method in ["nblda", "plda"] {
        let out = ok(&["predict", "--model", path_str(&model), "--counts", path_str(&counts), "--method", method]);
        assert!(out.starts_with("sample_id\tpredicted_class\tposterior_1\tposterior_2\n"), "{out}");
        assert_eq!(predicted_classes(&out), ["1", "1", "1", "2", "2", "2"], "{method}");
    }
}

#[test]
fn predict_json_and_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (counts, labels) = separable(dir.path());
    let model = dir.path().join("model.json");
    ok(&["fit", "--counts", path_str(&counts), "--labels", path_str(&labels), "--phi", "0.5", "-o", path_str(&model)]);

    // Scores from the persisted model equal scores from a fresh in-process fit.
    let text = fs::read_to_string(&model).unwrap();
    let loaded = nblda::model_from_json(&text).unwrap();
    let matrix = nblda::load_counts_path(&counts, nblda::Layout::GenesAsRows, nblda::Delimiter::Tab).unwrap();
    let label_pairs = nblda::load_labels_path(&labels).unwrap();
    let data = nblda::LabeledDataset::from_sample_labels(matrix.clone(), &label_pairs).unwrap();
    let options = nblda::FitOptions {
        dispersion: nblda::DispersionSource::Common(0.5),
        ..Default::default()
    };
    let fresh = nblda::fit_nblda(&data, &options).unwrap();
    assert_eq!(loaded, fresh);

    let out = ok(&["predict", "--model", path_str(&model), "--counts", path_str(&counts), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let preds = nblda::predict(&fresh, &matrix, nblda::ClassifierMethod::Nblda).unwrap();
    for (p, j) in preds.iter().zip(v["predictions"].as_array().unwrap()) {
        let scores: Vec<f64> = serde_json::from_value(j["scores"].clone()).unwrap();
        assert_eq!(scores, p.scores.scores);
    }
}

#[test]
fn predict_rejects_mismatched_genes() {
    let dir = tempfile::tempdir().unwrap();
    let (counts, labels) = separable(dir.path());
    let model = dir.path().join("model.json");
    ok(&["fit", "--counts", path_str(&counts), "--labels", path_str(&labels), "--top-genes", "2", "--phi", "1", "-o", path_str(&model)]);
    let out = nblda(&["predict", "--model", path_str(&model), "--counts", path_str(&counts)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: ") && err.contains("b"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn score_curve_plda_column_is_constant() {
    let out = ok(&["score-curve"]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("phi\tnblda\tplda"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split('\t').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 201);
    let want = 500.0 * (10.0 * 1.5f64.ln() - 15.0);
    for r in &rows {
        assert!((r[2] - want).abs() < 1e-9);
    }
    assert_eq!(rows[0][1], rows[0][2]);
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1]));
}

#[test]
fn estimate_dispersion_reports_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (counts, labels) = separable(dir.path());
    let out = ok(&["estimate-dispersion", "--counts", path_str(&counts), "--labels", path_str(&labels)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "gene_id\tphi_initial\tphi_shrunken");
    assert_eq!(lines.len(), 5);
    let summary = lines[4];
    assert!(summary.starts_with("# delta="), "{summary}");
    assert!(summary.contains("threshold=0.1 recommended="), "{summary}");
}

#[test]
fn simulate_dump_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let per = dir.path().join("per.tsv");
    let summary = ok(&[
        "simulate",
        "--samples",
        "40",
        "--phi",
        "20",
        "--replicates",
        "5",
        "--per-replicate",
        path_str(&per),
        "--dump-data",
        path_str(&data),
    ]);
    assert!(summary.starts_with("method\tmean_rate\tstd_error\treplicates\tskipped\nnblda\t"));
    assert_eq!(fs::read_to_string(&per).unwrap().lines().count(), 11);

    let counts = data.join("counts.tsv");
    let labels = data.join("labels.tsv");
    let mut rates = Vec::new();
    for method in ["nblda", "plda"] {
        let out = ok(&[
            "evaluate",
            "--counts",
            path_str(&counts),
            "--labels",
            path_str(&labels),
            "--test-count",
            "16",
            "--runs",
            "30",
            "--method",
            method,
            "--seed",
            "3",
        ]);
        let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
        assert_eq!(&row[..3], [method, "30", "16"]);
        rates.push(row[3].parse::<f64>().unwrap());
    }
    println!("evaluate on phi=20 data: nblda {} plda {}", rates[0], rates[1]);
    assert!(rates[0] < rates[1], "nblda {} vs plda {}", rates[0], rates[1]);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(nblda(&[]).status.code(), Some(2));
    assert_eq!(nblda(&["fit"]).status.code(), Some(2));
    assert_eq!(nblda(&["simulate", "--replicates", "many"]).status.code(), Some(2));
    assert_eq!(
        nblda(&["fit", "--counts", "a", "--labels", "b", "--phi", "1", "--phi-file", "c"]).status.code(),
        Some(2)
    );
}

#[test]
fn data_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "gene\ts1\ts2\na\t1\t3.5\n").unwrap();
    let labels = dir.path().join("labels.tsv");
    fs::write(&labels, "s1\t1\ns2\t2\n").unwrap();
    let out = nblda(&["fit", "--counts", path_str(&bad), "--labels", path_str(&labels)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("3.5"), "{err}");
    assert!(nblda(&["simulate", "--de-proportion", "0"]).status.code() == Some(1));
}

#[test]
fn output_file_is_written_atomically_and_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.tsv");
    ok(&["score-curve", "--grid-steps", "5", "-o", path_str(&path)]);
    let stdout = ok(&["score-curve", "--grid-steps", "5"]);
    assert_eq!(fs::read_to_string(&path).unwrap(), stdout);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}
