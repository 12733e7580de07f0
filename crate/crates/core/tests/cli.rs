use std::path::Path;
use std::process::{Command, Output};

use cvpower::cli::{read_repetitions_jsonl, read_summary_csv, REPETITIONS_FILE, SUMMARY_FILE};
use cvpower::datagen::{generate, DatasetSpec, Label};

fn cvpower(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvpower"))
        .args(args)
        .env_remove("CVPOWER_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json_line(o: &Output) -> serde_json::Value {
    let text = stdout(o);
    let line = text
        .lines()
        .find(|l| l.starts_with('{'))
        .expect("json line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn calculators() {
    let o = cvpower(&["required-n", "--d", "0.6", "--m", "20", "--l", "2"]);
    assert!(o.status.success());
    assert_eq!(json_line(&o)["n"], 89);

    let o = cvpower(&["required-n", "--d", "0.8", "--m", "40", "--l", "6"]);
    assert!(o.status.success());
    assert!(stderr(&o).starts_with("warning: "), "{}", stderr(&o));

    let o = cvpower(&["confidence", "--d", "0.8", "--m", "10", "--n", "100"]);
    assert!(stdout(&o).contains("85.6%"));
    assert_eq!(json_line(&o)["c22"], 85.6);

    let o = cvpower(&["recommended-n", "--d", "0.6", "--m", "40", "--c", "95"]);
    assert_eq!(json_line(&o)["n"], 342);

    let o = cvpower(&["recommended-n", "--d", "0.4", "--m", "40", "--c", "99"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error:"));

    let o = cvpower(&["adjust-unbalanced", "--n", "89", "--gamma-db", "1.5"]);
    let v = json_line(&o);
    assert_eq!(
        (v["n_small"].as_u64(), v["n_large"].as_u64()),
        (Some(72), Some(107))
    );

    let o = cvpower(&["effective-d", "--d", "0.6", "--gamma-d", "2"]);
    assert!(stdout(&o).starts_with("effective D: 0.9\n"));

    assert_eq!(cvpower(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        cvpower(&["confidence", "--d", "0.2", "--m", "10", "--n", "100"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn exported_model_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.toml");
    assert!(cvpower(&["export-model", "--out", path.to_str().unwrap()])
        .status
        .success());
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("39.37", "49.37");
    std::fs::write(&path, text).unwrap();
    let o = cvpower(&[
        "required-n",
        "--d",
        "1.0",
        "--m",
        "10",
        "--l",
        "2",
        "--model",
        path.to_str().unwrap(),
    ]);
    assert_eq!(json_line(&o)["n"], 41);
}

const CONFIG: &str = r#"
repetitions = 6
master_seed = 42

[grid]
n = [12, 16]
m = [5]
l = [2]
d = [0.0, 1.0]
method = ["kfold", "nested_kfold"]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("campaign.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn campaign(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "campaign",
        "--config",
        config,
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cvpower(&args)
}

#[test]
fn campaign_output_is_worker_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(campaign(&config, &a, &["--workers", "1"]).status.success());
    assert!(campaign(&config, &b, &["--workers", "3"]).status.success());
    for file in [SUMMARY_FILE, REPETITIONS_FILE] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }

    let rows = read_summary_csv(&std::fs::read_to_string(a.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    let reps = read_repetitions_jsonl(&std::fs::read_to_string(a.join(REPETITIONS_FILE)).unwrap())
        .unwrap();
    assert_eq!(reps.len(), 8 * 6);
    for row in &rows {
        let mine: Vec<f64> = reps
            .iter()
            .filter(|r| r.scenario_id == row.scenario_id)
            .map(|r| r.record.mean_acc)
            .collect();
        assert_eq!(mine.len(), 6);
        let mean = mine.iter().sum::<f64>() / 6.0;
        assert!((mean - row.mean_acc).abs() < 1e-12);
        assert_eq!(row.h0_upper.is_some(), row.d_effect == 0.0);
        assert_eq!(row.confidence_values().unwrap().len(), 2);
    }

    let c = dir.path().join("c");
    assert!(campaign(&config, &c, &["--seed", "43"]).status.success());
    assert_ne!(
        std::fs::read(a.join(SUMMARY_FILE)).unwrap(),
        std::fs::read(c.join(SUMMARY_FILE)).unwrap()
    );
}

#[test]
fn campaign_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(dir.path(), &CONFIG.replace("d = [0.0, 1.0]", "d = []"));
    let o = campaign(&empty, &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 9"), "{}", stderr(&o));

    // 8 per class cannot host a 10-fold split; both methods still run at 12.
    let partial = write_config(dir.path(), &CONFIG.replace("n = [12, 16]", "n = [8, 12]"));
    let out = dir.path().join("p");
    let o = campaign(&partial, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("infeasible"));
    let rows = read_summary_csv(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.n_per_class == 12));

    let o = campaign(&partial, &dir.path().join("s"), &["--strict"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("s").join(SUMMARY_FILE).exists());
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &CONFIG.replace(
            "method = [\"kfold\", \"nested_kfold\"]",
            "method = [\"kfold\"]",
        ),
    );
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_cvpower"))
        .args(["campaign", "--config", &config])
        .env("CVPOWER_OUT_DIR", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join(SUMMARY_FILE).exists());
}

fn synthetic_csv(path: &Path) {
    let spec = DatasetSpec::balanced(40, 5, 1, 1.5)
        .with_gamma_db(1.25)
        .with_seed(5);
    let ds = generate(&spec).unwrap();
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["f_a", "f_b", "f_c", "f_d", "f_e", "group"])
        .unwrap();
    for (r, label) in ds.labels().iter().enumerate() {
        let mut rec: Vec<String> = ds.features().row(r).iter().map(|v| v.to_string()).collect();
        rec.push(
            if *label == Label::Positive {
                "patient"
            } else {
                "control"
            }
            .into(),
        );
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn compare_cv_on_user_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("data.csv");
    synthetic_csv(&csv_path);
    let out = dir.path().join("cmp");
    let o = cvpower(&[
        "compare-cv",
        "--csv",
        csv_path.to_str().unwrap(),
        "--label",
        "group",
        "--l",
        "1",
        "--repeats",
        "12",
        "--seed",
        "1",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let acc = std::fs::read_to_string(out.join("compare_accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 5);
    let sel = std::fs::read_to_string(out.join("compare_selection.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(sel.as_bytes());
    let mut nested_top = 0.0;
    let mut total = std::collections::BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[2], "1", "l = 1 has a single step");
        let p: f64 = rec[4].parse().unwrap();
        *total.entry(rec[0].to_string()).or_insert(0.0) += p;
        if &rec[0] == "nested_kfold" && &rec[3] == "f_a" {
            nested_top = p;
        }
    }
    assert!(
        nested_top >= 0.6,
        "nested picked the strong feature with p = {nested_top}"
    );
    for (method, sum) in total {
        assert!(
            (sum - 1.0).abs() < 1e-9,
            "{method} step probabilities sum to {sum}"
        );
    }
}

#[test]
fn compare_cv_reports_bad_cells() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "x,y,label\n1,2,a\n3,,b\n").unwrap();
    let o = cvpower(&[
        "compare-cv",
        "--csv",
        path.to_str().unwrap(),
        "--label",
        "label",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(stderr(&o).contains("'y'"), "{}", stderr(&o));
}
