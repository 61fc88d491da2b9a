use std::path::Path;
use std::process::{Command, Output};

fn specnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specnet")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gen_small(dir: &Path, out: &str) -> Output {
    specnet(dir, &["--out-dir", out, "--seed", "7", "gen-data", "--d", "2", "--n", "16", "--counts", "3,3,3"])
}

fn loss_columns(path: &Path) -> Vec<(usize, String)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0].parse().unwrap(), cols[1].to_string())
        })
        .collect()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_small(dir.path(), "a");
    let b = gen_small(dir.path(), "b");
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0);
    let ca = std::fs::read(dir.path().join("a/corpus.json")).unwrap();
    let cb = std::fs::read(dir.path().join("b/corpus.json")).unwrap();
    assert_eq!(ca, cb);
    assert!(stderr(&a).contains("generated 9 samples"));
}

#[test]
fn empty_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = specnet(dir.path(), &["gen-data", "--counts", "0,0,0"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("at least one sample"));
}

#[test]
fn bad_arguments_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&specnet(dir.path(), &["validate", "--suite", "nonsense"])), 1);
    assert_eq!(code(&specnet(dir.path(), &["gen-data", "--counts", "1,2"])), 1);
    assert_eq!(code(&specnet(dir.path(), &[])), 1);
    assert_eq!(code(&specnet(dir.path(), &["--help"])), 0);
}

#[test]
fn oracle_suite_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = specnet(dir.path(), &["--out-dir", "v", "validate", "--suite", "oracle"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("v/validation.csv")).unwrap();
    assert!(csv.starts_with("suite,case,metric,bound,pass"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with("true")), "{csv}");
}

#[test]
fn failing_suite_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = specnet(dir.path(), &["--out-dir", "v", "validate", "--suite", "decay", "--d", "2", "--alpha", "1"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("v/validation.csv")).unwrap();
    assert!(csv.contains("shell_maxima_monotone"));
}

#[test]
fn train_reports_parameter_count_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(dir.path(), "o")), 0);
    let out = specnet(
        dir.path(),
        &["--out-dir", "o", "train", "--d", "2", "--n-trun", "8", "--m", "2", "--epochs", "3", "--tol", "1e-12"],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("3072 real parameters"));
    let ck: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["real_param_count"], 3072);
    assert_eq!(ck["epoch"], 3);
    assert_eq!(loss_columns(&dir.path().join("o/train_loss.csv")).len(), 3);

    // a loose tolerance stops at the first evaluation
    let out =
        specnet(dir.path(), &["--out-dir", "p", "train", "--corpus", "o/corpus.json", "--n-trun", "4", "--tol", "10"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn resume_continues_the_same_curve() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(dir.path(), "o")), 0);
    let common = ["--corpus", "o/corpus.json", "--n-trun", "4", "--tol", "1e-12"];
    let full = specnet(dir.path(), &[&["--out-dir", "full", "train", "--epochs", "12"][..], &common].concat());
    assert_eq!(code(&full), 3, "{}", stderr(&full));
    let half = specnet(dir.path(), &[&["--out-dir", "half", "train", "--epochs", "6"][..], &common].concat());
    assert_eq!(code(&half), 3);
    std::fs::copy(dir.path().join("half/checkpoint.json"), dir.path().join("half.json")).unwrap();
    let rest = specnet(
        dir.path(),
        &[&["--out-dir", "rest", "train", "--epochs", "12", "--resume", "half.json"][..], &common].concat(),
    );
    assert_eq!(code(&rest), 3, "{}", stderr(&rest));
    let a = loss_columns(&dir.path().join("full/train_loss.csv"));
    let b = loss_columns(&dir.path().join("rest/train_loss.csv"));
    assert_eq!(b.first().map(|r| r.0), Some(6));
    assert_eq!(&a[6..], &b[..]);
}

#[test]
fn simulate_writes_moments_and_reference_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = specnet(
        dir.path(),
        &[
            "--out-dir",
            "s",
            "--run-id",
            "inel",
            "simulate",
            "--preset",
            "inelastic-1",
            "--n",
            "16",
            "--e",
            "0.5",
            "--t-final",
            "0.2",
            "--reference",
            "fast",
            "--dump-every",
            "10",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("s/inel.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let ke = header.iter().position(|h| *h == "ke").unwrap();
    let err = header.iter().position(|h| *h == "err_vs_reference").unwrap();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.windows(2).all(|w| w[1][ke] < w[0][ke]));
    assert!(rows.iter().all(|r| r[err] == 0.0));
    assert!(dir.path().join("s/inel_0.json").exists());
    assert!(dir.path().join("s/inel_10.json").exists());
    assert!(dir.path().join("s/simulate_inel.manifest.json").exists());
}

#[test]
fn specnet_operator_runs_above_its_training_grid() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(dir.path(), "o")), 0);
    let t = specnet(dir.path(), &["--out-dir", "o", "train", "--n-trun", "4", "--epochs", "2"]);
    assert_eq!(code(&t), 3);
    let out = specnet(
        dir.path(),
        &[
            "--out-dir",
            "o",
            "simulate",
            "--preset",
            "bkw",
            "--n",
            "64",
            "--t-final",
            "0.05",
            "--operator",
            "specnet",
            "--checkpoint",
            "o/checkpoint.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // a checkpoint whose band does not fit the grid is refused
    let small = specnet(
        dir.path(),
        &["--out-dir", "o", "simulate", "--n", "4", "--operator", "specnet", "--checkpoint", "o/checkpoint.json"],
    );
    assert_eq!(code(&small), 1, "{}", stderr(&small));
}

#[test]
fn manifest_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_small(dir.path(), "a")), 0);
    let first = std::fs::read(dir.path().join("a/corpus.json")).unwrap();
    let out = specnet(dir.path(), &["--from-manifest", "a/gen-data_run.manifest.json", "--out-dir", "b"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // the corpus path is not pinned, so it follows the new output directory
    assert_eq!(std::fs::read(dir.path().join("b/corpus.json")).unwrap(), first);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/gen-data_run.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["data"]["counts"], serde_json::json!([3, 3, 3]));
}

#[test]
fn config_file_sits_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"grid": {"n": 16}, "data": {"counts": [2, 0, 0]}, "seed": 3}"#)
        .unwrap();
    let out = specnet(dir.path(), &["--config", "c.json", "--out-dir", "o", "gen-data", "--counts", "1,1,0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/gen-data_run.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config"]["grid"]["n"], 16);
    assert_eq!(m["config"]["seed"], 3);
    assert_eq!(m["config"]["data"]["counts"], serde_json::json!([1, 1, 0]));
}

#[test]
fn bench_writes_speedup_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = specnet(dir.path(), &["--out-dir", "b", "bench", "--ns", "16,32", "--reps", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    assert!(csv.starts_with("n,fast_seconds,specnet_seconds,speedup"));
    assert_eq!(csv.lines().count(), 3);
}
