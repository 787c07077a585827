use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chromalign"));
    for s in sets {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().unwrap()
}

fn ok(args: &[&str], sets: &[&str]) -> Output {
    let out = run(args, sets);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

const SMALL: [&str; 3] = ["n_samples=4", "variant=none", "epochs=2"];

/// A workspace carried through simulate, detect, features and train.
struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn new(sets: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = Self { dir };
        ok(&["simulate", "--out", s(&p.path("sim"))], sets);
        ok(
            &[
                "detect",
                "--matrices",
                s(&p.path("sim/matrices")),
                "--out",
                s(&p.path("peaks.csv")),
                "--truth",
                s(&p.path("sim/truth.csv")),
            ],
            sets,
        );
        ok(
            &[
                "features",
                "--matrices",
                s(&p.path("sim/matrices")),
                "--peaks",
                s(&p.path("peaks.csv")),
                "--out",
                s(&p.path("features")),
            ],
            sets,
        );
        ok(
            &[
                "train",
                "--features",
                s(&p.path("features")),
                "--out",
                s(&p.path("weights.json")),
                "--history",
                s(&p.path("history.csv")),
            ],
            sets,
        );
        p
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn align(&self, sets: &[&str], out: &str) {
        ok(
            &[
                "align",
                "--weights",
                s(&self.path("weights.json")),
                "--features",
                s(&self.path("features")),
                "--out",
                s(&self.path(out)),
                "--scores",
                s(&self.path(&format!("{out}.scores"))),
            ],
            sets,
        );
    }

    fn benchmark(&self, sets: &[&str], out: &str) -> Output {
        ok(
            &[
                "benchmark",
                "--weights",
                s(&self.path("weights.json")),
                "--features",
                s(&self.path("features")),
                "--out",
                s(&self.path(out)),
            ],
            sets,
        )
    }
}

#[test]
fn simulate_writes_one_matrix_per_sample_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--out", s(&a)], &["n_samples=3"]);
    ok(&["simulate", "--out", s(&b)], &["n_samples=3"]);
    let mut names: Vec<_> = fs::read_dir(a.join("matrices"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["S000.csv", "S001.csv", "S002.csv"]);
    for name in names.iter().map(|n| format!("matrices/{n}")).chain(["truth.csv".into()]) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--out", s(dir.path())], &["n_sampels=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_sampels"));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nn_samples = 2\nbogus = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chromalign"))
        .args(["--config", s(&cfg), "simulate", "--out", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn noiseless_detection_finds_every_planted_peak() {
    let dir = tempfile::tempdir().unwrap();
    let sets = ["n_samples=3", "noise_sd=0", "baseline=0", "channels=all"];
    ok(&["simulate", "--out", s(&dir.path().join("sim"))], &sets);
    let peaks = dir.path().join("peaks.csv");
    ok(
        &[
            "detect",
            "--matrices",
            s(&dir.path().join("sim/matrices")),
            "--out",
            s(&peaks),
            "--truth",
            s(&dir.path().join("sim/truth.csv")),
        ],
        &sets,
    );
    let planted = lines(&dir.path().join("sim/truth.csv")).len() - 1;
    let found = lines(&peaks);
    assert_eq!(found.len() - 1, planted);
    assert!(found[1..].iter().all(|l| !l.ends_with(",-1")), "every peak matched to truth");

    let again = dir.path().join("again.csv");
    ok(
        &[
            "detect",
            "--matrices",
            s(&dir.path().join("sim/matrices")),
            "--out",
            s(&again),
            "--truth",
            s(&dir.path().join("sim/truth.csv")),
        ],
        &sets,
    );
    assert_eq!(fs::read(&peaks).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn detect_on_an_empty_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["detect", "--matrices", s(dir.path()), "--out", s(&dir.path().join("p.csv"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_learns_easy_pairs_reproducibly_and_logs_time() {
    let sets = ["preset=air", "n_samples=10", "variant=none", "epochs=40"];
    let p = Pipeline::new(&sets);
    let history = lines(&p.path("history.csv"));
    assert_eq!(history[0], "epoch,split,output,loss,accuracy");
    let last = history
        .iter()
        .rev()
        .find(|l| l.contains(",validation,main,"))
        .expect("validation rows");
    let accuracy: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(accuracy >= 0.95, "{last}");

    let out = ok(
        &[
            "train",
            "--features",
            s(&p.path("features")),
            "--out",
            s(&p.path("weights2.json")),
            "--history",
            s(&p.path("history2.csv")),
        ],
        &sets,
    );
    assert_eq!(fs::read(p.path("weights.json")).unwrap(), fs::read(p.path("weights2.json")).unwrap());
    assert_eq!(fs::read(p.path("history.csv")).unwrap(), fs::read(p.path("history2.csv")).unwrap());
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("trained 40 epochs in"), "{log}");
}

#[test]
fn tiny_cutoff_gives_singleton_groups() {
    let p = Pipeline::new(&SMALL);
    let sets = [&SMALL[..], &["rt_cutoff=0.000001"]].concat();
    p.align(&sets, "report.csv");
    let report = lines(&p.path("report.csv"));
    assert_eq!(report[0], "sample_id,mz,rt_apex,area,group,group_rt");
    let mut groups: Vec<&str> = report[1..].iter().map(|l| l.split(',').nth(4).unwrap()).collect();
    let n = groups.len();
    groups.sort();
    groups.dedup();
    assert_eq!(groups.len(), n);
    // the scores file only lists pairs inside the cutoff
    assert_eq!(lines(&p.path("report.csv.scores")).len(), 1);
}

#[test]
fn align_and_evaluate_rerun_identically() {
    let p = Pipeline::new(&SMALL);
    p.align(&SMALL, "a.csv");
    p.align(&SMALL, "b.csv");
    assert_eq!(fs::read(p.path("a.csv")).unwrap(), fs::read(p.path("b.csv")).unwrap());
    assert_eq!(
        fs::read(p.path("a.csv.scores")).unwrap(),
        fs::read(p.path("b.csv.scores")).unwrap()
    );
    ok(
        &[
            "evaluate",
            "--report",
            s(&p.path("a.csv")),
            "--truth",
            s(&p.path("sim/truth.csv")),
            "--scores",
            s(&p.path("a.csv.scores")),
            "--out",
            s(&p.path("metrics.json")),
        ],
        &SMALL,
    );
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.path("metrics.json")).unwrap()).unwrap();
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let roc = lines(&p.path("roc.csv"));
    assert!(roc.len() >= 3);
}

/// A report whose groups are exactly the truth groups.
#[test]
fn perfect_report_scores_full_marks() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.csv");
    fs::write(
        &truth,
        "sample_id,mz,rt_apex_true,group\nA,73,1.0,0\nB,73,1.01,0\nA,73,2.0,1\nB,73,2.02,1\n",
    )
    .unwrap();
    let report = dir.path().join("report.csv");
    fs::write(
        &report,
        "sample_id,mz,rt_apex,area,group,group_rt\nA,73,1.0,5,0,1.005\nB,73,1.01,5,0,1.005\nA,73,2.0,5,1,2.01\nB,73,2.02,5,1,2.01\n",
    )
    .unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "i,j,probability\n0,1,0.9\n2,3,0.8\n0,2,0.1\n").unwrap();
    let out = dir.path().join("metrics.json");
    let roc = dir.path().join("curve.csv");
    ok(
        &[
            "evaluate",
            "--report",
            s(&report),
            "--truth",
            s(&truth),
            "--scores",
            s(&scores),
            "--out",
            s(&out),
            "--roc",
            s(&roc),
        ],
        &[],
    );
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(m["group"]["tp_rate"].as_f64(), Some(1.0));
    assert_eq!(m["group"]["fdr"].as_f64(), Some(0.0));
    assert_eq!(m["auc"].as_f64(), Some(1.0));
    let curve = lines(&roc);
    let first: Vec<f64> = curve[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    let last: Vec<f64> = curve.last().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, [0.0, 0.0]);
    assert_eq!(last, [1.0, 1.0]);

    let missing = run(
        &[
            "evaluate",
            "--report",
            s(&report),
            "--truth",
            s(&dir.path().join("nope.csv")),
            "--out",
            s(&out),
        ],
        &[],
    );
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn benchmark_rows_fit_and_cutoff_monotonicity() {
    let p = Pipeline::new(&SMALL);
    let sets = [&SMALL[..], &["sizes=8,16,24,32,40", "repeats=1"]].concat();
    let out = p.benchmark(&sets, "bench.csv");
    assert!(String::from_utf8_lossy(&out.stdout).contains("R^2 ="));
    let rows = lines(&p.path("bench.csv"));
    assert_eq!(rows[0], "combinations,seconds");
    assert_eq!(rows.len(), 6);

    let combos = |file: &str| -> Vec<u64> {
        lines(&p.path(file))[1..]
            .iter()
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect()
    };
    let wide = [&sets[..], &["rt_cutoff=6"]].concat();
    p.benchmark(&wide, "wide.csv");
    let (narrow, wide) = (combos("bench.csv"), combos("wide.csv"));
    assert!(narrow.windows(2).all(|w| w[0] <= w[1]));
    assert!(narrow.iter().zip(&wide).all(|(a, b)| a <= b));
}

#[test]
fn help_lists_keys_with_defaults() {
    for (command, keys) in [
        ("simulate", &["n_samples", "drift_amplitude", "seed"][..]),
        ("detect", &["als_lambda", "min_area", "channels"]),
        ("features", &["segment_steps"]),
        ("train", &["variant", "epochs", "learning_rate"]),
        ("align", &["rt_cutoff", "cut_distance"]),
        ("evaluate", &["threshold", "match_tolerance"]),
        ("benchmark", &["sizes", "repeats"]),
        ("rule-align", &["max_linear_shift", "min_diff_peak2peak"]),
    ] {
        let out = ok(&[command, "--help"], &[]);
        let text = String::from_utf8_lossy(&out.stdout);
        for key in keys {
            assert!(text.contains(key), "{command} --help lacks {key}");
        }
        assert!(text.contains("default"), "{command} --help shows no defaults");
    }
}
