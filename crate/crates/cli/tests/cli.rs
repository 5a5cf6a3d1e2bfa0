use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbomm_core::analysis::{outcome_probabilities, ScenarioFile};
use sbomm_core::report::SolutionFile;
use sbomm_core::ConsistencyParams;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sbomm"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
}

fn sbomm(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn class1_fraction(sol: &SolutionFile) -> f64 {
    sol.volume_by_verdict["consistent:1"] / sol.total_volume()
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = example("example1.json");
    assert!(sbomm(&["run", "--config", s(&cfg), "--out", s(&a)])
        .status
        .success());
    assert!(
        sbomm(&["--threads", "1", "run", "--config", s(&cfg), "--out", s(&b)])
            .status
            .success()
    );
    for f in ["solution.json", "trace.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(
        trace.lines().next().unwrap(),
        "iteration,leaves,frozen_class1_volume_fraction,frozen_class2_volume_fraction,model_evaluations_total"
    );

    let text = std::fs::read_to_string(a.join("solution.json")).unwrap();
    let sol = SolutionFile::from_json(&text).unwrap();
    assert_eq!(sol.to_json(), text);
    assert!(class1_fraction(&sol) >= 0.10);
    assert_eq!(sol.volume_by_verdict.len(), 4);

    let c = dir.path().join("c");
    assert!(
        sbomm(&["run", "--config", s(&cfg), "--out", s(&c), "--seed", "9"])
            .status
            .success()
    );
    let other = SolutionFile::from_json(&std::fs::read_to_string(c.join("solution.json")).unwrap())
        .unwrap();
    assert_eq!(other.config.master_seed, 9);
}

#[test]
fn example_two_lands_near_eleven_percent() {
    let dir = tempfile::tempdir().unwrap();
    let out = sbomm(&[
        "run",
        "--config",
        s(&example("example2.json")),
        "--out",
        s(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let sol = SolutionFile::from_json(
        &std::fs::read_to_string(dir.path().join("solution.json")).unwrap(),
    )
    .unwrap();
    let f = class1_fraction(&sol);
    assert!((f - 0.11).abs() <= 0.03, "{f}");
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(example("example1.json")).unwrap();
    let cases = [
        text.replace("\"v\": 1.0", "\"v\": 0.0"),
        text.replace("\"r\": 1.0", "\"r\": 1.0, \"extra\": 1"),
        text.replace("ex1_taylor", "no_such_model"),
        text.replace("\"lower\": [-2.0, -2.0]", "\"lower\": [-1.0, -2.0]"),
        "{ not json".to_string(),
    ];
    for (i, body) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&path, body).unwrap();
        let out = sbomm(&["run", "--config", s(&path), "--out", s(dir.path())]);
        assert_eq!(out.status.code(), Some(2), "case {i}");
        assert!(!out.stderr.is_empty());
    }
    let missing = sbomm(&["run", "--config", "/no/such/file.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

fn read_sweep(path: &Path) -> Vec<[f64; 4]> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "param,p_correct,p_incorrect,p_inconsistent"
    );
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3]]
        })
        .collect()
}

#[test]
fn sweep_writes_figure_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.csv");
    let scenario = example("scenario1.json");
    let status = sbomm(&[
        "sweep",
        "--config",
        s(&scenario),
        "--axis",
        "v",
        "--fixed",
        "0.01",
        "--out",
        s(&out),
    ]);
    assert!(status.status.success());
    let rows = read_sweep(&out);
    assert_eq!(rows.len(), 300);
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][1]);
    }
    assert!(rows.iter().filter(|r| r[0] >= 2.0).all(|r| r[1] == 0.0));

    let one = dir.path().join("one.csv");
    let scenario2 = example("scenario2.json");
    let status = sbomm(&[
        "sweep",
        "--config",
        s(&scenario2),
        "--axis",
        "r",
        "--fixed",
        "0.01",
        "--values",
        "0.7",
        "--out",
        s(&one),
    ]);
    assert!(status.status.success());
    let row = read_sweep(&one)[0];
    let file: ScenarioFile =
        serde_json::from_str(&std::fs::read_to_string(&scenario2).unwrap()).unwrap();
    let direct = outcome_probabilities(
        &file.to_scenario::<f64>().unwrap(),
        &ConsistencyParams::new(0.01, 0.7),
    )
    .unwrap();
    assert_eq!(
        row,
        [
            0.7,
            direct.p_correct,
            direct.p_incorrect,
            direct.p_inconsistent
        ]
    );

    let bad = sbomm(&[
        "sweep",
        "--config",
        s(&scenario),
        "--axis",
        "r",
        "--fixed",
        "0.01",
        "--values",
        "0.5,3.5",
        "--out",
        s(&one),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn cases_lists_every_labeling() {
    let out = sbomm(&[
        "cases",
        "--config",
        s(&example("scenario1.json")),
        "--v",
        "1.9",
        "--r",
        "0.01",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "case,labels,probability,c1,c2,c3,verdict");
    assert_eq!(lines.len(), 28);
    let consistent: Vec<&&str> = lines[1..]
        .iter()
        .filter(|l| l.ends_with("consistent:1"))
        .collect();
    assert_eq!(consistent.len(), 1);
    assert!(consistent[0].starts_with("1,1-1-1,"));
    let total: f64 = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn oracle_and_validate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(sbomm(&[
        "run",
        "--config",
        s(&example("example1.json")),
        "--out",
        s(&run)
    ])
    .status
    .success());
    let mut rasters = Vec::new();
    for m in ["ex1_rosenbrock", "ex1_absquad", "ex1_taylor"] {
        let path = dir.path().join(format!("{m}.csv"));
        assert!(sbomm(&[
            "oracle",
            "--model",
            m,
            "--resolution",
            "512",
            "--out",
            s(&path)
        ])
        .status
        .success());
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x1,x2,value,member");
        let flags: Vec<bool> = lines.map(|l| l.ends_with(",1")).collect();
        assert_eq!(flags.len(), 512 * 512);
        let frac = flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64;
        assert!((frac - 0.20).abs() <= 0.02, "{m}: {frac}");
        rasters.push(path);
    }

    let solution = run.join("solution.json");
    let mut args = vec!["validate", "--solution", s(&solution)];
    for r in &rasters {
        args.extend(["--oracle", s(r)]);
    }
    let out = sbomm(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let frac = report["per_verdict"]["consistent:1"]["fraction"]
        .as_f64()
        .unwrap();
    assert!(frac >= 0.80, "{frac}");

    let other = dir.path().join("ex2.csv");
    assert!(sbomm(&[
        "oracle",
        "--model",
        "ex2_absval",
        "--resolution",
        "64",
        "--out",
        s(&other)
    ])
    .status
    .success());
    let mismatched = sbomm(&[
        "validate",
        "--solution",
        s(&solution),
        "--oracle",
        s(&other),
        "--oracle",
        s(&other),
        "--oracle",
        s(&other),
    ]);
    assert_eq!(mismatched.status.code(), Some(2));

    let coarse = sbomm(&[
        "oracle",
        "--model",
        "ex1_taylor",
        "--resolution",
        "63",
        "--out",
        s(&other),
    ]);
    assert_eq!(coarse.status.code(), Some(2));
    let unknown = sbomm(&["oracle", "--model", "nope", "--out", s(&other)]);
    assert_eq!(unknown.status.code(), Some(2));
}
