use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn segbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segbench"))
        .args(args)
        .env_remove("SEGBENCH_JOBS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, jobs: &str) {
    let out = segbench(&[
        "synth",
        "--out-dir",
        s(dir),
        "--count",
        &count.to_string(),
        "--dims",
        "136x120x64",
        "--seed",
        "5",
        "--jobs",
        jobs,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let before = files(dir.path());
    for args in [
        vec![],
        vec!["evaluate"],
        vec!["rank"],
        vec!["quality"],
        vec!["preprocess"],
        vec!["postprocess"],
        vec!["pipeline"],
        vec!["experiment"],
        vec!["experiment", "offset"],
        vec!["synth"],
    ] {
        let out = segbench(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    assert_eq!(files(dir.path()), before);
    assert_eq!(segbench(&["--help"]).status.code(), Some(0));
    assert_eq!(segbench(&["synth", "--help"]).status.code(), Some(0));
    assert_eq!(segbench(&["--version"]).status.code(), Some(0));
    let missing = dir.path().join("nope");
    let out = segbench(&["evaluate", "--pred", s(&missing), "--truth", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_rejects_unknown_keys_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n[synth]\ncuont = 3\n").unwrap();
    let target = dir.path().join("out");
    let out = segbench(&["synth", "--config", s(&cfg), "--out-dir", s(&target)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!target.exists());
}

#[test]
fn config_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 5\nformat = \"json\"\n[synth]\ncount = 2\ndims = [136, 120, 64]\n",
    )
    .unwrap();
    let target = dir.path().join("out");
    let out = segbench(&["synth", "--config", s(&cfg), "--out-dir", s(&target)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(target.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 2);
}

#[test]
fn self_evaluation_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3, "2");
    let out_csv = dir.path().join("m.csv");
    let out = segbench(&[
        "evaluate",
        "--pred",
        s(dir.path()),
        "--truth",
        s(dir.path()),
        "--out",
        s(&out_csv),
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&out_csv);
    assert_eq!(rows[0][..3], ["case_id", "dice", "iou"]);
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert_eq!(r[1], "1");
        assert_eq!(r[5], "0");
    }
}

#[test]
fn corrupt_prediction_is_skipped_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth");
    let pred = dir.path().join("pred");
    synth(&truth, 10, "4");
    fs::create_dir(&pred).unwrap();
    for i in 1..=10 {
        let name = format!("case_{i:03}_label.nrrd");
        fs::copy(truth.join(&name), pred.join(format!("case_{i:03}.nrrd"))).unwrap();
    }
    let bad = pred.join("case_007.nrrd");
    let bytes = fs::read(&bad).unwrap();
    fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let out_csv = dir.path().join("m.csv");
    let out = segbench(&[
        "evaluate",
        "--pred",
        s(&pred),
        "--truth",
        s(&truth),
        "--out",
        s(&out_csv),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case_007"));
    let rows = csv_rows(&out_csv);
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[0] != "case_007"));

    fs::remove_file(pred.join("case_003.nrrd")).unwrap();
    fs::copy(truth.join("case_007_label.nrrd"), &bad).unwrap();
    let out = segbench(&[
        "evaluate",
        "--pred",
        s(&pred),
        "--truth",
        s(&truth),
        "--out",
        s(&out_csv),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unpaired case case_003"));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth(&a, 6, "1");
    synth(&b, 6, "8");
    assert_eq!(files(&a), files(&b));
    let pred = dir.path().join("pred");
    let run = segbench(&[
        "pipeline",
        "--data",
        s(&a),
        "--out-dir",
        s(&pred),
        "--out",
        s(&dir.path().join("p.csv")),
        "--jobs",
        "3",
    ]);
    assert!(run.status.success());
    let mut outputs = Vec::new();
    for (jobs, name) in [("1", "e1.json"), ("8", "e8.json")] {
        let out_path = dir.path().join(name);
        let out = segbench(&[
            "evaluate",
            "--pred",
            s(&pred),
            "--truth",
            s(&a),
            "--out",
            s(&out_path),
            "--jobs",
            jobs,
            "--format",
            "json",
        ]);
        assert!(out.status.success());
        outputs.push(fs::read(out_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

fn write_team(path: &Path, dices: &[f64]) {
    let mut text =
        String::from("case_id,dice,iou,sensitivity,specificity,hd_mm,stsd_mm,diameter_err_pct,volume_err_pct\n");
    for (i, d) in dices.iter().enumerate() {
        text += &format!(
            "c{i},{d},{},{d},0.999,{},{},1,2\n",
            d / (2.0 - d),
            10.0 * (1.0 - d),
            1.0 - d
        );
    }
    fs::write(path, text).unwrap();
}

#[test]
fn rank_orders_teams_and_splits_groups() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (team, dices) in [
        ("low", [0.80, 0.82, 0.81]),
        ("high", [0.93, 0.92, 0.94]),
        ("mid", [0.90, 0.89, 0.91]),
        ("midb", [0.88, 0.90, 0.89]),
    ] {
        let p = dir.path().join(format!("{team}.csv"));
        write_team(&p, &dices);
        paths.push(p);
    }
    let attrs = dir.path().join("attrs.csv");
    fs::write(
        &attrs,
        "team,cnn_count\nlow,single\nhigh,double\nmid,double\nmidb,single\n",
    )
    .unwrap();
    let quality = dir.path().join("q.csv");
    fs::write(
        &quality,
        "scan_id,snr,cr,het,band\nc0,1.5,1,0.1,medium\nc1,2.5,1,0.1,medium\nc2,1.0,1,0.1,medium\n",
    )
    .unwrap();
    let stem = dir.path().join("board");
    let mut args = vec!["rank", "--metrics"];
    args.extend(paths.iter().map(|p| s(p)));
    args.extend(["--attributes", s(&attrs), "--quality", s(&quality), "--out", s(&stem)]);
    let out = segbench(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("board.csv"));
    let order: Vec<_> = rows[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(order, ["high", "mid", "midb", "low"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("board.json")).unwrap()).unwrap();
    assert_eq!(report["group_comparisons"].as_array().unwrap().len(), 1);
    assert_eq!(report["correlations"][0]["n"], 3);

    let solo = dir.path().join("solo");
    assert!(segbench(&["rank", "--metrics", s(&paths[0]), "--out", s(&solo)])
        .status
        .success());
    let rows = csv_rows(&dir.path().join("solo.csv"));
    assert_eq!(
        (rows.len(), rows[1][1].as_str(), rows[1].last().unwrap().as_str()),
        (2, "low", "NA")
    );
}

#[test]
fn postprocess_and_preprocess_identity_runs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1, "1");
    let label = dir.path().join("case_001_label.nrrd");
    let kept = dir.path().join("kept.nrrd");
    let out = segbench(&[
        "postprocess",
        "--input",
        s(&label),
        "--output",
        s(&kept),
        "--op",
        "largest-component",
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read(&kept).unwrap(), fs::read(&label).unwrap());
    let bad = segbench(&[
        "postprocess",
        "--input",
        s(&label),
        "--output",
        s(&kept),
        "--op",
        "blur",
    ]);
    assert_eq!(bad.status.code(), Some(1));

    let scan = dir.path().join("case_001.nrrd");
    let norm = dir.path().join("norm.nrrd");
    let out = segbench(&[
        "preprocess",
        "apply",
        "--input",
        s(&scan),
        "--output",
        s(&norm),
        "--op",
        "normalize",
        "--op",
        "clahe:tiles_x=4,tiles_y=4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let spec = dir.path().join("aug.toml");
    fs::write(&spec, "[[augmentation]]\nkind = \"flip\"\naxis = \"x\"\nseed = 1\n").unwrap();
    let aug = dir.path().join("aug");
    let out = segbench(&[
        "preprocess",
        "augment",
        "--volume",
        s(&scan),
        "--label",
        s(&label),
        "--spec",
        s(&spec),
        "--count",
        "2",
        "--out-dir",
        s(&aug),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files(&aug).len(), 4);
}

#[test]
fn oracle_pipeline_and_sweeps_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2, "2");
    let pred = dir.path().join("pred");
    let summary = dir.path().join("run.csv");
    let out = segbench(&[
        "pipeline",
        "--data",
        s(dir.path()),
        "--out-dir",
        s(&pred),
        "--out",
        s(&summary),
        "--localizer",
        "oracle",
        "--segmenter",
        "oracle",
        "--roi",
        "120x110x60",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(csv_rows(&summary)[1..].iter().all(|r| r[7] == "1"));

    let label: PathBuf = dir.path().join("case_001_label.nrrd");
    let curve = dir.path().join("patch.csv");
    let out = segbench(&[
        "experiment",
        "patch-size",
        "--label",
        s(&label),
        "--sizes",
        "136x120,120x110",
        "--depth",
        "64",
        "--out",
        s(&curve),
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&curve);
    assert_eq!(
        rows[0],
        ["size_x", "size_y", "size_z", "background_pct", "containment_pct"]
    );
    assert_eq!(rows.len(), 3);
}
