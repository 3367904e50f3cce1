use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = ["--n-players", "3000", "--matches-per-day", "300", "--days", "4"];

fn toxwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toxwatch"))
        .args(args)
        .env_remove("TOXWATCH_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = toxwatch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

#[test]
fn generate_writes_manifest_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&with_small(&["generate", "--out-dir", path(&a)]));
    ok(&with_small(&["generate", "--out-dir", path(&b)]));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    for key in ["config_hash = ", "seed = ", "rows = 14400", "toxic_count = "] {
        assert!(manifest.contains(key), "{manifest}");
    }
    assert_eq!(
        fs::read(a.join("observations.csv")).unwrap(),
        fs::read(b.join("observations.csv")).unwrap()
    );
    assert_eq!(manifest, fs::read_to_string(b.join("manifest.txt")).unwrap());
}

#[test]
fn undersized_population_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = toxwatch(&["generate", "--n-players", "5", "--out-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn monitor_everything_detects_everything() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["run", "--policy", "all", "--out-dir", path(dir.path()), "--seed", "3"]));
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let row = results.lines().nth(1).unwrap();
    assert!(row.starts_with("all,1.000000,NA,1.000000,1.000000,3,"), "{row}");
}

#[test]
fn linucb_checkpoints_every_day_and_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&with_small(&["generate", "--out-dir", path(&gen), "--sigma-u", "1.0"]));
    let stream = gen.join("observations.csv");
    let full = dir.path().join("full");
    let base = ["run", "--policy", "linucb", "--cost", "0.01", "--stream", path(&stream)];
    let mut args = base.to_vec();
    args.extend(["--out-dir", path(&full)]);
    ok(&args);
    let days: Vec<_> = fs::read_dir(full.join("checkpoints")).unwrap().collect();
    assert_eq!(days.len(), 4);
    assert!(full.join("checkpoints/day-0002/model.txt").exists());

    let part = dir.path().join("part");
    let mut args = base.to_vec();
    args.extend(["--out-dir", path(&part), "--stop-after", "2"]);
    ok(&args);
    assert!(!part.join("results.csv").exists());
    let resume = part.join("checkpoints/day-0001");
    let mut args = base.to_vec();
    args.extend(["--out-dir", path(&part), "--resume", path(&resume)]);
    ok(&args);
    for f in ["results.csv", "model.txt", "episode.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(part.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generated_and_streamed_runs_agree_for_etc() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&with_small(&["generate", "--out-dir", path(&gen)]));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let etc = ["run", "--policy", "prob_etc", "--epsilon", "0.2", "--policy-seed", "4"];
    let mut args = with_small(&etc);
    args.extend(["--out-dir", path(&a)]);
    ok(&args);
    let stream = gen.join("observations.csv");
    let mut args = etc.to_vec();
    args.extend(["--stream", path(&stream), "--out-dir", path(&b)]);
    ok(&args);
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
    assert_eq!(fs::read(a.join("ledger.csv")).unwrap(), fs::read(b.join("ledger.csv")).unwrap());
}

#[test]
fn schema_errors_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    let header = "day,match_id,player_id,skill_level,avg_skill_diff_opponents,avg_skill_diff_teammates,\
                  has_party_teammates,prop_party_teammates,matches_in_session,reports_against_24h,reports_by_24h,toxic";
    fs::write(&csv, format!("{header}\n0,0,1,10,5,5,0,0,1,0,0,0\n0,0,2,10,5,5,0,0,1,0,0,maybe\n")).unwrap();
    let out = toxwatch(&[
        "run",
        "--policy",
        "all",
        "--stream",
        path(&csv),
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3") && err.contains("toxic"), "{err}");
}

#[test]
fn unlabeled_stream_cannot_be_evaluated() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["generate", "--no-labels", "--out-dir", path(dir.path())]));
    let stream = dir.path().join("observations.csv");
    let out = toxwatch(&["run", "--policy", "all", "--stream", path(&stream), "--out-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = toxwatch(&[
        "run",
        "--policy",
        "all",
        "--stream",
        "/nonexistent/stream.csv",
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_policy_parameter_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = toxwatch(&with_small(&["run", "--policy", "linucb", "--out-dir", path(dir.path())]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--cost"));
}

#[test]
fn empty_policy_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = toxwatch(&with_small(&["sweep", "--policies", "", "--out-dir", path(dir.path())]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_share_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    // A fresh LinUCB monitors all of day 0, a quarter of this stream.
    let out = toxwatch(&with_small(&[
        "sweep",
        "--policies",
        "linucb",
        "--targets",
        "0.05",
        "--seeds",
        "1",
        "--out-dir",
        path(dir.path()),
    ]));
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = Command::new(env!("CARGO_BIN_EXE_toxwatch"))
        .args(with_small(&[
            "sweep",
            "--targets",
            "0.4,0.6",
            "--seeds",
            "1,2",
            "--tolerance",
            "0.01",
        ]))
        .env("TOXWATCH_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 2);
    let curve = fs::read_to_string(out_dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4);
    let improvement = fs::read_to_string(out_dir.join("improvement.csv")).unwrap();
    assert!(improvement.lines().nth(1).unwrap().starts_with("0.400000,"));
    assert!(improvement.contains(",22.84,39.71"), "{improvement}");
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("param.linucb.0.4 = "), "{manifest}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("published pp"));
}

#[test]
fn report_reproduces_published_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.csv");
    let mut text = String::from("policy,param,target_share,realized_share,detection_rate,seed,sigma_u\n");
    for (share, etc, lin) in toxwatch::harness::REFERENCE_TABLE {
        text += &format!("linucb,0,{share},{share},{lin},0,NA\nprob_etc,0,{share},{share},{etc},0,NA\n");
    }
    fs::write(&results, text).unwrap();
    ok(&["report", "--results", path(&results), "--out-dir", path(dir.path())]);
    let table = fs::read_to_string(dir.path().join("improvement.csv")).unwrap();
    let pp: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    let pct: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(pp, ["10.06", "18.66", "24.56", "22.84", "18.92", "15.14", "11.07", "7.27", "3.87"]);
    assert_eq!(pct, ["45.81", "51.35", "51.50", "39.71", "28.65", "20.51", "13.65", "8.28", "4.11"]);
}
