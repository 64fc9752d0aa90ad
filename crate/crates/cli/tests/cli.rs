//! End-to-end tests driving the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_clickworth")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Byte contents of every file in the directory, keyed by name.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_writes_expected_files_and_row_counts() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        tmp.path(),
        &["synth", "--m", "20", "--n", "5", "--rank", "2", "--rho", "0.5", "--exposures", "40", "--seed", "1", "-o", "out"],
    );
    let out = tmp.path().join("out");
    for f in ["clicks.csv", "truth_means.csv", "truth_bots.csv", "run.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    // every clicks.csv data row is one exposure of an observed cell
    let clicks = fs::read_to_string(out.join("clicks.csv")).unwrap();
    let data_rows = clicks.lines().count() - 1;
    assert!(data_rows > 0);
    assert_eq!(data_rows % 40, 0, "exposures come in blocks of 40 per cell");
    // truth sidecars cover every user row
    let bots = fs::read_to_string(out.join("truth_bots.csv")).unwrap();
    assert_eq!(bots.lines().count(), 21);
    let means = fs::read_to_string(out.join("truth_means.csv")).unwrap();
    assert_eq!(means.lines().count(), 21);
}

#[test]
fn synth_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let flags = ["synth", "--m", "15", "--n", "4", "--rho", "0.6", "--exposures", "30", "--seed", "9"];
    run_ok(tmp.path(), &[&flags[..], &["-o", "a"]].concat());
    run_ok(tmp.path(), &[&flags[..], &["-o", "b"]].concat());
    assert_eq!(dir_contents(&tmp.path().join("a")), dir_contents(&tmp.path().join("b")));
}

#[test]
fn bot_fraction_labels_expected_share_of_rows() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        tmp.path(),
        &["synth", "--m", "50", "--n", "5", "--rho", "0.8", "--exposures", "30", "--bot-fraction", "0.1", "--seed", "2", "-o", "out"],
    );
    let bots = fs::read_to_string(tmp.path().join("out/truth_bots.csv")).unwrap();
    let flagged = bots.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("1")).count();
    assert_eq!(flagged, 5);
}

#[test]
fn estimate_matches_committed_golden_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny_clicks.csv");
    run_ok(
        tmp.path(),
        &[
            "estimate",
            "--input",
            fixture.to_str().unwrap(),
            "--algo",
            "svt",
            "--rank",
            "2",
            "--seed",
            "11",
            "-o",
            "out",
        ],
    );
    let got = fs::read_to_string(tmp.path().join("out/metrics.json")).unwrap();
    let golden = fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_svt_metrics.json"),
    )
    .unwrap();
    assert_eq!(got, golden);
    assert!(tmp.path().join("out/estimate.csv").exists());
    assert!(tmp.path().join("out/estimate_meta.json").exists());
}

#[test]
fn missing_input_exits_3_without_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["estimate", "--input", "nope.csv", "-o", "out"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn bad_flag_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["estimate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_data_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    // >1% malformed rows aborts ingestion as a data-validation failure
    fs::write(
        tmp.path().join("bad.csv"),
        "user_group,ad_category,intent,clicked\nu1,c1,,1\nu2,c1,,not-a-bool\n",
    )
    .unwrap();
    let out = run(tmp.path(), &["estimate", "--input", "bad.csv", "-o", "out"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn filter_verdict_matches_library_call() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("rules.txt"), "||doubleclick.net^\n@@||good.doubleclick.net^\n").unwrap();
    let url = "https://stats.doubleclick.net/pixel";
    run_ok(
        tmp.path(),
        &["filter", "--rules", "rules.txt", "--url", url, "--page-host", "news.example.org", "-o", "out"],
    );
    let got: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/verdict.json")).unwrap())
            .unwrap();
    let (rules, _) = clickworth::adfilter::parse_rules(
        "||doubleclick.net^\n@@||good.doubleclick.net^\n",
    );
    let direct =
        clickworth::adfilter::classify_url("news.example.org", url, &rules, &[]).unwrap();
    assert_eq!(got["is_ad"], direct.is_ad);
    assert_eq!(got["level1"], direct.level1);
    assert_eq!(got["rules_parsed"], 2);
}

#[test]
fn sweep_has_one_row_per_algorithm_and_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        tmp.path(),
        &["synth", "--m", "30", "--n", "6", "--rho", "0.8", "--exposures", "60", "--seed", "3", "-o", "data"],
    );
    run_ok(
        tmp.path(),
        &["sweep", "--input", "data/clicks.csv", "--vary", "fill", "--grid", "0.2,0.4,0.6", "--seed", "3", "-o", "out"],
    );
    let sweep = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 3 * 2, "header + grid × {{SVT, ALS}}");
    assert!(tmp.path().join("out/sweep_timings.csv").exists());
}

#[test]
fn market_ledger_and_audit_have_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.json"),
        r#"{"advertiser_id":"adv","prices":{"cat_a":[[0.0,0.0],[1.0,1.0]]}}"#,
    )
    .unwrap();
    fs::write(
        tmp.path().join("pairs.csv"),
        "user_group,cat_a,cat_b\nu0,0.25,0.5\nu1,0.75,0.1\n",
    )
    .unwrap();
    run_ok(
        tmp.path(),
        &["market", "--contracts", "c.json", "--vod-pairs", "pairs.csv", "--pages", "7", "--user-row", "1", "--seed", "5", "-o", "out"],
    );
    let payments = fs::read_to_string(tmp.path().join("out/payments.csv")).unwrap();
    assert_eq!(payments.lines().count(), 8, "header + one advertiser × 7 pages");
    for line in payments.lines().skip(1) {
        assert!((line.split(',').last().unwrap().parse::<f64>().unwrap() - 0.75).abs() < 1e-12);
    }
    let history = fs::read_to_string(tmp.path().join("out/id_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 9, "header + initial token + 7 rotations");
}

#[test]
fn every_subcommand_is_deterministic_including_threads_4() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        tmp.path(),
        &["synth", "--m", "25", "--n", "6", "--rho", "0.7", "--exposures", "50", "--seed", "4", "-o", "data"],
    );
    fs::write(
        tmp.path().join("c.json"),
        r#"{"advertiser_id":"adv","prices":{"c00000":[[0.0,0.0],[1.0,1.0]]}}"#,
    )
    .unwrap();
    fs::write(tmp.path().join("rules.txt"), "||doubleclick.net^\n").unwrap();

    let runs: Vec<Vec<&str>> = vec![
        vec!["synth", "--m", "25", "--n", "6", "--rho", "0.7", "--exposures", "50", "--seed", "4"],
        vec!["estimate", "--input", "data/clicks.csv", "--algo", "als", "--seed", "4"],
        vec!["vod", "--input", "data/clicks.csv", "--seed", "4"],
        vec!["sweep", "--input", "data/clicks.csv", "--vary", "holdout", "--grid", "0.2,0.4", "--seed", "4"],
        vec!["filter", "--rules", "rules.txt", "--url", "https://x.doubleclick.net/a", "--page-host", "a.com", "--seed", "4"],
    ];
    for (idx, base) in runs.iter().enumerate() {
        let a = format!("a{idx}");
        let b = format!("b{idx}");
        run_ok(tmp.path(), &[&base[..], &["--threads", "1", "-o", &a]].concat());
        run_ok(tmp.path(), &[&base[..], &["--threads", "4", "-o", &b]].concat());
        let mut fa = dir_contents(&tmp.path().join(&a));
        let mut fb = dir_contents(&tmp.path().join(&b));
        // run.json echoes the thread cap; everything else must agree bytewise
        fa.retain(|(name, _)| name != "run.json" && name != "sweep_timings.csv");
        fb.retain(|(name, _)| name != "run.json" && name != "sweep_timings.csv");
        assert_eq!(fa, fb, "subcommand {:?}", base[0]);
    }
    // market needs the vod output from above
    run_ok(
        tmp.path(),
        &["market", "--contracts", "c.json", "--vod-pairs", "a2/vod_pairs.csv", "--pages", "5", "--seed", "4", "--threads", "1", "-o", "ma"],
    );
    run_ok(
        tmp.path(),
        &["market", "--contracts", "c.json", "--vod-pairs", "a2/vod_pairs.csv", "--pages", "5", "--seed", "4", "--threads", "4", "-o", "mb"],
    );
    let strip = |d: &str| {
        let mut f = dir_contents(&tmp.path().join(d));
        f.retain(|(name, _)| name != "run.json");
        f
    };
    assert_eq!(strip("ma"), strip("mb"));
}

#[test]
fn run_json_echoes_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        tmp.path(),
        &["synth", "--m", "10", "--n", "4", "--seed", "8", "-o", "out"],
    );
    let run_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/run.json")).unwrap())
            .unwrap();
    assert_eq!(run_json["subcommand"], "synth");
    assert_eq!(run_json["seed"], 8);
    assert_eq!(run_json["args"]["m"], 10);
    assert_eq!(run_json["args"]["rho"], 0.4, "default echoed after resolution");
}
