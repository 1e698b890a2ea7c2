use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use refergate::cli::{run, AurcTable, ComparisonReport, EvaluateHistograms, EvaluateSummary};
use refergate::metrics::CalibrationReport;
use refergate::predstore::{load_predictions, Format};
use refergate::referral::ReferralCurve;
use refergate::simlab::ExperimentSummary;

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_refergate"))
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn refergate(args: &[&str]) -> i32 {
    run(std::iter::once("refergate").chain(args.iter().copied()))
}

/// 40 records over both domains with 4 MC samples each.
fn write_predictions(dir: &Path) -> PathBuf {
    let mut csv = String::from("id,domain,label,score,mc_0,mc_1,mc_2,mc_3\n");
    for i in 0..40 {
        let label = i % 2;
        let domain = if i < 20 { "ID" } else { "OOD" };
        let base = if label == 1 { 0.55 + 0.01 * i as f64 } else { 0.45 - 0.01 * i as f64 };
        let score = if i % 7 == 0 { 1.0 - base } else { base };
        let mc: Vec<String> = (0..4)
            .map(|k| format!("{}", (score + 0.02 * (k as f64 - 1.5)).clamp(0.0, 1.0)))
            .collect();
        csv.push_str(&format!("r{i:02},{domain},{label},{score},{}\n", mc.join(",")));
    }
    let path = dir.join("preds.csv");
    fs::write(&path, csv).unwrap();
    path
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(refergate(&["--help"]), 0);
    assert_eq!(refergate(&["bogus"]), 2);
    assert_eq!(refergate(&["evaluate"]), 2);
}

#[test]
fn evaluate_happy_path_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_predictions(tmp.path());
    let out = tmp.path().join("eval");
    assert_eq!(refergate(&["evaluate", "--input", &s(&input), "--out", &s(&out)]), 0);
    for f in [
        "curve_auroc.csv",
        "curve_acc.csv",
        "curve_split_auroc.csv",
        "curve_split_acc.csv",
        "aurc.csv",
        "calibration.json",
        "histograms.json",
        "summary.json",
        "summary.txt",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }

    // Every artifact loads back through its schema.
    let summary: EvaluateSummary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.n_records, 40);
    assert_eq!(summary.mc_samples, Some(4));
    assert_eq!(summary.config.bins, 15);
    assert_eq!(summary.config.grid_max, 95);
    assert_eq!(summary.version, env!("CARGO_PKG_VERSION"));
    let scopes: Vec<&str> = summary.aurc.iter().map(|r| r.scope.as_str()).collect();
    assert!(scopes.contains(&"all") && scopes.contains(&"ID") && scopes.contains(&"OOD"));

    let cal: CalibrationReport = serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert_eq!(cal.ece, summary.calibration.ece);
    let hist: EvaluateHistograms = serde_json::from_str(&fs::read_to_string(out.join("histograms.json")).unwrap()).unwrap();
    assert!(hist.id.is_some() && hist.ood.is_some());

    let curve = ReferralCurve::read_csv(fs::File::open(out.join("curve_acc.csv")).unwrap()).unwrap();
    assert_eq!(curve.len(), 96);
    let all_acc = summary
        .aurc
        .iter()
        .find(|r| r.scope == "all" && r.metric.to_string() == "acc" && r.policy.as_str() == "standard")
        .unwrap();
    let defined: Vec<f64> = curve.iter().filter_map(|c| c.1).collect();
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    assert!((mean - all_acc.aurc.unwrap()).abs() < 1e-12);
}

#[test]
fn policy_and_mode_flags_route_to_split_total_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_predictions(tmp.path());
    let out = tmp.path().join("eval");
    let code = refergate(&[
        "evaluate",
        "--input",
        &s(&input),
        "--policy",
        "split",
        "--uncertainty-mode",
        "total",
        "--metrics",
        "bacc,f1",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, 0);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("curve"))
        .collect();
    names.sort();
    assert_eq!(names, ["curve_split_bacc.csv", "curve_split_f1.csv"]);
    let summary: EvaluateSummary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.config.uncertainty_mode.as_str(), "total");
}

#[test]
fn malformed_file_exits_2_naming_the_row_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("bad.csv");
    fs::write(&input, "id,domain,label,score\na,ID,0,0.2\nb,ID,1,1.2\n").unwrap();
    let out = tmp.path().join("eval");
    let res = bin()
        .args(["evaluate", "--input", &s(&input), "--out", &s(&out)])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("row 2"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn missing_input_and_bad_flags_are_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(&tmp.path().join("o"));
    assert_eq!(refergate(&["evaluate", "--input", "/nonexistent/p.csv", "--out", &out]), 2);
    let input = write_predictions(tmp.path());
    assert_eq!(refergate(&["evaluate", "--input", &s(&input), "--metrics", "nope", "--out", &out]), 2);
    assert_eq!(refergate(&["evaluate", "--input", &s(&input), "--threshold", "1.5", "--out", &out]), 2);
    assert_eq!(refergate(&["evaluate", "--input", &s(&input), "--format", "xml", "--out", &out]), 2);

    let res = bin()
        .args(["evaluate", "--input", &s(&input), "--out", &out])
        .env("REFERGATE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn json_input_matches_csv_input() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_predictions(tmp.path());
    let set = load_predictions(&input, Format::Csv).unwrap();
    let json = tmp.path().join("preds.json");
    set.write_json(fs::File::create(&json).unwrap()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(refergate(&["evaluate", "--input", &s(&input), "--out", &s(&a)]), 0);
    assert_eq!(refergate(&["evaluate", "--input", &s(&json), "--out", &s(&b)]), 0);
    for f in ["curve_auroc.csv", "aurc.csv", "calibration.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

fn write_table(path: &Path, rows: &[(u64, &str, f64)]) {
    let mut csv = String::from("seed,metric,aurc\n");
    for (seed, m, v) in rows {
        csv.push_str(&format!("{seed},{m},{v}\n"));
    }
    fs::write(path, csv).unwrap();
}

fn read_report(dir: &Path) -> ComparisonReport {
    serde_json::from_str(&fs::read_to_string(dir.join("comparison.json")).unwrap()).unwrap()
}

#[test]
fn compare_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let rows: Vec<(u64, &str, f64)> = (0..6)
        .flat_map(|i| [(i, "acc", 0.8 + 0.01 * i as f64), (i, "auroc", 0.9 - 0.005 * i as f64)])
        .collect();
    write_table(&a, &rows);

    // Identical sets: t = 0, p = 1.
    let out = tmp.path().join("same");
    assert_eq!(refergate(&["compare", "--input", &s(&a), "--input", &s(&a), "--out", &s(&out)]), 0);
    let r = read_report(&out);
    assert_eq!(r.results.len(), 2);
    assert!(r.results.iter().all(|x| x.p == 1.0 && !x.significant));

    // A large constant shift is flagged.
    let b = tmp.path().join("b.csv");
    let shifted: Vec<(u64, &str, f64)> = rows.iter().map(|&(i, m, v)| (i, m, v + 0.1)).collect();
    write_table(&b, &shifted);
    let out = tmp.path().join("shift");
    assert_eq!(refergate(&["compare", "--input", &s(&a), "--input", &s(&b), "--out", &s(&out)]), 0);
    assert!(read_report(&out).results.iter().all(|x| x.p < 0.05 && x.significant));

    // Mismatched metric sets.
    let c = tmp.path().join("c.csv");
    write_table(&c, &rows.iter().filter(|r| r.1 == "acc").copied().collect::<Vec<_>>());
    let out = tmp.path().join("mismatch");
    assert_eq!(refergate(&["compare", "--input", &s(&a), "--input", &s(&c), "--out", &s(&out)]), 2);
    assert!(!out.exists());

    // One seed per side.
    let d = tmp.path().join("d.csv");
    write_table(&d, &[(0, "acc", 0.8)]);
    let out = tmp.path().join("single");
    assert_eq!(refergate(&["compare", "--input", &s(&d), "--input", &s(&d), "--out", &s(&out)]), 2);

    // Bad table header.
    fs::write(&d, "seed,aurc\n0,0.8\n").unwrap();
    assert_eq!(refergate(&["compare", "--input", &s(&d), "--input", &s(&a), "--out", &s(&out)]), 2);
}

#[test]
fn compare_trainers_over_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let code = refergate(&[
        "compare", "--trainer", "plain", "--trainer", "dan", "--seeds", "0,1,2", "--metrics", "acc", "--out",
        &s(&out),
    ]);
    assert_eq!(code, 0);
    let r = read_report(&out);
    let keys: Vec<&str> = r.results.iter().map(|x| x.metric.as_str()).collect();
    assert_eq!(keys, ["id_split_acc", "id_standard_acc", "ood_split_acc", "ood_standard_acc"]);
    let ood = r.results.iter().find(|x| x.metric == "ood_standard_acc").unwrap();
    assert!(ood.mean_a < ood.mean_b);
    assert_eq!((ood.n_a, ood.n_b), (3, 3));
    let table = AurcTable::read_csv(&out.join("aurc_plain.csv")).unwrap();
    assert_eq!(table.values["ood_standard_acc"].len(), 3);

    assert_eq!(
        refergate(&["compare", "--trainer", "plain", "--trainer", "dan", "--seeds", "4", "--out", &s(&out)]),
        2
    );
}

#[test]
fn simulate_dan_reports_suppression_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(refergate(&["simulate", "--trainer", "dan", "--seed", "3", "--out", &s(out)]), 0);
    }
    let summary: ExperimentSummary = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary.feature2_suppression_ratio < 0.1);
    for e in fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    let preds = load_predictions(a.join("predictions_id.csv"), Format::Csv).unwrap();
    assert_eq!(preds.len(), 2000);
}
