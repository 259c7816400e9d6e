//! End-to-end runs of the command surface, in process: export a synthetic
//! study to CSV, evaluate it, re-plot the saved report, and smoke-run the
//! simulator.

use std::path::Path;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use steam_eval::cli::{try_run, Cli};
use steam_eval::data_model::save_study_csv;
use steam_eval::report::read_report_json;
use steam_eval::sim::{generate_dataset, SimScenario};

fn run(args: &[&str]) -> anyhow::Result<()> {
    try_run(Cli::try_parse_from(args).expect("flags parse"))
}

fn export_study(dir: &Path, seed: u64) -> std::path::PathBuf {
    let scenario = SimScenario {
        n: 150,
        big_n: 700,
        n_t: 700,
        n_target_labeled: 60,
        seed,
        ..SimScenario::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let generated = generate_dataset(&scenario, &mut rng).unwrap();
    let path = dir.join("study.csv");
    save_study_csv(&generated.data, &path).unwrap();
    path
}

#[test]
fn evaluate_writes_all_artifacts_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let input = export_study(dir.path(), 31);
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    for out in [&out1, &out2] {
        run(&[
            "steam-eval",
            "evaluate",
            "--input",
            input.to_str().unwrap(),
            "--folds",
            "2",
            "--perturb",
            "approx",
            "--draws",
            "120",
            "--seed",
            "7",
            "--svg",
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
    }
    for name in ["report.json", "roc.csv", "roc.svg"] {
        assert!(out1.join(name).is_file(), "{name} missing");
    }
    let b1 = std::fs::read(out1.join("report.json")).unwrap();
    let b2 = std::fs::read(out2.join("report.json")).unwrap();
    assert_eq!(b1, b2, "same seed must reproduce identical bytes");
    assert_eq!(
        std::fs::read(out1.join("roc.csv")).unwrap(),
        std::fs::read(out2.join("roc.csv")).unwrap()
    );

    let artifact = read_report_json(&out1.join("report.json")).unwrap();
    assert_eq!(artifact.config.seed, 7);
    assert_eq!(artifact.methods.len(), 5);
    let steam = artifact
        .method(steam_eval::accuracy::Method::Steam)
        .unwrap();
    let inf = steam.inference.as_ref().unwrap();
    assert_eq!(inf.draws_requested, 120);
    assert!(inf.scalars[0].se > 0.0);

    let svg = std::fs::read_to_string(out1.join("roc.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

#[test]
fn evaluate_filters_methods_and_plots_saved_reports() {
    let dir = tempfile::tempdir().unwrap();
    let input = export_study(dir.path(), 32);
    let out = dir.path().join("filtered");
    run(&[
        "steam-eval",
        "evaluate",
        "--input",
        input.to_str().unwrap(),
        "--methods",
        "source,weighted,steam",
        "--folds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let artifact = read_report_json(&out.join("report.json")).unwrap();
    let names: Vec<&str> = artifact.methods.iter().map(|b| b.method.name()).collect();
    assert_eq!(names, ["source", "weighted", "steam"]);
    assert!(artifact
        .methods
        .iter()
        .all(|b| b.inference.is_none()));

    let svg_path = dir.path().join("overlay.svg");
    run(&[
        "steam-eval",
        "roc-plot",
        "--input",
        out.join("report.json").to_str().unwrap(),
        "--out",
        svg_path.to_str().unwrap(),
    ])
    .unwrap();
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert!(doc.root_element().attribute("viewBox").is_some());
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn evaluate_fails_cleanly_on_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(&[
        "steam-eval",
        "evaluate",
        "--input",
        dir.path().join("absent.csv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .unwrap_err();
    assert!(format!("{err:#}").contains("absent.csv"));
}

#[test]
fn simulate_smoke_run_emits_well_formed_tables() {
    let dir = tempfile::tempdir().unwrap();
    run(&[
        "steam-eval",
        "simulate",
        "--replicates",
        "2",
        "--n",
        "120",
        "--big-n",
        "600",
        "--n-t",
        "600",
        "--validation-labels",
        "40",
        "--oracle-draws",
        "2000",
        "--folds",
        "2",
        "--labels-grid",
        "20,40",
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary_both_correct.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("# scenario: both_correct"));
    assert_eq!(
        lines.next().unwrap(),
        "measure,method,bias,se,rmse,n_fail"
    );
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 6, "{line}");
        cells[2].parse::<f64>().unwrap();
        rows += 1;
    }
    assert!(rows >= 6 * 5, "expected every measure × method, got {rows}");

    let curve = std::fs::read_to_string(dir.path().join("label_curve_both_correct.csv")).unwrap();
    assert!(curve.lines().nth(1).unwrap().starts_with("size,measure,rmse,n_fail"));
    let eq = std::fs::read_to_string(dir.path().join("equivalent_labels_both_correct.csv")).unwrap();
    assert!(eq.lines().nth(1).unwrap().starts_with("measure,method,labels,at_boundary"));
}
