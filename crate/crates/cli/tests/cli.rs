use scenario_core::criticality::{CriticalityConfig, MetricKind, PoolEntry};
use scenario_core::evaluation::{write_labels, GroundTruthLabel};
use scenario_core::interval::FrameInterval;
use scenario_core::pipeline::{
    run_pipeline, scenario_id, Manifest, ManifestEntry, PipelineConfig, MANIFEST_VERSION,
};
use scenario_core::search::{ScenarioMatch, TargetWindow};
use scenario_core::store::{parse_tracks_csv, RecordingConfig};
use scenario_core::synth::{synthetic_corpus, CorpusSpec};
use scenario_core::understanding::interpret_offline;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CUT_IN: &str = "The ego vehicle maintains its lane and velocity. Initially, Target Vehicle #1 is driving in the left adjacent lane. It then accelerates and changes lanes to the right, eventually driving in front of the ego vehicle.";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scenario"));
    c.env_remove("OPENAI_API_KEY");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn corpus(dir: &Path) -> PathBuf {
    let o = run(&["synth", "--cut-in", "3", "--seed", "7", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("tracks.csv")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = corpus(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "extract", "--tracks", s(&tracks), "--query-text", CUT_IN, "--metric", "TTC",
        "--threshold", "10", "--cmp", "le", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.manifest_version, MANIFEST_VERSION);
    assert_eq!(manifest.match_count, 3);
    let xosc = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "xosc"))
        .count();
    assert_eq!(xosc, 3);
    assert!(out.join("run.log").exists());

    let text = std::fs::read_to_string(&tracks).unwrap();
    let store = parse_tracks_csv(text.as_bytes(), RecordingConfig::new("tracks", 25.0)).unwrap();
    let config = PipelineConfig {
        recording: RecordingConfig::new("tracks", 25.0),
        criticality: Some(CriticalityConfig::new(MetricKind::TTC, 10.0)),
        ..Default::default()
    };
    let lib = run_pipeline(&store, &interpret_offline(CUT_IN).unwrap(), Some(CUT_IN), None, &config)
        .unwrap();
    assert_eq!(manifest, lib.manifest);
    for f in &lib.files {
        assert_eq!(std::fs::read_to_string(out.join(&f.file_name)).unwrap(), f.content);
    }
    // every default is written out
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let cfg = &raw["config"];
    for key in ["recording", "search", "criticality", "metric_params", "export", "formats", "parallel"] {
        assert!(!cfg[key].is_null(), "{key}");
    }
    assert_eq!(cfg["search"]["detection"]["a_lon_threshold"], 0.2);
}

#[test]
fn ttc_ge_zero_selects_everything() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = corpus(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "extract", "--tracks", s(&tracks), "--query-text", CUT_IN, "--metric", "TTC",
        "--cmp", "ge", "--threshold", "0", "--out", s(&out), "--format", "xosc,cmtxt",
    ]);
    assert_eq!(code(&o), 0);
    let m: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.match_count, 3);
    assert_eq!(m.selected_count, 3);
    assert!(m.matches.iter().all(|e| e.exports.len() == 2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = corpus(dir.path());
    let out = dir.path().join("out");
    let q = dir.path().join("q.json");
    std::fs::write(&q, "{}").unwrap();

    let both = run(&["extract", "--tracks", s(&tracks), "--query-text", CUT_IN, "--query-json", s(&q), "--out", s(&out)]);
    assert_eq!(code(&both), 2);
    let neither = run(&["extract", "--tracks", s(&tracks), "--out", s(&out)]);
    assert_eq!(code(&neither), 2);

    let bad_query = run(&["extract", "--tracks", s(&tracks), "--query-json", s(&q), "--out", s(&out)]);
    assert_eq!(code(&bad_query), 3);
    let bad_csv = dir.path().join("bad.csv");
    std::fs::write(&bad_csv, "frame,id\n1,1\n").unwrap();
    let o = run(&["extract", "--tracks", s(&bad_csv), "--query-text", CUT_IN, "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing required column"));

    let no_target = run(&["extract", "--tracks", s(&tracks), "--query-text", "The ego vehicle brakes.", "--out", s(&out)]);
    assert_eq!(code(&no_target), 4);

    let remote = bin()
        .args([
            "extract", "--tracks", s(&tracks), "--query-text", CUT_IN, "--provider", "remote",
            "--endpoint", "http://127.0.0.1:9/v1/chat/completions", "--max-retries", "0", "--out", s(&out),
        ])
        .env("OPENAI_API_KEY", "placeholder")
        .output()
        .unwrap();
    assert_eq!(code(&remote), 5);
    assert!(out.join("transcript.json").exists());
    let no_key = run(&["extract", "--tracks", s(&tracks), "--query-text", CUT_IN, "--provider", "remote", "--out", s(&out)]);
    assert_eq!(code(&no_key), 5);

    // a millisecond frame rate cannot be printed with two decimals
    let export = run(&[
        "extract", "--tracks", s(&tracks), "--query-text", CUT_IN, "--out", s(&out),
        "--frame-rate", "1000", "--precision", "2", "--min-activity-duration", "0",
        "--min-window-duration", "0", "--lane-change-half-window", "0.05",
    ]);
    assert_eq!(code(&export), 6);
}

fn fixture_manifest(category: &str, first_id: u32, tp: u32, fp: u32, fn_: u32) -> (Manifest, Vec<GroundTruthLabel>) {
    let w = FrameInterval::new(0, 99).unwrap();
    let mut matches = Vec::new();
    let mut labels = Vec::new();
    let pair = |i: u32| (first_id + 2 * i, first_id + 2 * i + 1);
    for i in 0..tp + fp {
        let (ego, tgt) = pair(i);
        let scenario = ScenarioMatch {
            recording_id: "fixture".into(),
            ego_id: ego,
            targets: vec![TargetWindow { target_id: tgt, analysis_window: w }],
            scenario_window: w,
        };
        matches.push(ManifestEntry {
            scenario_id: scenario_id(&scenario),
            entry: PoolEntry { scenario, reports: vec![], passes: true },
            exports: vec![],
        });
    }
    for i in (0..tp).chain(tp + fp..tp + fp + fn_) {
        let (ego, tgt) = pair(i);
        labels.push(GroundTruthLabel { category: category.into(), ego_id: ego, target_id: tgt, frames: w });
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        category: Some(category.into()),
        description: None,
        query: interpret_offline(CUT_IN).unwrap(),
        config: PipelineConfig::default(),
        match_count: matches.len(),
        selected_count: matches.len(),
        matches,
    };
    (manifest, labels)
}

#[test]
fn evaluate_published_counts() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [
        ("following", 2479, 15, 814, [0.749, 0.994, 0.753, 0.857]),
        ("cut-in", 248, 23, 39, [0.800, 0.915, 0.864, 0.889]),
        ("cut-out", 265, 15, 32, [0.849, 0.946, 0.892, 0.919]),
    ];
    let mut args = vec!["evaluate".to_string()];
    let mut truth = Vec::new();
    for (k, (cat, tp, fp, fn_, _)) in rows.iter().enumerate() {
        let (m, labels) = fixture_manifest(cat, 100_000 * (k as u32 + 1), *tp, *fp, *fn_);
        let path = dir.path().join(format!("{cat}.json"));
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        args.push("--predictions".into());
        args.push(path.to_string_lossy().into_owned());
        truth.extend(labels);
    }
    let truth_path = dir.path().join("labels.csv");
    write_labels(std::fs::File::create(&truth_path).unwrap(), &truth).unwrap();
    args.extend(["--truth".into(), truth_path.to_string_lossy().into_owned()]);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    for (k, (cat, tp, fp, fn_, expected)) in rows.iter().enumerate() {
        let r = &report["categories"][k];
        assert_eq!(r["category"], *cat);
        assert_eq!(r["counts"]["tp"], *tp);
        assert_eq!(r["counts"]["fp"], *fp);
        assert_eq!(r["counts"]["fn"], *fn_);
        for (name, want) in ["accuracy", "precision", "recall", "f1"].iter().zip(expected) {
            let got = r["metrics"][name].as_f64().unwrap();
            assert_eq!((got * 1000.0).round() / 1000.0, *want, "{cat} {name}");
        }
    }
}

#[test]
fn evaluate_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = fixture_manifest("cut-in", 1, 4, 0, 0);
    let mp = dir.path().join("m.json");
    std::fs::write(&mp, serde_json::to_string(&m).unwrap()).unwrap();
    let empty = dir.path().join("empty.csv");
    write_labels(std::fs::File::create(&empty).unwrap(), &[]).unwrap();

    let o = run(&["evaluate", "--predictions", s(&mp), "--truth", s(&empty)]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["total"]["counts"]["fp"], 4);
    assert_eq!(r["total"]["counts"]["tp"], 0);
    assert!(r["total"]["metrics"]["recall"].is_null());
    assert!(r["total"]["metrics"]["f1"].is_null());

    let o = run(&["evaluate", "--predictions", s(&mp), "--truth", s(&empty), "--iou", "1.1"]);
    assert_eq!(code(&o), 2);

    let mut old: Value = serde_json::to_value(&m).unwrap();
    old["manifest_version"] = 99.into();
    std::fs::write(&mp, old.to_string()).unwrap();
    let o = run(&["evaluate", "--predictions", s(&mp), "--truth", s(&empty)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&["synth", "--following", "2", "--cut-out", "2", "--distractors", "3", "--seed", "11", "--out", s(d.path())]);
        assert_eq!(code(&o), 0);
    }
    for f in ["tracks.csv", "labels.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
    let spec = CorpusSpec { following: 2, cut_out: 2, distractors: 3, ..Default::default() };
    assert_eq!(
        std::fs::read_to_string(a.path().join("tracks.csv")).unwrap(),
        synthetic_corpus(11, spec, 25.0).unwrap().csv()
    );
    assert_eq!(code(&run(&["synth", "--out", s(a.path())])), 2);
}
