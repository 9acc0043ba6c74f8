mod common;

use std::fs;
use std::path::{Path, PathBuf};

use coordscope::coordination::Resolution;
use coordscope::export::sha256_hex;
use coordscope::pipeline::{run_pipeline, PipelineError, RunConfig, RunManifest, Stage, MANIFEST, SUMMARY};
use coordscope::synthlab::{fixtures, generate};
use coordscope::Corpus;

fn write_input(dir: &Path, corpus: &Corpus) -> PathBuf {
    let p = dir.join("input.jsonl");
    fs::write(&p, corpus.to_jsonl()).unwrap();
    p
}

fn config(input: &Path, out: &Path, stages: &[Stage]) -> RunConfig {
    let mut cfg = RunConfig::new(out);
    cfg.inputs = vec![input.to_path_buf()];
    cfg.stages = stages.to_vec();
    cfg
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join(MANIFEST)).unwrap()).unwrap()
}

#[test]
fn sparse_forum_detect_and_control_find_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), &fixtures::sparse_forum());
    let out = tmp.path().join("out");
    let mut cfg = config(&input, &out, &[Stage::Ingest, Stage::Detect, Stage::Control]);
    cfg.replicates = 5;
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.metric(Stage::Detect, "pairs"), Some(0.0));
    assert_eq!(m.metric(Stage::Detect, "total_buckets"), Some(67.0));
    assert_eq!(m.metric(Stage::Detect, "comparable_buckets"), Some(0.0));
    assert_eq!(m.metric(Stage::Control, "pairs"), Some(0.0));
    assert_eq!(m.metric(Stage::Control, "shuffled_pairs_max"), Some(0.0));
    let rows = fs::read_to_string(out.join("control_summary.csv")).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next(), Some("condition,buckets,comparable_buckets,pair_buckets,pairs"));
    assert_eq!(lines.next(), Some("original,67,0,0,0"));
    let shuffled: Vec<&str> = lines.collect();
    assert_eq!(shuffled.len(), 5);
    assert!(shuffled.iter().all(|l| l.ends_with(",67,0,0,0")));
    assert_eq!(read_manifest(&out), m);
}

#[test]
fn single_source_summary_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), &fixtures::sparse_forum());
    let out = tmp.path().join("out");
    run_pipeline(&config(&input, &out, &[Stage::Ingest, Stage::Feasibility])).unwrap();
    let summary = fs::read_to_string(out.join(SUMMARY)).unwrap();
    assert!(summary.contains("Coordination is not estimable on this corpus due to structural sparsity"), "{summary}");
    let feas: serde_json::Value = serde_json::from_slice(&fs::read(out.join("feasibility.json")).unwrap()).unwrap();
    assert_eq!(feas["total_buckets"], 67);
    assert_eq!(feas["comparable_buckets"], 0);
}

#[test]
fn broadcast_fixture_is_estimable() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), &fixtures::comparable_broadcast());
    let out = tmp.path().join("out");
    let m = run_pipeline(&config(&input, &out, &[Stage::Ingest, Stage::Feasibility])).unwrap();
    assert_eq!(m.metric(Stage::Feasibility, "comparable_buckets"), Some(120.0));
    assert!(fs::read_to_string(out.join(SUMMARY)).unwrap().contains("120 of 150 daily buckets"));
}

#[test]
fn sweep_has_one_row_per_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, _) = generate(&common::campaign_config(2, 0.0)).unwrap();
    let input = write_input(tmp.path(), &corpus);
    let out = tmp.path().join("out");
    let mut cfg = config(&input, &out, &[Stage::Ingest, Stage::Sweep]);
    cfg.resolution = Resolution::Hourly;
    cfg.sweep = Some("0.5:0.99:0.01".into());
    run_pipeline(&cfg).unwrap();
    let csv = fs::read_to_string(out.join("pairs_vs_threshold.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 50);
    assert_eq!(rows[0], "0.5,3");
    assert_eq!(rows[5], "0.55,3");
    assert_eq!(rows[49], "0.99,3");
}

#[test]
fn full_run_inventory_and_completeness() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, _) = generate(&common::campaign_config(4, 0.0)).unwrap();
    let input = write_input(tmp.path(), &corpus);
    let out = tmp.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("leftover.txt"), "from an earlier run").unwrap();
    let mut cfg = config(&input, &out, &Stage::ALL.iter().copied().filter(|s| *s != Stage::Filter).collect::<Vec<_>>());
    cfg.resolution = Resolution::Hourly;
    cfg.replicates = 3;
    let m = run_pipeline(&cfg).unwrap();

    for f in ["report.json", "pairs.csv", "pairs_vs_threshold.csv", "acr.csv", "graph.json", "narrative_scatter.csv", "entropy.json", SUMMARY] {
        assert!(m.artifacts.contains_key(f), "{f}");
    }
    assert_eq!(m.metric(Stage::Detect, "pairs"), Some(3.0));
    assert_eq!(m.metric(Stage::Graph, "edges"), Some(3.0));
    assert_eq!(m.artifacts["leftover.txt"].producer, "cached");
    assert_eq!(m.artifacts["graph.json"].producer, "graph");
    assert!(m.stages.iter().all(|s| s.ok));
    assert_eq!(m.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), cfg.stages);

    for entry in fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        if name == MANIFEST {
            continue;
        }
        let listed = m.artifacts.get(&name).unwrap_or_else(|| panic!("{name} missing from manifest"));
        let bytes = fs::read(out.join(&name)).unwrap();
        assert_eq!(listed.sha256, sha256_hex(&bytes), "{name}");
        assert_eq!(listed.bytes, bytes.len() as u64);
        assert!(!listed.incomplete);
    }
}

#[test]
fn downstream_stages_rebuild_from_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, _) = generate(&common::campaign_config(6, 0.0)).unwrap();
    let input = write_input(tmp.path(), &corpus);
    let out = tmp.path().join("out");
    let mut cfg = config(&input, &out, &[Stage::Ingest, Stage::Detect, Stage::Analytics, Stage::Narrative, Stage::Graph]);
    cfg.resolution = Resolution::Hourly;
    let first = run_pipeline(&cfg).unwrap();

    let downstream = ["volume.csv", "acr.csv", "bursts.csv", "leadlag.csv", "narrative_scatter.csv", "entropy.json", "graph.json", "graph_edges.csv"];
    for f in downstream {
        fs::remove_file(out.join(f)).unwrap();
    }
    cfg.inputs.clear();
    cfg.stages = vec![Stage::Analytics, Stage::Narrative, Stage::Graph];
    let second = run_pipeline(&cfg).unwrap();
    for f in downstream {
        assert_eq!(first.artifacts[f].sha256, second.artifacts[f].sha256, "{f}");
    }
    assert_eq!(second.artifacts["report.json"].producer, "cached");
    assert_eq!(second.artifacts["corpus.jsonl"], first.artifacts["corpus.jsonl"].clone().with_producer("cached"));
}

trait WithProducer {
    fn with_producer(self, p: &str) -> Self;
}

impl WithProducer for coordscope::pipeline::ArtifactEntry {
    fn with_producer(mut self, p: &str) -> Self {
        self.producer = p.to_string();
        self
    }
}

#[test]
fn unwritable_output_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), &fixtures::sparse_forum());
    let blocker = tmp.path().join("not-a-dir");
    fs::write(&blocker, "").unwrap();
    let err = run_pipeline(&config(&input, &blocker.join("out"), &[Stage::Ingest, Stage::Detect])).unwrap_err();
    assert!(matches!(err, PipelineError::Unwritable { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 2);
}

#[test]
fn failing_stage_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), &fixtures::sparse_forum());
    let out = tmp.path().join("out");
    let mut cfg = config(&input, &out, &[Stage::Ingest, Stage::Detect, Stage::Narrative, Stage::Graph]);
    cfg.k = 500;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Narrative, .. }), "{err}");
    assert_eq!(err.exit_code(), 4);

    let m = read_manifest(&out);
    let narrative = m.stage(Stage::Narrative).unwrap();
    assert!(!narrative.ok);
    assert!(narrative.error.as_deref().unwrap().contains("500"));
    // stages after the failure never ran
    assert!(m.stage(Stage::Graph).is_none());
    assert!(m.stage(Stage::Detect).unwrap().ok);
    assert!(fs::read_to_string(out.join(SUMMARY)).unwrap().contains("[narrative] FAILED"));
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), &fixtures::sparse_forum());
    let out = tmp.path().join("out");
    let mut bad = config(&input, &out, &[Stage::Ingest, Stage::Filter]);
    assert!(matches!(run_pipeline(&bad), Err(PipelineError::Config(_))));
    bad.stages = vec![Stage::Ingest, Stage::Detect];
    bad.tau = 0.0;
    assert_eq!(run_pipeline(&bad).unwrap_err().exit_code(), 2);
    bad.tau = 0.85;
    bad.sweep = Some("0.9:0.5:0.1".into());
    assert_eq!(run_pipeline(&bad).unwrap_err().exit_code(), 2);
    assert!(!out.exists());
    assert!(RunConfig::from_json(r#"{"out_dir": "x", "replicates": 3, "typo": 1}"#).is_err());
    let parsed = RunConfig::from_json(r#"{"out_dir": "x", "resolution": "h", "cluster_space": "svd:3", "window": {"start": "2026-01-03", "end": "2026-01-07"}}"#).unwrap();
    assert_eq!(parsed.resolution, Resolution::Hourly);
    assert_eq!(parsed.window.unwrap().end - parsed.window.unwrap().start, 4 * 86_400);
}
