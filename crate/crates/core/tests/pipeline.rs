mod common;

use std::path::Path;
use std::process::Command;

use common::{snapshot, write_planted_fixture};
use riverseg::formats::{read_manifest, DownstreamAxis, FlowGeometry};
use riverseg::metrics::SizeBin;
use riverseg::pipeline::{
    apply_pipeline, cmd_evaluate, cmd_extract, cmd_match_prompts_manifest, cmd_patches_merge, cmd_patches_split,
    cmd_rf_predict, cmd_rf_train, cmd_threshold, similarity_inputs_from_manifest, ImageState, LocationContext,
    PipelineStep, ProposerSpec, RunConfig,
};
use riverseg::postproc::{AreaOfInterest, PatchGrid};
use riverseg::promptsel::{FloodFillProposer, LoopConfig};
use riverseg::forest::ForestConfig;
use riverseg::raster::{BitGrid, ClassId, Dims, InstanceMask, MaskSource, ResampleMethod, ScalarField};
use riverseg::synth::{generate, SynthSpec, TEST_SPLIT, TRAIN_SPLIT};

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        locations: 2,
        images_per_location: 4,
        seed,
        ..Default::default()
    }
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&small_spec(7), a.path()).unwrap();
    generate(&small_spec(7), b.path()).unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    let c = tempfile::tempdir().unwrap();
    generate(&small_spec(8), c.path()).unwrap();
    assert_ne!(snapshot(a.path()), snapshot(c.path()));
}

#[test]
fn synth_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(&small_spec(7), dir.path()).unwrap();
    read_manifest(&manifest, true).unwrap();
    let mut cfg = RunConfig::new(&manifest, TEST_SPLIT);
    cfg.pipeline = vec![
        PipelineStep::Aoi {
            split: TRAIN_SPLIT.into(),
            min_inside_fraction: 0.5,
            connectivity: Default::default(),
        },
        PipelineStep::Barrier,
    ];
    cfg.output.csv = Some(dir.path().join("a.csv"));
    let outcome = cmd_evaluate(&cfg).unwrap();
    assert_eq!(outcome.report.rows().len(), 2);
    assert_eq!(outcome.images.len(), 4);
    assert!(outcome.images.iter().all(|i| !i.barrier_missing));
    for row in outcome.report.rows() {
        let v = row.summary.iou_by_class[&ClassId::InSystemTrash].mean;
        assert!((0.0..=1.0).contains(&v));
    }
    let first = std::fs::read(dir.path().join("a.csv")).unwrap();
    cfg.workers = Some(1);
    cmd_evaluate(&cfg).unwrap();
    assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), first);
}

#[test]
fn planted_iou_is_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_planted_fixture(dir.path());
    let outcome = cmd_evaluate(&RunConfig::new(manifest, "test")).unwrap();
    let row = outcome.report.row(3, "base").unwrap();
    let s = row.summary.iou_by_class[&ClassId::InSystemTrash];
    assert!((s.mean - 0.5).abs() <= 1e-12);
    assert_eq!(row.summary.binned_iou[&SizeBin::Small].mean, 0.5);
    assert_eq!(row.summary.hamming_positive.unwrap().mean, 0.0);
}

#[test]
fn truth_as_prediction_scores_one_and_no_prediction_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_planted_fixture(dir.path());
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("t0_pred.rseg", "t0_gt.rseg")).unwrap();
    let outcome = cmd_evaluate(&RunConfig::new(&manifest, "test")).unwrap();
    assert_eq!(outcome.report.rows()[0].summary.iou_by_class[&ClassId::InSystemTrash].mean, 1.0);

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["locations"][0]["images"][0]
        .as_object_mut()
        .unwrap()
        .remove("predictions");
    std::fs::write(&manifest, v.to_string()).unwrap();
    let outcome = cmd_evaluate(&RunConfig::new(&manifest, "test")).unwrap();
    let s = &outcome.report.rows()[0].summary;
    assert_eq!(s.iou_by_class[&ClassId::InSystemTrash].mean, 0.0);
    assert_eq!(s.hamming_positive.unwrap().mean, 1.0);
}

/// AOI before BMC filters the detector masks, which BMC then replaces; BMC
/// before AOI lets the filter see the thresholded mask.
#[test]
fn step_order_changes_the_result() {
    let dims = Dims::new(10, 6).unwrap();
    let logits = ScalarField::from_fn(dims, |x, y| {
        if (3..9).contains(&x) && (1..3).contains(&y) {
            0.9
        } else if x < 2 && y >= 4 {
            0.8
        } else {
            0.1
        }
    })
    .unwrap();
    let mut state = ImageState::new(dims);
    state.logits.push(logits);
    state.masks.push(
        InstanceMask::new(BitGrid::from_fn(dims, |x, y| x < 2 && y < 2), ClassId::InSystemTrash, MaskSource::Predicted).unwrap(),
    );
    let aoi = AreaOfInterest::new(BitGrid::from_fn(dims, |x, _| x < 5), 0.5).unwrap();
    let ctx = LocationContext::new(FlowGeometry { downstream_axis: DownstreamAxis::PosY }).with_aoi("train", aoi);
    let aoi_step = PipelineStep::Aoi {
        split: "train".into(),
        min_inside_fraction: 0.5,
        connectivity: Default::default(),
    };
    let bmc = PipelineStep::Bmc { cutoff: 0.5 };

    let aoi_first = apply_pipeline(state.clone(), &[aoi_step.clone(), bmc.clone()], &ctx).unwrap();
    let bmc_first = apply_pipeline(state, &[bmc, aoi_step], &ctx).unwrap();
    let area = |s: &ImageState| s.masks.iter().map(InstanceMask::area).sum::<usize>();
    assert_eq!(area(&aoi_first), 12 + 4);
    assert_eq!(area(&bmc_first), 4);
}

#[test]
fn run_config_file_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    write_planted_fixture(dir.path());
    let cfg_path = dir.path().join("run.json");
    std::fs::write(
        &cfg_path,
        r#"{"manifest": "manifest.json", "split": "test", "run": "aoi",
            "pipeline": [{"step": "aoi", "split": "train"}],
            "output": {"csv": "out/report.csv"}}"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.manifest, dir.path().join("manifest.json"));
    cmd_evaluate(&cfg).unwrap();
    assert!(dir.path().join("out/report.csv").is_file());

    std::fs::write(&cfg_path, r#"{"manifest": "m.json", "split": "t", "pipeline": [{"step": "blur"}]}"#).unwrap();
    assert!(RunConfig::load(&cfg_path).is_err());
    std::fs::write(
        &cfg_path,
        r#"{"manifest": "m.json", "split": "t", "pipeline": [{"step": "patches", "rows": 2, "cols": 2}]}"#,
    )
    .unwrap();
    assert!(RunConfig::load(&cfg_path).is_err());
}

#[test]
fn aoi_from_test_split_refused() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_planted_fixture(dir.path());
    let mut cfg = RunConfig::new(manifest, "test");
    cfg.pipeline = vec![PipelineStep::Aoi {
        split: "test".into(),
        min_inside_fraction: 0.5,
        connectivity: Default::default(),
    }];
    let err = cmd_evaluate(&cfg).unwrap_err();
    assert!(err.to_string().contains("test split"), "{err}");
}

#[test]
fn extract_and_match_prompts_from_synth() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = read_manifest(generate(&small_spec(3), dir.path()).unwrap(), true).unwrap();
    let inputs = similarity_inputs_from_manifest(&manifest, TEST_SPLIT).unwrap();
    assert_eq!(inputs.len(), 4);
    let out = dir.path().join("extract");
    let spec = ProposerSpec::FloodFill(FloodFillProposer::default());
    let log = cmd_extract(&inputs, &spec, &LoopConfig::new(0.005), &out, Some(2)).unwrap();
    assert_eq!(log.len(), 4);
    for rec in &log {
        assert!(!rec.masks.is_empty());
        for m in &rec.masks {
            assert!(out.join(m).is_file());
        }
    }
    let first = std::fs::read(out.join("extract_log.json")).unwrap();
    cmd_extract(&inputs, &spec, &LoopConfig::new(0.005), &out, Some(1)).unwrap();
    assert_eq!(std::fs::read(out.join("extract_log.json")).unwrap(), first);

    let matches = cmd_match_prompts_manifest(&manifest, TEST_SPLIT, dir.path().join("matches.json")).unwrap();
    assert_eq!(matches.len(), 4);
    for (id, m) in &matches {
        // prompts come from the same location
        assert_eq!(id.split('_').next(), m.prompt_id.split('_').next());
    }
}

#[test]
fn forest_commands_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = read_manifest(generate(&small_spec(4), dir.path()).unwrap(), true).unwrap();
    let cfg = ForestConfig {
        n_trees: 5,
        ..Default::default()
    };
    assert!(cmd_rf_train(&manifest, TEST_SPLIT, &cfg, dir.path().join("f.json")).is_err());
    let forest = cmd_rf_train(&manifest, TRAIN_SPLIT, &cfg, dir.path().join("f.json")).unwrap();
    let pred_manifest = cmd_rf_predict(&forest, &manifest, TEST_SPLIT, dir.path().join("rf"), 30).unwrap();
    let outcome = cmd_evaluate(&RunConfig::new(&pred_manifest, TEST_SPLIT)).unwrap();
    for row in outcome.report.rows() {
        assert!(row.summary.iou_by_class[&ClassId::InSystemTrash].mean > 0.9);
    }
}

#[test]
fn patch_and_threshold_utilities() {
    let dir = tempfile::tempdir().unwrap();
    let f = ScalarField::from_fn(Dims::new(13, 7).unwrap(), |x, y| (x * 7 + y) as f32 / 100.0).unwrap();
    let p = dir.path().join("f.rfld");
    riverseg::formats::write_field(&p, &f).unwrap();
    let grid = PatchGrid {
        working_size: (8, 8),
        ..PatchGrid::new(2, 3).unwrap()
    };
    let layout = cmd_patches_split(&p, &grid, ResampleMethod::Nearest, dir.path().join("patches")).unwrap();
    assert_eq!(layout.patches.len(), 6);
    let merged = cmd_patches_merge(dir.path().join("patches/layout.json"), dir.path().join("m.rfld")).unwrap();
    assert_eq!(merged.dims(), f.dims());

    assert_eq!(cmd_threshold(&p, 0.5, dir.path().join("t.rseg")).unwrap(), Some(f.values().iter().filter(|&&v| v >= 0.5).count()));
    assert_eq!(cmd_threshold(&p, 100.0, dir.path().join("none.rseg")).unwrap(), None);
    assert!(!dir.path().join("none.rseg").exists());
}

fn cli(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_riverseg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = cli(&["synth", "--out", "data", "--images", "4", "--seed", "7"], d);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let ok = cli(&["evaluate", "--manifest", "data/manifest.json", "--split", "test40", "--out", "r.csv", "--strict"], d);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(d.join("r.csv").is_file());

    let missing = cli(&["evaluate", "--manifest", "nope.json", "--split", "test40"], d);
    assert_eq!(missing.status.code(), Some(2));
    let invalid = cli(&["evaluate", "--manifest", "data/manifest.json", "--split", "nosuch"], d);
    assert_eq!(invalid.status.code(), Some(1));
    let bad_flag = cli(&["evaluate", "--bogus"], d);
    assert_eq!(bad_flag.status.code(), Some(1));
    let help = cli(&["--help"], d);
    assert_eq!(help.status.code(), Some(0));
}
