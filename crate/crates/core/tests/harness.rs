//! End-to-end checks of the experiment drivers at toy scale.

use slabbench::attacks::{adversarial_train, AttackConfig};
use slabbench::datagen::{generate_dataset, DatasetSpec, PresetOptions};
use slabbench::harness::*;

mod common;

use common::toy::{configs, lms, small};
use slabbench::metrics::{influence_ranking, randomized_metrics};
use slabbench::mlp::{init_model, train, Arch, ModelOptions, TrainConfig};

#[test]
fn every_experiment_reruns_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in configs() {
        let kind = cfg.experiment;
        let a = run_experiment(&cfg).unwrap();
        assert!(!a.runs.is_empty(), "{}", kind.as_str());
        let a_dir = dir.path().join(format!("{}-a", kind.as_str()));
        let files = emit_report(&a, &a_dir).unwrap();
        let loaded = RunManifest::load(&a_dir.join("manifest.json")).unwrap();
        let b = rerun(&loaded).unwrap();
        assert!(a.same_results(&b), "{} differs on rerun", kind.as_str());
        let b_dir = dir.path().join(format!("{}-b", kind.as_str()));
        let files_b = emit_report(&b, &b_dir).unwrap();
        for (fa, fb) in files.iter().zip(&files_b) {
            if fa.file_name().unwrap() == "manifest.json" {
                continue;
            }
            assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
        }
    }
}

#[test]
fn report_is_idempotent_and_parses_back() {
    let cfg = &configs()[0];
    let m = run_experiment(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = emit_report(&m, dir.path()).unwrap();
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let second = emit_report(&m, dir.path()).unwrap();
    assert_eq!(first, second);
    for (p, b) in second.iter().zip(&bytes) {
        assert_eq!(&std::fs::read(p).unwrap(), b);
    }
    assert!(first.iter().any(|p| p.to_string_lossy().contains("_boundary_")));
    let t = Table::read(&dir.path().join("extreme-sb.csv")).unwrap();
    assert_eq!(t.header, table_header(ExperimentKind::ExtremeSb));
    for (row, run) in m.runs.iter().enumerate() {
        for col in value_columns(ExperimentKind::ExtremeSb) {
            let want: f64 = format!("{:.5e}", run.values[*col]).parse().unwrap();
            assert_eq!(t.number(row, col).unwrap(), Some(want), "{col}");
        }
    }
}

#[test]
fn empty_report_is_header_only() {
    let m = RunManifest::new(configs()[0].clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&m, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("extreme-sb.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(
        text.trim_end(),
        table_header(ExperimentKind::ExtremeSb).join(",")
    );
}

#[test]
fn tampered_manifest_is_rejected() {
    let m = run_experiment(&configs()[5]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&m, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"seed\": 0", "\"seed\": 1", 1)).unwrap();
    assert!(RunManifest::load(&path).is_err());
}

#[test]
fn full_grid_is_complete_and_distinct() {
    let grid = GridConfig {
        subsample: None,
        ..GridConfig::standard()
    };
    let cells = grid.cells(&TrainConfig::default(), 3).unwrap();
    assert_eq!(cells.len(), 5 * 4 * 3 * 3);
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            assert_ne!(a, b);
        }
    }
}

#[test]
fn single_cell_grid_selects_itself() {
    let cfg = small(
        "generalization",
        &format!("[{}]", lms(6, 200)),
        r#"[{"width":8,"depth":1}]"#,
        r#","grid":{"lr":[0.1],"batch_size":[16],"weight_decay":[0],"momentum":[0]}"#,
    );
    let m = run_experiment(&cfg).unwrap();
    assert_eq!(m.runs.len(), 2);
    for r in &m.runs {
        assert_eq!(r.get("selected"), Some(1.0));
        assert_eq!(r.get("lr"), Some(0.1));
    }
}

#[test]
fn repeats_use_distinct_seeds() {
    let mut cfg = configs()[0].clone();
    cfg.repeats = 2;
    let m = run_experiment(&cfg).unwrap();
    assert_eq!(m.runs.len(), 2);
    assert_ne!(m.seeds["repeat0"], m.seeds["repeat1"]);
    assert_ne!(m.runs[0].seeds["init"], m.runs[1].seeds["init"]);
    let mut other = configs()[0].clone();
    other.seed = 1;
    let n = run_experiment(&other).unwrap();
    assert_ne!(m.runs[0].seeds["init"], n.runs[0].seeds["init"]);
}

#[test]
fn size_one_ensemble_equals_its_member() {
    let m = run_experiment(&configs()[2]).unwrap();
    let one = m
        .runs
        .iter()
        .find(|r| r.get("size") == Some(1.0))
        .unwrap();
    assert_eq!(one.get("ensemble_accuracy"), one.get("first_member_accuracy"));
}

#[test]
fn zero_budget_adversarial_training_is_standard_training() {
    let spec = DatasetSpec::preset(
        "advms-57",
        &PresetOptions {
            d: 4,
            ..PresetOptions::default()
        },
    )
    .unwrap();
    let data = generate_dataset(&spec, 200, 1).unwrap();
    let model = init_model(4, Arch::new(8, 1), &ModelOptions::default(), 2).unwrap();
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 32,
        seed: 5,
        ..TrainConfig::default()
    };
    let atk = AttackConfig {
        budget: 0.0,
        step_size: 0.0,
        ..AttackConfig::default()
    };
    let (a, _) = adversarial_train(&model, &data, &atk, &tc).unwrap();
    let (b, _) = train(&model, &data, &tc).unwrap();
    assert_eq!(a, b);
}

/// On MS-5 every coordinate has the same mean and variance in both classes,
/// so an untrained network barely separates them and no single coordinate
/// matters. (On LMS data a random net already reads the linear coordinate.)
#[test]
fn untrained_model_has_no_influential_coordinate() {
    let spec = DatasetSpec::preset(
        "ms-5",
        &PresetOptions {
            d: 20,
            ..PresetOptions::default()
        },
    )
    .unwrap();
    let data = generate_dataset(&spec, 10_000, 3).unwrap();
    let model = init_model(20, Arch::new(50, 1), &ModelOptions::default(), 4).unwrap();
    for (c, drop) in influence_ranking(&model, &data, 1, 9).unwrap() {
        assert!(drop.abs() < 0.05, "coordinate {c}: drop {drop}");
    }
    let r = randomized_metrics(&model, &data, "Sc", 3, 9).unwrap();
    assert!((r.auc - 0.5).abs() < 0.05, "{}", r.auc);
}

#[test]
fn config_json_rejects_bad_values() {
    assert!(ExperimentConfig::from_json(r#"{"experiment":"uap","bogus":1}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"experiment":"ensemble","repeats":0}"#).is_err());
    assert!(
        ExperimentConfig::from_json(r#"{"experiment":"ensemble","ensemble":{"sizes":[11]}}"#)
            .is_err()
    );
    assert!(ExperimentConfig::from_json(r#"{"experiment":"nope"}"#).is_err());
}
