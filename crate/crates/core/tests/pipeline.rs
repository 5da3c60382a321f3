//! Integration tests for the pipeline stages and the `phasefeat` binary:
//! subcommand behavior, exit codes, file formats, and determinism.

use std::fs;
use std::path::Path;
use std::process::Command;

use phasefeat::classify::{compute_metrics, stratified_split, ConfusionMatrix};
use phasefeat::config::PipelineConfig;
use phasefeat::features::{extract_subject_features, PhaseForm};
use phasefeat::ingest::ClassLabel;
use phasefeat::pipeline::run_pipeline;
use phasefeat::selection::{
    assemble_set_matrix, sfffs_select_sets, significance_filter, CombinationRule,
};
use phasefeat::synth::{generate_cohort, generate_subject, ClassSynthParams, SynthConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phasefeat"))
}

/// A cohort tuned for strong separability: a coupling hub over regions 0..=8
/// whose jitter concentration differs sharply by class, plus three free
/// regions, so most but not all features carry class signal.
fn tuned_separable_cohort() -> (Vec<phasefeat::features::SubjectFeatures>, Vec<ClassLabel>) {
    let pairs: Vec<(usize, usize)> = (1..=8).map(|i| (0, i)).collect();
    let mk = |kappa: f64| ClassSynthParams {
        coupled_pairs: pairs.clone(),
        coupling_kappa: kappa,
        amplitude: 1.0,
        noise_std: 0.3,
    };
    let cfg = SynthConfig {
        regions: 12,
        timepoints: 140,
        dt: 3.0,
        subjects_per_class: 13,
        seed: 777,
        classes: [mk(50.0), mk(6.0), mk(1.0)],
    };
    let pcfg = PipelineConfig::default();
    let (filter, tfp, entropy, welch) = (
        pcfg.filter_spec(),
        pcfg.tfp_config(),
        pcfg.entropy_config(),
        pcfg.welch_config(),
    );
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for class in ClassLabel::ALL {
        for idx in 0..cfg.subjects_per_class {
            let ts = generate_subject(&cfg, class, idx).unwrap();
            features.push(
                extract_subject_features(&ts, &filter, &tfp, &entropy, &welch, PhaseForm::Unwrapped)
                    .unwrap(),
            );
            labels.push(class);
        }
    }
    (features, labels)
}

#[test]
fn significance_retention_on_separable_cohort() {
    // On a strongly separable cohort the t-test filter keeps most of the
    // selected sets' features, but not all of them.
    let (features, labels) = tuned_separable_cohort();
    let pcfg = PipelineConfig::default();
    let (train_idx, _) = stratified_split(&labels, 3, 17).unwrap();
    let train: Vec<_> = train_idx.iter().map(|&i| features[i].clone()).collect();
    let train_labels: Vec<_> = train_idx.iter().map(|&i| labels[i]).collect();

    let outcome = sfffs_select_sets(&train, &train_labels, &pcfg.sfffs_config()).unwrap();
    let matrix = assemble_set_matrix(&train, &outcome.selected_sets);
    let filtered =
        significance_filter(matrix.view(), &train_labels, 0.05, CombinationRule::Union).unwrap();
    let fraction = filtered.kept_indices().len() as f64 / filtered.mask.len() as f64;
    assert!(
        (0.80..=0.90).contains(&fraction),
        "retained fraction {fraction} ({} of {})",
        filtered.kept_indices().len(),
        filtered.mask.len()
    );
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    fs::write(
        &path,
        "tfp.ensembles = 8\nsplit.per_class_test = 3\nsynth.preset = null\nsynth.regions = 4\nsynth.subjects_per_class = 8\n",
    )
    .unwrap();
    path
}

#[test]
fn cli_synth_features_select_run_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_small_config(dir.path());
    let data_dir = dir.path().join("nested/cohort"); // missing dirs get created

    let out = bin()
        .args(["synth", "--out"])
        .arg(&data_dir)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data_dir.join("manifest.csv").exists());
    assert_eq!(fs::read_dir(data_dir.join("subjects")).unwrap().count(), 24);

    // features: rerun must be byte-identical
    let feat_dir = dir.path().join("features");
    for _ in 0..2 {
        let out = bin()
            .args(["features", "--manifest"])
            .arg(data_dir.join("manifest.csv"))
            .arg("--out")
            .arg(&feat_dir)
            .arg("--config")
            .arg(&cfg_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let table = fs::read(feat_dir.join("features.csv")).unwrap();
    let out = bin()
        .args(["features", "--manifest"])
        .arg(data_dir.join("manifest.csv"))
        .arg("--out")
        .arg(&feat_dir)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(table, fs::read(feat_dir.join("features.csv")).unwrap());

    // N=4 layout: 4*4 + 2*6 = 28 feature columns after subject_id,label
    let text = String::from_utf8(table).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 28);
    assert_eq!(text.lines().count() - 1, 24);
    assert!(feat_dir.join("features.index_map.json").exists());

    // per-subject coherency matrices on demand
    let mat_dir = dir.path().join("features_mat");
    let out = bin()
        .args(["features", "--matrices", "--manifest"])
        .arg(data_dir.join("manifest.csv"))
        .arg("--out")
        .arg(&mat_dir)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plv_text = fs::read_to_string(mat_dir.join("matrices/alz_001.plv.csv")).unwrap();
    assert_eq!(plv_text.lines().count(), 4);
    let row0: Vec<f64> = plv_text
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(row0.len(), 4);
    assert_eq!(row0[0], 1.0);
    assert!(mat_dir.join("matrices/normal_008.msc.csv").exists());

    // select on the feature table
    let sel_dir = dir.path().join("sel");
    let out = bin()
        .args(["select", "--features"])
        .arg(feat_dir.join("features.csv"))
        .arg("--out")
        .arg(&sel_dir)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let selection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sel_dir.join("selection.json")).unwrap()).unwrap();
    assert!(selection["selected_sets"].is_array());
    assert!(selection["mask_length"].as_u64().unwrap() > 0);

    // full run
    let run_dir = dir.path().join("run");
    let out = bin()
        .args(["run", "--manifest"])
        .arg(data_dir.join("manifest.csv"))
        .arg("--out")
        .arg(&run_dir)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["report.json", "confusion.csv", "metrics.csv", "timing.json"] {
        assert!(run_dir.join(file).exists(), "{file} missing");
    }

    // report-internal consistency: embedded metrics match a recomputation
    // from the embedded confusion matrix
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    let cm_json = &report["confusion_matrix"];
    let mut counts = [[0u64; 3]; 3];
    for (i, row) in counts.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = cm_json[i][j].as_u64().unwrap();
        }
    }
    let recomputed = compute_metrics(&ConfusionMatrix::from_counts(counts)).unwrap();
    let embedded_raw = report["metrics"]["raw_accuracy"].as_f64().unwrap();
    assert_eq!(embedded_raw, recomputed.raw_accuracy);
    let embedded_macro = report["metrics"]["macro_avg"]["accuracy"].as_f64().unwrap();
    assert_eq!(embedded_macro, recomputed.macro_avg.accuracy.unwrap());
    // test subjects never appear among training subjects
    let train: Vec<&str> = report["split"]["train_subjects"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for t in report["split"]["test_subjects"].as_array().unwrap() {
        assert!(!train.contains(&t.as_str().unwrap()));
    }
}

#[test]
fn cli_run_skip_selection_passes_everything_through() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_small_config(dir.path());
    let data_dir = dir.path().join("cohort");
    assert!(bin()
        .args(["synth", "--out"])
        .arg(&data_dir)
        .arg("--config")
        .arg(&cfg_path)
        .status()
        .unwrap()
        .success());

    let run_dir = dir.path().join("run");
    let out = bin()
        .args(["run", "--skip-selection", "--manifest"])
        .arg(data_dir.join("manifest.csv"))
        .arg("--out")
        .arg(&run_dir)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["selection"]["skipped"], serde_json::json!(true));
    let sets = report["selection"]["selected_sets"].as_array().unwrap();
    assert_eq!(sets.len(), 6);
    // all features pass through: mask covers the whole concatenated vector
    let mask_len = report["selection"]["mask_length"].as_u64().unwrap();
    let kept = report["selection"]["feature_mask_indices"].as_array().unwrap().len() as u64;
    assert_eq!(mask_len, 28);
    assert_eq!(kept, mask_len);
}

#[test]
fn cli_metrics_subcommand_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cm_path = dir.path().join("confusion.csv");
    fs::write(&cm_path, "8,3,1\n2,5,1\n0,2,8\n").unwrap();

    let out = bin().arg("metrics").arg(&cm_path).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("66.7%"), "{stdout}");
    assert!(stdout.contains("62.5%"), "{stdout}");
    assert!(stdout.contains("50.0%"), "{stdout}");
    assert!(stdout.contains("raw accuracy 70.0%"), "{stdout}");

    // perfect diagonal: everything 100%
    fs::write(&cm_path, "10,0,0\n0,10,0\n0,0,10\n").unwrap();
    let out = bin().arg("metrics").arg(&cm_path).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("100.0%"), "{stdout}");

    // non-integer cell -> data error (2)
    fs::write(&cm_path, "8,3,1\n2,5.5,1\n0,2,8\n").unwrap();
    let out = bin().arg("metrics").arg(&cm_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // usage error -> 1
    let out = bin().arg("bogus-subcommand").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // unknown preset -> usage error listing the presets
    let out = bin()
        .args(["synth", "--out"])
        .arg(dir.path().join("x"))
        .args(["--preset", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    for name in ["separable", "hard", "null"] {
        assert!(stderr.contains(name), "{stderr}");
    }

    // missing manifest -> data error (2)
    let out = bin()
        .args(["run", "--manifest"])
        .arg(dir.path().join("missing.csv"))
        .arg("--out")
        .arg(dir.path().join("r"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // bad config -> usage error (1)
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "no.such.key = 1\n").unwrap();
    let out = bin()
        .args(["run", "--manifest"])
        .arg(dir.path().join("missing.csv"))
        .arg("--out")
        .arg(dir.path().join("r"))
        .arg("--config")
        .arg(&bad_cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn master_seed_changes_outcomes_coherently() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::parse(
        "tfp.ensembles = 4\nsplit.per_class_test = 3\nsynth.preset = null\nsynth.regions = 4\nsynth.subjects_per_class = 8\n",
    )
    .unwrap();
    cfg.apply_master_seed(5);
    let synth_cfg = cfg.synth_config().unwrap();
    let cohort_dir = dir.path().join("cohort");
    generate_cohort(&synth_cfg, &cohort_dir).unwrap();
    let a = run_pipeline(&cfg, &cohort_dir.join("manifest.csv"), false).unwrap();
    let b = run_pipeline(&cfg, &cohort_dir.join("manifest.csv"), false).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );

    let mut cfg2 = cfg.clone();
    cfg2.apply_master_seed(6);
    let c = run_pipeline(&cfg2, &cohort_dir.join("manifest.csv"), false).unwrap();
    assert_ne!(
        serde_json::to_string(&a.report.split).unwrap(),
        serde_json::to_string(&c.report.split).unwrap()
    );
}
