use std::path::{Path, PathBuf};

use rand::Rng as _;

use intent_core::dataset::{DatasetConfig, WindowSpec};
use intent_core::learn::{ModelConfig, ReducerConfig, VariantConfig};
use intent_core::pipeline::{self, exit_code, EXIT_FINGERPRINT, EXIT_FORMAT, EXIT_VARIANT, EXIT_VERSION};
use intent_core::rng::rng_from;
use intent_core::simgen::CorpusConfig;
use intent_core::{formats, Error, FeatureSet};

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    trials: PathBuf,
}

impl Workspace {
    fn new(n_trials: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let trials = root.join("trials");
        std::fs::create_dir(&trials).unwrap();
        pipeline::simulate(&CorpusConfig::new(n_trials, 31), &trials).unwrap();
        Workspace { _dir: dir, root, trials }
    }

    fn corpus(&self, name: &str, length: usize) -> PathBuf {
        let out = self.root.join(name);
        pipeline::build_dataset(&self.trials, &DatasetConfig::new(WindowSpec::new(length, FeatureSet::Full)), &out).unwrap();
        out
    }

    fn model(&self, corpus: &Path, variant: &str) -> PathBuf {
        let out = self.root.join(format!("{variant}.model"));
        let cfg = ModelConfig::new(ReducerConfig::Lda(3), VariantConfig::default_for(variant).unwrap(), 3);
        pipeline::train_stage(corpus, &cfg, 0, &out).unwrap();
        out
    }
}

fn code(err: Error) -> i32 {
    exit_code(&err)
}

#[test]
fn saved_models_predict_like_the_originals() {
    let ws = Workspace::new(60);
    let corpus = ws.corpus("corpus.tsv", 40);
    let n_features = formats::load_corpus(&corpus).unwrap().n_features();
    let mut rng = rng_from(4);
    let queries: Vec<Vec<f64>> = (0..100).map(|_| (0..n_features).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    for variant in ["svm_ecoc", "adaboost", "random_forest", "mlp"] {
        let out = ws.root.join(format!("{variant}.model"));
        let cfg = ModelConfig::new(ReducerConfig::Lda(3), VariantConfig::default_for(variant).unwrap(), 3);
        let trained = pipeline::train_stage(&corpus, &cfg, 0, &out).unwrap().model;
        let loaded = formats::load_model(&out, Some(variant)).unwrap();
        assert_eq!(loaded, trained);
        for q in &queries {
            assert_eq!(loaded.predict(q).unwrap(), trained.predict(q).unwrap(), "{variant}");
        }
    }
}

#[test]
fn damaged_or_foreign_model_files_are_refused() {
    let ws = Workspace::new(60);
    let corpus = ws.corpus("corpus.tsv", 40);
    let forest = ws.model(&corpus, "random_forest");
    let text = std::fs::read_to_string(&forest).unwrap();

    let truncated = &text[..text.len() / 2];
    assert_eq!(code(formats::model_from_str(truncated, None).unwrap_err()), EXIT_FORMAT);
    let cut_at_line = &text[..text.find('\n').unwrap() + 1];
    assert_eq!(code(formats::model_from_str(cut_at_line, None).unwrap_err()), EXIT_FORMAT);

    let err = formats::load_model(&forest, Some("svm_ecoc")).unwrap_err();
    assert!(matches!(&err, Error::VariantMismatch { expected, found } if expected == "svm_ecoc" && found == "random_forest"));
    assert_eq!(code(err), EXIT_VARIANT);
}

#[test]
fn small_pipeline_emits_a_report() {
    let ws = Workspace::new(50);
    let corpus = ws.corpus("corpus.bin", 40);
    let model = ws.model(&corpus, "adaboost");
    let eval = ws.root.join("eval");
    std::fs::create_dir(&eval).unwrap();
    let report = pipeline::evaluate_stage(&corpus, &model, &ws.trials, 25, &eval, None).unwrap();
    assert!(report.test_windows > 0);
    let kv = std::fs::read_to_string(eval.join("report.kv")).unwrap();
    assert!(kv.contains("macro_f1"), "{kv}");
    assert!(std::fs::read_to_string(eval.join("report.txt")).unwrap().contains("macro"));
    assert!(eval.join("report.manifest.json").exists());
}

#[test]
fn a_corpus_from_another_version_stops_training() {
    let ws = Workspace::new(50);
    let corpus = ws.corpus("corpus.tsv", 40);
    let text = std::fs::read_to_string(&corpus).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    let stale = ws.root.join("stale.tsv");
    std::fs::write(&stale, format!("{}\n{rest}", first.replace(" v1", " v0"))).unwrap();

    let out = ws.root.join("stale.model");
    let cfg = ModelConfig::new(ReducerConfig::Lda(3), VariantConfig::default_for("adaboost").unwrap(), 3);
    let err = pipeline::train_stage(&stale, &cfg, 0, &out).unwrap_err();
    assert_eq!(code(err), EXIT_VERSION);
    assert!(!out.exists());
    assert!(!pipeline::manifest_path(&out).exists());
}

#[test]
fn a_model_for_other_windows_is_refused_at_evaluation() {
    let ws = Workspace::new(50);
    let short = ws.corpus("short.tsv", 20);
    let long = ws.corpus("long.tsv", 60);
    let model = ws.model(&short, "adaboost");
    let eval = ws.root.join("eval");
    std::fs::create_dir(&eval).unwrap();
    let err = pipeline::evaluate_stage(&long, &model, &ws.trials, 25, &eval, None).unwrap_err();
    assert_eq!(code(err), EXIT_FINGERPRINT);
    assert!(!eval.join("report.txt").exists());
}
