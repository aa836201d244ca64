use std::collections::HashMap;

use proptest::prelude::*;

use intent_core::dataset::{build_corpus, AnnotatedTrial, Corpus, DatasetConfig, Instance, WindowSpec};
use intent_core::eval::{
    instance_streams, raw_predictions, replay, signal_report, trial_stream, voting_filter, window_confusion, ConfusionMatrix,
    PredictionStream,
};
use intent_core::learn::{train, ModelConfig, ReducerConfig, TrainSet, TrainedModel, VariantConfig};
use intent_core::simgen::{generate_corpus, CorpusConfig};
use intent_core::{FeatureSet, Participant};

fn trials(n: usize, seed: u64) -> Vec<AnnotatedTrial> {
    generate_corpus(&CorpusConfig::new(n, seed)).unwrap().into_iter().map(|(t, g)| (t, Some(g))).collect()
}

fn fit(corpus: &Corpus) -> TrainedModel {
    let cfg = ModelConfig::new(ReducerConfig::Lda(3), VariantConfig::default_for("adaboost").unwrap(), 7);
    train(&TrainSet::from_windows(&corpus.train).unwrap(), &corpus.fingerprint, &cfg).unwrap()
}

fn transitions(labels: &[u8]) -> usize {
    labels.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Raw streams of every test instance, with the instance.
fn test_streams(trials: &[AnnotatedTrial], cfg: &DatasetConfig) -> Vec<(Instance, PredictionStream)> {
    let corpus = build_corpus(trials, cfg).unwrap();
    let model = fit(&corpus);
    let by_id: HashMap<&str, _> = trials.iter().map(|(t, _)| (t.id.as_str(), t)).collect();
    let lookup = |id: &str| by_id.get(id).copied();
    let instances: Vec<&Instance> = corpus.test_instances().collect();
    let streams = instance_streams(&instances, &lookup, &model, &cfg.spec, 1).unwrap();
    instances.into_iter().cloned().zip(streams).collect()
}

#[test]
fn streaming_replay_matches_batch_predictions() {
    let trials = trials(40, 3);
    let spec = WindowSpec::new(40, FeatureSet::Full);
    let corpus = build_corpus(&trials, &DatasetConfig::new(spec)).unwrap();
    let model = fit(&corpus);
    for (trial, _) in trials.iter().take(6) {
        for k in Participant::BOTH {
            let steps = replay(trial, k, &model, &spec, 25).unwrap();
            let (first, raw) = raw_predictions(trial, k, &model, &spec, trial.t[0], trial.t_end).unwrap();
            assert_eq!(first, spec.length - 1);
            assert_eq!(steps.len(), raw.len());
            for (i, s) in steps.iter().enumerate() {
                assert_eq!((s.index, s.raw), (first + i, raw[i]), "{} p{}", trial.id, k.number());
            }
            let batch = trial_stream(trial, k, &model, &spec, 25).unwrap();
            let start = trial.index_at(batch.start_time);
            let streamed: Vec<u8> = steps.iter().filter(|s| s.index >= start).map(|s| s.filtered).collect();
            assert_eq!(streamed, batch.filtered, "{} p{}", trial.id, k.number());
        }
    }
}

#[test]
fn confusion_rows_count_each_class_and_ignore_voting() {
    let trials = trials(60, 4);
    let spec = WindowSpec::new(40, FeatureSet::Full);
    let corpus = build_corpus(&trials, &DatasetConfig::new(spec)).unwrap();
    let model = fit(&corpus);
    let n_classes = corpus.n_goals + 1;
    let cm = window_confusion(&model, &corpus.test, n_classes).unwrap();
    let mut counts = vec![0u64; n_classes];
    for w in &corpus.test {
        counts[w.label as usize] += 1;
    }
    assert_eq!(cm.row_sums(), counts);

    // Per-step truth over the negotiation frame: idle before the onset, the
    // goal during the action phase.
    let streams = test_streams(&trials, &DatasetConfig::new(spec));
    let step_confusion = |buffer: usize| {
        let mut cm = ConfusionMatrix::new(n_classes);
        for (inst, s) in &streams {
            let s = s.refilter(buffer).unwrap();
            for (i, &p) in s.filtered.iter().enumerate() {
                let t = s.time(i);
                if t <= inst.phase.tf {
                    cm.add(if t < inst.phase.t0 { 0 } else { inst.goal as u8 }, p);
                }
            }
        }
        cm
    };
    let (plain, voted) = (step_confusion(1), step_confusion(25));
    assert_eq!(plain.row_sums(), voted.row_sums());
    assert_ne!(plain, voted);
}

#[test]
fn a_larger_buffer_can_add_a_transition() {
    // Recorded counterexample: the modal filter is not monotone in the buffer
    // size for every raw stream.
    let raw = [1, 1, 2, 2, 0, 0, 0, 0, 1, 0, 0, 2, 0, 0, 1, 1, 0, 2, 2, 1];
    let (b7, b8) = (voting_filter(&raw, 7).unwrap(), voting_filter(&raw, 8).unwrap());
    assert_eq!(&b7[17..], &[0, 0, 1]);
    assert_eq!(&b8[17..], &[0, 2, 1]);
    assert!(transitions(&b8) > transitions(&b7));
}

#[test]
fn larger_buffers_smooth_real_prediction_streams() {
    let streams = test_streams(&trials(120, 5), &DatasetConfig::new(WindowSpec::new(40, FeatureSet::Full)));
    let total = |b: usize| -> usize { streams.iter().map(|(_, s)| transitions(&s.refilter(b).unwrap().filtered)).sum() };
    let counts: Vec<usize> = [1, 10, 25, 50].iter().map(|&b| total(b)).collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "transitions by buffer: {counts:?}");
    assert!(counts[0] > counts[3]);
}

#[test]
fn skewed_sampling_shortens_the_delay() {
    let trials = trials(300, 6);
    let spec = WindowSpec::new(60, FeatureSet::Full);
    let delay = |n_skewed: usize| {
        let mut cfg = DatasetConfig::new(spec);
        cfg.plan.n_skewed = n_skewed;
        let streams = test_streams(&trials, &cfg);
        let refiltered: Vec<(&Instance, PredictionStream)> = streams.iter().map(|(i, s)| (i, s.refilter(25).unwrap())).collect();
        signal_report(&refiltered, &[], 25).delay.mean.unwrap()
    };
    let (with, without) = (delay(4), delay(0));
    println!("mean delay with skewed windows {with:.3} s, without {without:.3} s");
    assert!(without > with, "delay with skewed windows {with}, without {without}");
}

fn oracle(raw: &[u8], size: usize) -> Vec<u8> {
    (0..raw.len())
        .map(|i| {
            let window = &raw[(i + 1).saturating_sub(size)..=i];
            let count = |l: u8| window.iter().filter(|&&v| v == l).count();
            let top = window.iter().map(|&l| count(l)).max().unwrap();
            *window.iter().rev().find(|&&l| count(l) == top).unwrap()
        })
        .collect()
}

proptest! {
    #[test]
    fn voting_matches_the_modal_oracle(raw in prop::collection::vec(0u8..4, 1..120), size in 1usize..40) {
        let out = voting_filter(&raw, size).unwrap();
        prop_assert_eq!(&out, &oracle(&raw, size));
        prop_assert_eq!(voting_filter(&raw, 1).unwrap(), raw.clone());
        let constant = vec![raw[0]; raw.len()];
        prop_assert_eq!(voting_filter(&constant, size).unwrap(), constant);
    }
}
