use std::collections::{HashMap, HashSet};

use intent_core::dataset::{build_corpus, AnnotatedTrial, Corpus, DatasetConfig, SplitMode, Stage, WindowSpec};
use intent_core::simgen::{generate_corpus, CorpusConfig};
use intent_core::{formats, FeatureSet, Participant};

fn trials(n: usize, seed: u64) -> Vec<AnnotatedTrial> {
    generate_corpus(&CorpusConfig::new(n, seed)).unwrap().into_iter().map(|(t, g)| (t, Some(g))).collect()
}

fn corpus(trials: &[AnnotatedTrial], length: usize, mode: SplitMode) -> Corpus {
    let mut cfg = DatasetConfig::new(WindowSpec::new(length, FeatureSet::Full));
    cfg.split.mode = mode;
    build_corpus(trials, &cfg).unwrap()
}

#[test]
fn windows_stay_inside_their_labeled_region() {
    let trials = trials(80, 5);
    for length in [20, 80] {
        let c = corpus(&trials, length, SplitMode::Dyad);
        let span = (length - 1) as f64 / c.rate_hz;
        let by_source: HashMap<(&str, Participant), _> =
            c.instances.iter().map(|s| ((s.instance.trial_id.as_str(), s.instance.participant), &s.instance)).collect();
        let (mut skewed_idle, mut skewed_action) = (0, 0);
        for w in c.train.iter().chain(&c.test) {
            let inst = by_source[&(w.source.trial_id.as_str(), w.source.participant)];
            let (end, start) = (w.source.t_end, w.source.t_end - span);
            let (lo, hi) = if w.label == 0 { inst.idle } else { (inst.phase.t0, inst.phase.tf) };
            if w.label != 0 {
                assert_eq!(w.label as usize, inst.goal);
            }
            assert!(start >= lo - 1e-9 && end <= hi + 1e-9, "{}: window [{start}, {end}] outside [{lo}, {hi}]", inst.trial_id);
            if w.stage == Stage::Skewed {
                if w.label == 0 {
                    skewed_idle += 1;
                    assert!(end <= inst.phase.t0 + 1e-9);
                } else {
                    skewed_action += 1;
                    assert!(start >= inst.phase.t0 - 1e-9);
                }
            }
        }
        assert!(skewed_idle > 0 && skewed_action > 0);
    }
}

#[test]
fn skewed_windows_crowd_the_transition() {
    let c = corpus(&trials(80, 6), 40, SplitMode::Dyad);
    let t0: HashMap<(&str, Participant), f64> =
        c.instances.iter().map(|s| ((s.instance.trial_id.as_str(), s.instance.participant), s.instance.phase.t0)).collect();
    let span = 39.0 / c.rate_hz;
    let mean_gap = |stage: Stage| {
        let gaps: Vec<f64> = c
            .train
            .iter()
            .filter(|w| w.stage == stage)
            .map(|w| {
                let t0 = t0[&(w.source.trial_id.as_str(), w.source.participant)];
                if w.label == 0 { t0 - w.source.t_end } else { w.source.t_end - span - t0 }
            })
            .collect();
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    assert!(mean_gap(Stage::Skewed) < 0.5 * mean_gap(Stage::Uniform));
}

#[test]
fn building_twice_gives_the_same_corpus() {
    let trials = trials(60, 8);
    let a = corpus(&trials, 60, SplitMode::Dyad);
    let b = corpus(&trials, 60, SplitMode::Dyad);
    assert_eq!(a, b);
    let text = formats::corpus_to_text(&a);
    assert_eq!(text, formats::corpus_to_text(&b));
    assert_eq!(formats::corpus_from_text(&text).unwrap(), a);
    assert_eq!(formats::corpus_from_binary(&formats::corpus_to_binary(&a)).unwrap(), a);
}

#[test]
fn input_order_does_not_change_the_dyad_split() {
    let trials = trials(60, 9);
    let mut reversed = trials.clone();
    reversed.reverse();
    let key = |c: &Corpus| {
        let mut train: Vec<String> = c.train.iter().map(|w| format!("{}/{}/{}/{:?}", w.source.trial_id, w.source.participant, w.source.t_end, w.features)).collect();
        let mut test: Vec<String> = c.test.iter().map(|w| format!("{}/{}/{}/{:?}", w.source.trial_id, w.source.participant, w.source.t_end, w.features)).collect();
        train.sort();
        test.sort();
        (train, test)
    };
    assert!(key(&corpus(&trials, 40, SplitMode::Dyad)) == key(&corpus(&reversed, 40, SplitMode::Dyad)));
}

#[test]
fn train_and_test_never_share_a_trial_or_dyad() {
    let trials = trials(120, 10);
    let dyad: HashMap<&str, &str> = trials.iter().map(|(t, _)| (t.id.as_str(), t.dyad.as_str())).collect();
    for mode in [SplitMode::Dyad, SplitMode::Interaction] {
        let c = corpus(&trials, 40, mode);
        let ids = |ws: &[intent_core::dataset::LabeledWindow]| -> HashSet<String> { ws.iter().map(|w| w.source.trial_id.clone()).collect() };
        let (train, test) = (ids(&c.train), ids(&c.test));
        assert!(!test.is_empty());
        assert!(train.is_disjoint(&test), "{mode:?}: a trial is on both sides");
        if mode == SplitMode::Dyad {
            let dyads = |s: &HashSet<String>| -> HashSet<&str> { s.iter().map(|id| dyad[id.as_str()]).collect() };
            assert!(dyads(&train).is_disjoint(&dyads(&test)), "a dyad is on both sides");
        }
    }
}
