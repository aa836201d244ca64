use intent_core::dataset::{build_corpus, AnnotatedTrial, DatasetConfig, WindowSpec};
use intent_core::learn::{train, ModelConfig, ReducerConfig, TrainSet, VariantConfig};
use intent_core::phase::{detect_trial_phase, idle_phase, PhaseMode, PhaseParams};
use intent_core::simgen::{generate_corpus, generate_trial, projected_power_oracle, CorpusConfig, NoiseConfig, Role, RoleMix, ScenarioConfig};
use intent_core::{formats, FeatureSet, Participant};

fn detected_onset(trial: &intent_core::TrialRecording, k: Participant) -> Option<f64> {
    detect_trial_phase(trial, k, &trial.layout, &PhaseParams::default(), PhaseMode::PerParticipant)
        .unwrap()
        .map(|p| p.t0)
}

#[test]
fn noiseless_onset_is_found_within_one_sample() {
    let pairs = [
        [Role::hard(1), Role::follower()],
        [Role::follower(), Role::soft(2, intent_core::simgen::Behavior::Decisive)],
        [Role::hard(3), Role::soft(1, intent_core::simgen::Behavior::Indecisive)],
        [Role::soft(2, intent_core::simgen::Behavior::Decisive), Role::soft(2, intent_core::simgen::Behavior::Indecisive)],
    ];
    for (p, roles) in pairs.into_iter().enumerate() {
        for seed in 0..8 {
            let mut cfg = ScenarioConfig::new(format!("quiet-{p}-{seed}"), roles, seed);
            cfg.noise = NoiseConfig::none();
            let (trial, truth) = generate_trial(&cfg).unwrap();
            for k in Participant::BOTH {
                let t0 = detected_onset(&trial, k).expect("a noiseless hump is always found");
                let err = (t0 - truth.onset[k.index()]).abs();
                assert!(err <= 1.0 / trial.rate_hz + 1e-9, "{} p{}: onset off by {err}", trial.id, k.number());
            }
        }
    }
}

#[test]
fn injected_onset_sets_the_idle_length() {
    // The power onset trails the force onset by a lag that depends weakly on
    // the onset itself; shift the force onset until the action starts 1.5 s
    // after the beep.
    for seed in 0..5 {
        let mut cfg = ScenarioConfig::new(format!("inject-{seed}"), [Role::hard(2), Role::follower()], seed);
        cfg.dynamics.onset_min = 1.5;
        cfg.dynamics.onset_max = 1.5;
        let (mut trial, mut truth) = generate_trial(&cfg).unwrap();
        for _ in 0..4 {
            let miss = truth.onset[0] - (trial.t_beep + 1.5);
            cfg.dynamics.onset_min -= miss;
            cfg.dynamics.onset_max -= miss;
            (trial, truth) = generate_trial(&cfg).unwrap();
        }
        assert!((truth.onset[0] - trial.t_beep - 1.5).abs() < 1e-2, "injection missed: {}", truth.onset[0]);
        let phase = detect_trial_phase(&trial, Participant::P1, &trial.layout, &PhaseParams::default(), PhaseMode::PerParticipant)
            .unwrap()
            .unwrap();
        let (start, end) = idle_phase(trial.t_beep, &phase).unwrap();
        assert!(((end - start) - 1.5).abs() <= 0.05, "seed {seed}: idle length {}", end - start);
    }
}

#[test]
fn every_trial_leaves_room_for_the_longest_window() {
    let trials = generate_corpus(&CorpusConfig::new(300, 7)).unwrap();
    for (trial, truth) in &trials {
        for k in Participant::BOTH {
            let idle = truth.onset[k.index()] - trial.t_beep;
            assert!(idle >= 0.4, "{} p{}: idle {idle}", trial.id, k.number());
        }
    }
}

#[test]
fn corpus_files_are_byte_identical_across_runs() {
    let cfg = CorpusConfig::new(300, 7);
    let render = |c: &CorpusConfig| -> Vec<(String, String)> {
        generate_corpus(c)
            .unwrap()
            .iter()
            .map(|(t, g)| (formats::trial_to_string(t), formats::truth_to_string(g)))
            .collect()
    };
    assert!(render(&cfg) == render(&cfg));
}

#[test]
fn hard_pairs_in_the_mix_bring_opposing_episodes() {
    let mut cfg = CorpusConfig::new(300, 21);
    cfg.mix = RoleMix::parse("hard-follower=0.2,soft-follower=0.15,hard-soft=0.25,soft-soft=0.2,hard-hard=0.2").unwrap();
    let trials = generate_corpus(&cfg).unwrap();
    let opposing = trials.iter().filter(|(_, g)| g.opposing.iter().any(|&o| o)).count();
    assert!(opposing as f64 >= 0.15 * trials.len() as f64, "{opposing} of {} trials", trials.len());
}

/// Share of action samples where the goal with the largest projected power is
/// the intended one. Participants being dragged against their intent are left
/// out: their power points at the partner's goal by construction.
fn oracle_accuracy(trials: &[(intent_core::TrialRecording, intent_core::simgen::GroundTruth)]) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for (trial, truth) in trials.iter().filter(|(_, g)| g.usable()) {
        for k in Participant::BOTH.into_iter().filter(|k| !truth.opposing[k.index()]) {
            let guess = projected_power_oracle(trial, k).unwrap();
            for (g, &label) in guess.iter().zip(&truth.intent[k.index()]).filter(|(_, l)| **l != 0) {
                total += 1;
                hits += (*g == label) as usize;
            }
        }
    }
    hits as f64 / total as f64
}

#[test]
fn noiseless_power_reveals_the_intent() {
    let mut cfg = CorpusConfig::new(200, 3);
    cfg.noise = NoiseConfig::none();
    let acc = oracle_accuracy(&generate_corpus(&cfg).unwrap());
    assert!(acc >= 0.99, "oracle accuracy {acc}");
}

fn window_accuracy(walk: f64) -> (f64, f64) {
    let mut cfg = CorpusConfig::new(150, 33);
    cfg.noise.walk_amplitude = walk;
    let trials: Vec<AnnotatedTrial> = generate_corpus(&cfg).unwrap().into_iter().map(|(t, g)| (t, Some(g))).collect();
    let spec = WindowSpec::new(60, FeatureSet::Full);
    let corpus = build_corpus(&trials, &DatasetConfig::new(spec)).unwrap();
    let model_cfg = ModelConfig::new(ReducerConfig::Lda(3), VariantConfig::default_for("adaboost").unwrap(), 1);
    let model = train(&TrainSet::from_windows(&corpus.train).unwrap(), &corpus.fingerprint, &model_cfg).unwrap();
    let by_id: std::collections::HashMap<&str, &intent_core::TrialRecording> = trials.iter().map(|(t, _)| (t.id.as_str(), t)).collect();
    let (mut oracle_hits, mut model_hits) = (0usize, 0usize);
    for w in &corpus.test {
        let trial = by_id[w.source.trial_id.as_str()];
        let guess = projected_power_oracle(trial, w.source.participant).unwrap();
        oracle_hits += (guess[trial.index_at(w.source.t_end)] == w.label) as usize;
        model_hits += (model.predict(&w.features).unwrap() == w.label) as usize;
    }
    let n = corpus.test.len() as f64;
    (oracle_hits as f64 / n, model_hits as f64 / n)
}

#[test]
fn learning_absorbs_walking_artifacts_better_than_the_oracle() {
    let levels = [0.15, 1.5, 3.0];
    let acc: Vec<(f64, f64)> = levels.iter().map(|&w| window_accuracy(w)).collect();
    for pair in acc.windows(2) {
        assert!(pair[1].0 < pair[0].0, "oracle accuracy did not drop: {acc:?}");
    }
    let oracle_drop = acc[0].0 - acc[2].0;
    let model_drop = acc[0].1 - acc[2].1;
    assert!(model_drop < oracle_drop, "oracle drop {oracle_drop}, classifier drop {model_drop}: {acc:?}");
}
