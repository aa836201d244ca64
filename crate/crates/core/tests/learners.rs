use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use intent_core::learn::adaboost::{self, AdaBoostParams};
use intent_core::learn::cv::cross_validate;
use intent_core::learn::forest::{self, ForestParams};
use intent_core::learn::mlp::{probabilities, MlpShape};
use intent_core::learn::reduce::fit_lda;
use intent_core::learn::search::{hyperparameter_search, SearchSpace};
use intent_core::learn::{train, ModelConfig, ReducerConfig, Table, TrainSet, VariantConfig};
use intent_core::rng::rng_from;

/// Gaussian blobs: class `c` is centered at `spread * c` along axis `c % p`.
fn blobs(n: usize, n_classes: usize, p: usize, spread: f64, seed: u64) -> (Table, Vec<usize>) {
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    let rows: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| (0..p).map(|f| if f == c % p { spread * c as f64 } else { 0.0 } + normal.sample(&mut rng)).collect())
        .collect();
    (Table::from_rows(&rows).unwrap(), y)
}

fn train_set(x: Table, y: &[usize], group_size: usize) -> TrainSet {
    TrainSet {
        groups: (0..y.len()).map(|i| format!("g{:04}", i / group_size)).collect(),
        y: y.iter().map(|&c| c as u8).collect(),
        x,
    }
}

fn queries(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| (0..p).map(|_| rng.random_range(-3.0..6.0)).collect()).collect()
}

#[test]
fn lda_direction_matches_a_grid_search() {
    for seed in 0..5 {
        let mut rng = rng_from(100 + seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let shift = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let (mut rows, mut y) = (Vec::new(), Vec::new());
        for i in 0..300 {
            let c = i % 2;
            let (a, b) = (normal.sample(&mut rng), normal.sample(&mut rng));
            // Correlated, anisotropic clouds so the answer is not the mean difference.
            let x = [2.0 * a + 0.8 * b + c as f64 * shift[0], 0.5 * b + c as f64 * shift[1]];
            rows.push(x);
            y.push(c);
        }
        let x = Table::from_rows(&rows).unwrap();
        let found = &fit_lda(&x, &y, 2, 1).unwrap().projection[0];

        let mean = |c: usize| {
            let pts: Vec<&[f64; 2]> = rows.iter().zip(&y).filter(|(_, &k)| k == c).map(|(r, _)| r).collect();
            let n = pts.len() as f64;
            [pts.iter().map(|r| r[0]).sum::<f64>() / n, pts.iter().map(|r| r[1]).sum::<f64>() / n]
        };
        let means = [mean(0), mean(1)];
        let ratio = |w: [f64; 2]| {
            let proj = |r: &[f64; 2]| r[0] * w[0] + r[1] * w[1];
            let between = (proj(&means[1]) - proj(&means[0])).powi(2);
            let within: f64 = rows.iter().zip(&y).map(|(r, &c)| (proj(r) - proj(&means[c])).powi(2)).sum();
            between / within
        };
        let best = (0..18_000)
            .map(|i| (i as f64 * 0.01).to_radians())
            .map(|a| [a.cos(), a.sin()])
            .max_by(|a, b| ratio(*a).total_cmp(&ratio(*b)))
            .unwrap();
        let cos = (found[0] * best[0] + found[1] * best[1]).abs();
        let angle = cos.min(1.0).acos().to_degrees();
        assert!(angle <= 2.0, "seed {seed}: {angle} degrees apart");
        // Class means keep their order along both directions.
        let sign = |w: &[f64]| ((means[1][0] - means[0][0]) * w[0] + (means[1][1] - means[0][1]) * w[1]).signum();
        let aligned: Vec<f64> = if (found[0] * best[0] + found[1] * best[1]) < 0.0 { found.iter().map(|v| -v).collect() } else { found.clone() };
        assert_eq!(sign(&aligned), sign(&best));
    }
}

#[test]
fn tree_learners_ignore_feature_scale() {
    let (x, y) = blobs(300, 4, 3, 1.5, 7);
    let q = queries(500, 3, 8);
    for scale in [0.01, 3.7, 250.0] {
        let scaled = x.map_rows(3, |r| r.iter().map(|v| v * scale).collect());
        let sq: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();

        let params = ForestParams { n_trees: 20, ..ForestParams::default() };
        let a = forest::fit(&x, &y, 4, &params, 3).unwrap();
        let b = forest::fit(&scaled, &y, 4, &params, 3).unwrap();
        assert!(q.iter().zip(&sq).all(|(u, v)| a.predict(u) == b.predict(v)), "forest changed at scale {scale}");

        let a = adaboost::fit(&x, &y, 4, &AdaBoostParams { rounds: 30 }).unwrap();
        let b = adaboost::fit(&scaled, &y, 4, &AdaBoostParams { rounds: 30 }).unwrap();
        assert!(q.iter().zip(&sq).all(|(u, v)| a.predict(u) == b.predict(v)), "adaboost changed at scale {scale}");
    }
}

#[test]
fn training_order_does_not_change_svm_or_mlp() {
    let (x, y) = blobs(240, 4, 3, 2.0, 9);
    let set = train_set(x, &y, 10);
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.reverse();
    order.rotate_left(37);
    let shuffled = set.subset(&order);
    let q = queries(300, 3, 10);
    for variant in ["svm", "mlp"] {
        let cfg = ModelConfig::new(ReducerConfig::None, VariantConfig::default_for(variant).unwrap(), 4);
        let a = train(&set, "fp", &cfg).unwrap();
        let b = train(&shuffled, "fp", &cfg).unwrap();
        let differ = q.iter().filter(|r| a.predict(r).unwrap() != b.predict(r).unwrap()).count();
        assert_eq!(differ, 0, "{variant}: {differ} predictions changed");
    }
}

#[test]
fn out_of_bag_error_tracks_holdout() {
    let (x, y) = blobs(500, 3, 2, 1.2, 11);
    let (hx, hy) = blobs(20_000, 3, 2, 1.2, 12);
    let f = forest::fit(&x, &y, 3, &ForestParams::default(), 5).unwrap();
    let oob = f.oob_error.unwrap();
    let holdout = hx.rows().zip(&hy).filter(|(r, &c)| f.predict(r) != c).count() as f64 / hy.len() as f64;
    assert!((oob - holdout).abs() <= 0.05, "oob {oob}, holdout {holdout}");
}

#[test]
fn cross_validation_predicts_test_score() {
    let (x, y) = blobs(1000, 4, 4, 1.3, 13);
    let (tx, ty) = blobs(1000, 4, 4, 1.3, 14);
    let set = train_set(x, &y, 10);
    let cfg = ModelConfig::new(ReducerConfig::Lda(3), VariantConfig::default_for("adaboost").unwrap(), 2);
    let cv = cross_validate(&set, "fp", &cfg, 5, 3).unwrap();
    let model = train(&set, "fp", &cfg).unwrap();
    let pairs = tx.rows().zip(&ty).map(|(r, &c)| (c as u8, model.predict(r).unwrap()));
    let test = intent_core::eval::ConfusionMatrix::from_pairs(4, pairs).scores().unwrap().macro_f1;
    assert!((cv.mean_macro_f1 - test).abs() <= 0.05, "cv {}, test {test}", cv.mean_macro_f1);
}

#[test]
fn search_keeps_the_best_and_is_repeatable() {
    let (x, y) = blobs(400, 4, 4, 1.5, 15);
    let set = train_set(x, &y, 8);
    let mut space = SearchSpace::default_for("forest").unwrap();
    space.reducers = vec![ReducerConfig::Lda(3), ReducerConfig::Pca(2), ReducerConfig::None];
    let run = || hyperparameter_search(&set, "fp", &space, 4, 3, 6).unwrap();
    let first = run();
    assert_eq!(first, run());
    let mut scores: Vec<f64> = first.evaluations.iter().map(|e| e.cv.mean_macro_f1).collect();
    scores.sort_by(f64::total_cmp);
    let median = 0.5 * (scores[1] + scores[2]);
    assert!(first.best_score >= median);
    assert_eq!(first.best_score, *scores.last().unwrap());

    let single = hyperparameter_search(&set, "fp", &space, 1, 3, 6).unwrap();
    assert_eq!(single.evaluations.len(), 1);
    assert_eq!(single.best, single.evaluations[0].config);
}

proptest! {
    #[test]
    fn softmax_outputs_sum_to_one(seed in 0u64..1000, input in prop::collection::vec(-50.0..50.0f64, 5)) {
        let shape = MlpShape::from_factors(5, 1.5, 0.8, 4).unwrap();
        let mut rng = rng_from(seed);
        let params: Vec<f64> = (0..shape.n_params()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = probabilities(&shape, &params, &input);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
