//! Seeded random search over a discretized hyperparameter grid, scored by
//! cross-validated goal-class macro-F1.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adaboost::AdaBoostParams;
use super::cv::{cross_validate, CvReport};
use super::forest::ForestParams;
use super::mlp::MlpParams;
use super::svm::SvmParams;
use super::{ModelConfig, ReducerConfig, TrainSet, VariantConfig};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub variant: String,
    pub reducers: Vec<ReducerConfig>,
    /// Kernel widths; `None` is the data-driven default.
    pub gammas: Vec<Option<f64>>,
    pub box_c: Vec<f64>,
    pub rounds: Vec<usize>,
    pub trees: Vec<usize>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
}

impl SearchSpace {
    pub fn default_for(variant: &str) -> Result<Self> {
        VariantConfig::default_for(variant)?;
        Ok(SearchSpace {
            variant: variant.to_string(),
            reducers: vec![ReducerConfig::Lda(3), ReducerConfig::Pca(4), ReducerConfig::Pca(8)],
            gammas: vec![None, Some(0.1), Some(0.3), Some(1.0)],
            box_c: vec![0.3, 1.0, 3.0, 10.0],
            rounds: vec![25, 50, 100, 200],
            trees: vec![25, 50, 100],
            alpha1: vec![2.0 / 3.0, 1.0, 1.5, 2.0],
            alpha2: vec![2.0 / 3.0, 1.0, 1.5, 2.0],
        })
    }

    /// Every configuration of the grid for the space's variant.
    pub fn configs(&self, seed: u64) -> Result<Vec<ModelConfig>> {
        let base = VariantConfig::default_for(&self.variant)?;
        let variants: Vec<VariantConfig> = match base {
            VariantConfig::SvmEcoc(p) => self
                .gammas
                .iter()
                .flat_map(|&gamma| self.box_c.iter().map(move |&c| VariantConfig::SvmEcoc(SvmParams { gamma, c, ..p })))
                .collect(),
            VariantConfig::Adaboost(_) => {
                self.rounds.iter().map(|&rounds| VariantConfig::Adaboost(AdaBoostParams { rounds })).collect()
            }
            VariantConfig::RandomForest(p) => self
                .trees
                .iter()
                .map(|&n_trees| VariantConfig::RandomForest(ForestParams { n_trees, ..p }))
                .collect(),
            VariantConfig::Mlp(p) => self
                .alpha1
                .iter()
                .flat_map(|&alpha1| {
                    self.alpha2.iter().map(move |&alpha2| VariantConfig::Mlp(MlpParams { alpha1, alpha2, ..p }))
                })
                .collect(),
        };
        let out: Vec<ModelConfig> = self
            .reducers
            .iter()
            .flat_map(|r| variants.iter().map(move |v| ModelConfig::new(*r, v.clone(), seed)))
            .collect();
        if out.is_empty() {
            return Err(Error::InvalidParameter("search space is empty".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub config: ModelConfig,
    pub cv: CvReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelConfig,
    pub best_score: f64,
    /// Every evaluated configuration, in evaluation order.
    pub evaluations: Vec<Evaluation>,
}

/// Evaluates `budget` distinct grid points drawn with `seed` and returns the
/// best by mean CV macro-F1 (earliest on ties).
pub fn hyperparameter_search(
    set: &TrainSet,
    fingerprint: &str,
    space: &SearchSpace,
    budget: usize,
    folds: usize,
    seed: u64,
) -> Result<SearchResult> {
    if budget == 0 {
        return Err(Error::InvalidParameter("search budget must be positive".into()));
    }
    let mut grid = space.configs(seed)?;
    grid.shuffle(&mut rng_for(seed, "search/order"));
    grid.truncate(budget);
    let mut evaluations = Vec::with_capacity(grid.len());
    for config in grid {
        let cv = cross_validate(set, fingerprint, &config, folds, seed)?;
        log::info!(
            "search: reducer {} {:?} -> mean macro-F1 {:.4}",
            config.reducer,
            config.variant,
            cv.mean_macro_f1
        );
        evaluations.push(Evaluation { config, cv });
    }
    let best = evaluations
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.cv.mean_macro_f1.total_cmp(&b.cv.mean_macro_f1).then(j.cmp(i)))
        .map(|(_, e)| e.clone())
        .expect("at least one evaluation");
    Ok(SearchResult { best_score: best.cv.mean_macro_f1, best: best.config, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let s = SearchSpace::default_for("adaboost").unwrap();
        assert_eq!(s.configs(1).unwrap().len(), 3 * 4);
        let s = SearchSpace::default_for("mlp").unwrap();
        assert_eq!(s.configs(1).unwrap().len(), 3 * 16);
        assert!(SearchSpace::default_for("knn").is_err());
    }
}
