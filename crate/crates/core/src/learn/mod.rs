//! Window classifiers.
//!
//! Features are standardized with training statistics, optionally reduced
//! (PCA or LDA) and passed to one of four learners. Every learner works on
//! dense class indices `0..C`; [`TrainedModel`] maps them back to corpus
//! labels and refuses inputs built under a different feature spec.

pub mod adaboost;
pub mod cv;
pub mod forest;
pub mod lbfgs;
pub mod mlp;
pub mod reduce;
pub mod search;
pub mod svm;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledWindow, WindowSpec};
use crate::error::{Error, Result};

pub use reduce::{Reducer, ReducerConfig};

/// Dense row-major sample matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Table {
    pub fn new(n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} values do not form rows of {n_cols}",
                data.len()
            )));
        }
        Ok(Table { n_cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.as_ref().len() != n_cols {
                return Err(Error::InvalidParameter("rows differ in length".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Table::new(n_cols, data)
    }

    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.data.len() / self.n_cols
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn select(&self, idx: &[usize]) -> Table {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Table { n_cols: self.n_cols, data }
    }

    pub fn map_rows(&self, n_out: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Table {
        let mut data = Vec::with_capacity(self.n_rows() * n_out);
        for r in self.rows() {
            data.extend(f(r));
        }
        Table { n_cols: n_out, data }
    }
}

/// Training windows as a matrix, labels and the trial each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub x: Table,
    pub y: Vec<u8>,
    pub groups: Vec<String>,
}

impl TrainSet {
    pub fn from_windows(windows: &[LabeledWindow]) -> Result<Self> {
        let rows: Vec<&[f64]> = windows.iter().map(|w| w.features.as_slice()).collect();
        Ok(TrainSet {
            x: Table::from_rows(&rows)?,
            y: windows.iter().map(|w| w.label).collect(),
            groups: windows.iter().map(|w| w.source.trial_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> TrainSet {
        TrainSet {
            x: self.x.select(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
        }
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<u8> {
        let mut l = self.y.clone();
        l.sort_unstable();
        l.dedup();
        l
    }
}

/// Per-feature affine map to zero mean and unit variance. Constant
/// features keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Table) -> Self {
        let n = x.n_rows().max(1) as f64;
        let mut mean = vec![0.0; x.n_cols];
        for r in x.rows() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.n_cols];
        for r in x.rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum VariantConfig {
    SvmEcoc(svm::SvmParams),
    Adaboost(adaboost::AdaBoostParams),
    RandomForest(forest::ForestParams),
    Mlp(mlp::MlpParams),
}

impl VariantConfig {
    pub fn name(&self) -> &'static str {
        match self {
            VariantConfig::SvmEcoc(_) => "svm_ecoc",
            VariantConfig::Adaboost(_) => "adaboost",
            VariantConfig::RandomForest(_) => "random_forest",
            VariantConfig::Mlp(_) => "mlp",
        }
    }

    /// Default hyperparameters of the learner called `name`.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "svm_ecoc" | "svm" => VariantConfig::SvmEcoc(svm::SvmParams::default()),
            "adaboost" => VariantConfig::Adaboost(adaboost::AdaBoostParams::default()),
            "random_forest" | "forest" => VariantConfig::RandomForest(forest::ForestParams::default()),
            "mlp" | "nn" => VariantConfig::Mlp(mlp::MlpParams::default()),
            other => return Err(Error::InvalidParameter(format!("unknown model variant `{other}`"))),
        })
    }
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub reducer: ReducerConfig,
    pub variant: VariantConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(reducer: ReducerConfig, variant: VariantConfig, seed: u64) -> Self {
        ModelConfig { reducer, variant, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "model", rename_all = "snake_case")]
pub enum Classifier {
    SvmEcoc(svm::SvmModel),
    Adaboost(adaboost::AdaBoostModel),
    RandomForest(forest::Forest),
    Mlp(mlp::MlpModel),
}

impl Classifier {
    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Classifier::SvmEcoc(m) => m.predict(x),
            Classifier::Adaboost(m) => m.predict(x),
            Classifier::RandomForest(m) => m.predict(x),
            Classifier::Mlp(m) => m.predict(x),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Classifier::SvmEcoc(_) => "svm_ecoc",
            Classifier::Adaboost(_) => "adaboost",
            Classifier::RandomForest(_) => "random_forest",
            Classifier::Mlp(_) => "mlp",
        }
    }
}

/// A fitted pipeline: standardizer, reducer, learner, label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub fingerprint: String,
    pub n_features: usize,
    /// Corpus label of each dense class index.
    pub labels: Vec<u8>,
    pub standardizer: Standardizer,
    pub reducer: Reducer,
    pub classifier: Classifier,
    /// Window spec of the training corpus, when known, so a model file alone
    /// can rebuild features for streaming.
    #[serde(default)]
    pub spec: Option<WindowSpec>,
}

/// Dense class indices of `y` under the sorted label map `labels`.
pub fn encode_labels(y: &[u8], labels: &[u8]) -> Vec<usize> {
    y.iter().map(|l| labels.binary_search(l).expect("label in map")).collect()
}

/// Fits the full pipeline on `set`.
pub fn train(set: &TrainSet, fingerprint: &str, cfg: &ModelConfig) -> Result<TrainedModel> {
    if set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let labels = set.labels();
    if labels.len() < 2 {
        return Err(Error::Training(format!("need at least two classes, found {}", labels.len())));
    }
    // Sums over rows are order-sensitive in floating point; a canonical row
    // order makes the fit independent of how the caller arranged the set.
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        set.x.row(a).iter().zip(set.x.row(b)).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(set.y[a].cmp(&set.y[b]))
    });
    let set = &set.subset(&order);
    let y = encode_labels(&set.y, &labels);
    let standardizer = Standardizer::fit(&set.x);
    let z = set.x.map_rows(set.x.n_cols, |r| standardizer.apply(r));
    let reducer = reduce::fit(&cfg.reducer, &z, &y, labels.len())?;
    let r = z.map_rows(reducer.output_dim(z.n_cols), |row| reducer.apply(row));
    let classifier = match &cfg.variant {
        VariantConfig::SvmEcoc(p) => Classifier::SvmEcoc(svm::fit(&r, &y, labels.len(), p)?),
        VariantConfig::Adaboost(p) => Classifier::Adaboost(adaboost::fit(&r, &y, labels.len(), p)?),
        VariantConfig::RandomForest(p) => {
            Classifier::RandomForest(forest::fit(&r, &y, labels.len(), p, cfg.seed)?)
        }
        VariantConfig::Mlp(p) => Classifier::Mlp(mlp::fit(&r, &y, labels.len(), p, cfg.seed)?),
    };
    Ok(TrainedModel {
        config: cfg.clone(),
        fingerprint: fingerprint.to_string(),
        n_features: set.x.n_cols,
        labels,
        standardizer,
        reducer,
        classifier,
        spec: None,
    })
}

impl TrainedModel {
    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch { expected: self.fingerprint.clone(), found: fingerprint.into() });
        }
        Ok(())
    }

    /// Standardized and reduced representation of a feature vector.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::InvalidParameter(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.reducer.apply(&self.standardizer.apply(x)))
    }

    /// Corpus label predicted for `x`.
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok(self.labels[self.classifier.predict(&self.transform(x)?)])
    }

    /// Predictions for features built under `fingerprint`.
    pub fn predict_checked(&self, fingerprint: &str, xs: &[Vec<f64>]) -> Result<Vec<u8>> {
        self.check_fingerprint(fingerprint)?;
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn variant_name(&self) -> &'static str {
        self.classifier.variant_name()
    }
}
