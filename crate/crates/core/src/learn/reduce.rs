//! Linear dimensionality reduction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};

/// Relative ridge added to the within-class scatter.
pub const LDA_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim", rename_all = "lowercase")]
pub enum ReducerConfig {
    #[default]
    None,
    Pca(usize),
    Lda(usize),
}

impl ReducerConfig {
    /// `none`, `pca:D` or `lda:D`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("reducer must be none, pca:D or lda:D, got `{s}`"));
        if s == "none" {
            return Ok(ReducerConfig::None);
        }
        let (kind, d) = s.split_once(':').ok_or_else(bad)?;
        let d: usize = d.parse().map_err(|_| bad())?;
        match kind {
            "pca" => Ok(ReducerConfig::Pca(d)),
            "lda" => Ok(ReducerConfig::Lda(d)),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for ReducerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReducerConfig::None => f.write_str("none"),
            ReducerConfig::Pca(d) => write!(f, "pca:{d}"),
            ReducerConfig::Lda(d) => write!(f, "lda:{d}"),
        }
    }
}

/// `x -> projection * (x - mean)`; identity for [`ReducerConfig::None`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    pub kind: ReducerConfig,
    pub mean: Vec<f64>,
    /// One row per output dimension.
    pub projection: Vec<Vec<f64>>,
}

impl Reducer {
    pub fn identity() -> Self {
        Reducer { kind: ReducerConfig::None, mean: Vec::new(), projection: Vec::new() }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self.kind {
            ReducerConfig::None => input_dim,
            _ => self.projection.len(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.kind == ReducerConfig::None {
            return x.to_vec();
        }
        self.projection
            .iter()
            .map(|w| w.iter().zip(x).zip(&self.mean).map(|((w, v), m)| w * (v - m)).sum())
            .collect()
    }
}

pub fn fit(cfg: &ReducerConfig, x: &Table, y: &[usize], n_classes: usize) -> Result<Reducer> {
    match *cfg {
        ReducerConfig::None => Ok(Reducer::identity()),
        ReducerConfig::Pca(d) => fit_pca(x, d),
        ReducerConfig::Lda(d) => fit_lda(x, y, n_classes, d),
    }
}

fn column_mean(x: &Table) -> DVector<f64> {
    let mut m = DVector::zeros(x.n_cols);
    for r in x.rows() {
        for (a, v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    m / x.n_rows().max(1) as f64
}

/// Adds `w * (r - m)(r - m)^T` to the upper triangle of `s`.
fn accumulate_outer(s: &mut DMatrix<f64>, r: &[f64], m: &DVector<f64>, w: f64, buf: &mut [f64]) {
    for (b, (v, mu)) in buf.iter_mut().zip(r.iter().zip(m.iter())) {
        *b = v - mu;
    }
    let p = buf.len();
    for j in 0..p {
        let bj = w * buf[j];
        if bj == 0.0 {
            continue;
        }
        for i in 0..=j {
            s[(i, j)] += buf[i] * bj;
        }
    }
}

fn symmetrize_upper(s: &mut DMatrix<f64>) {
    let p = s.nrows();
    for j in 0..p {
        for i in 0..j {
            s[(j, i)] = s[(i, j)];
        }
    }
}

/// Eigenvectors of a symmetric matrix, largest eigenvalue first, each
/// signed so its largest-magnitude entry is positive.
fn sorted_eigenvectors(m: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| (l, canonical_sign(v.into_owned())))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn canonical_sign(v: DVector<f64>) -> DVector<f64> {
    let pivot = v.iter().copied().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 { -v } else { v }
}

fn check_dim(d: usize, max: usize, what: &str) -> Result<()> {
    if d == 0 || d > max {
        return Err(Error::InvalidParameter(format!("{what} dimension must be in 1..={max}, got {d}")));
    }
    Ok(())
}

/// Top-`d` principal directions of the sample covariance.
pub fn fit_pca(x: &Table, d: usize) -> Result<Reducer> {
    check_dim(d, x.n_cols, "pca")?;
    if x.n_rows() < 2 {
        return Err(Error::Training("pca needs at least two samples".into()));
    }
    let mean = column_mean(x);
    let mut cov = DMatrix::zeros(x.n_cols, x.n_cols);
    let mut buf = vec![0.0; x.n_cols];
    for r in x.rows() {
        accumulate_outer(&mut cov, r, &mean, 1.0, &mut buf);
    }
    symmetrize_upper(&mut cov);
    cov /= (x.n_rows() - 1) as f64;
    let projection = sorted_eigenvectors(cov).into_iter().take(d).map(|(_, v)| v.iter().copied().collect()).collect();
    Ok(Reducer { kind: ReducerConfig::Pca(d), mean: mean.iter().copied().collect(), projection })
}

/// Within- and between-class scatter matrices.
pub fn scatter_matrices(x: &Table, y: &[usize], n_classes: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let p = x.n_cols;
    let mean = column_mean(x);
    let mut class_mean = vec![DVector::zeros(p); n_classes];
    let mut count = vec![0usize; n_classes];
    for (r, &c) in x.rows().zip(y) {
        for (a, v) in class_mean[c].iter_mut().zip(r) {
            *a += v;
        }
        count[c] += 1;
    }
    for (m, &n) in class_mean.iter_mut().zip(&count) {
        *m /= n.max(1) as f64;
    }
    let mut within = DMatrix::zeros(p, p);
    let mut buf = vec![0.0; p];
    for (r, &c) in x.rows().zip(y) {
        accumulate_outer(&mut within, r, &class_mean[c], 1.0, &mut buf);
    }
    symmetrize_upper(&mut within);
    let mut between = DMatrix::zeros(p, p);
    for (m, &n) in class_mean.iter().zip(&count) {
        let dm = m - &mean;
        between += (n as f64) * &dm * dm.transpose();
    }
    (within, between, mean)
}

/// Leading discriminant directions: solutions of `Sb v = l (Sw + eps I) v`
/// with the largest `l`, scaled to unit length.
pub fn fit_lda(x: &Table, y: &[usize], n_classes: usize, d: usize) -> Result<Reducer> {
    check_dim(d, n_classes.saturating_sub(1).min(x.n_cols), "lda")?;
    let mut count = vec![0usize; n_classes];
    y.iter().for_each(|&c| count[c] += 1);
    if let Some(c) = count.iter().position(|&n| n < 2) {
        return Err(Error::Training(format!("lda needs two samples per class; class {c} has {}", count[c])));
    }
    let p = x.n_cols;
    let (mut within, between, mean) = scatter_matrices(x, y, n_classes);
    let ridge = LDA_RIDGE * (within.trace() / p as f64).max(1.0);
    for i in 0..p {
        within[(i, i)] += ridge;
    }
    let chol = within
        .cholesky()
        .ok_or_else(|| Error::Training("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Training("within-class scatter factor is singular".into()))?;
    let mut m = &l_inv * between * l_inv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let l_inv_t = l_inv.transpose();
    let projection = sorted_eigenvectors(m)
        .into_iter()
        .take(d)
        .map(|(_, u)| {
            let v = canonical_sign(&l_inv_t * u);
            let n = v.norm();
            v.iter().map(|a| a / n).collect()
        })
        .collect();
    Ok(Reducer { kind: ReducerConfig::Lda(d), mean: mean.iter().copied().collect(), projection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn pca_recovers_a_line_exactly() {
        let rows: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, 2.0 * i as f64 + 1.0]).collect();
        let x = Table::from_rows(&rows).unwrap();
        let r = fit_pca(&x, 1).unwrap();
        for row in &rows {
            let z = r.apply(row)[0];
            let back: Vec<f64> = (0..2).map(|j| r.mean[j] + z * r.projection[0][j]).collect();
            assert!((back[0] - row[0]).abs() < 1e-9 && (back[1] - row[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_rows_are_orthonormal() {
        let mut rng = rng_from(4);
        let n = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> =
            (0..200).map(|i| (0..6).map(|j| n.sample(&mut rng) * (1.0 + j as f64) + (i % 3) as f64).collect()).collect();
        let r = fit_pca(&Table::from_rows(&rows).unwrap(), 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = r.projection[a].iter().zip(&r.projection[b]).map(|(u, v)| u * v).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lda_dimension_is_bounded_by_classes() {
        let rows: Vec<[f64; 5]> = (0..40).map(|i| [i as f64, (i * i % 7) as f64, 1.0, (i % 4) as f64, 0.5 * i as f64]).collect();
        let y: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let x = Table::from_rows(&rows).unwrap();
        assert!(fit_lda(&x, &y, 4, 4).is_err());
        assert_eq!(fit_lda(&x, &y, 4, 3).unwrap().projection.len(), 3);
    }

    #[test]
    fn parse_round_trips() {
        for s in ["none", "pca:4", "lda:3"] {
            assert_eq!(ReducerConfig::parse(s).unwrap().to_string(), s);
        }
        assert!(ReducerConfig::parse("ica:2").is_err());
    }
}
