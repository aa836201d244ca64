//! Gaussian-kernel soft-margin SVMs combined by one-vs-all output codes.
//!
//! Each binary learner solves the dual by sequential minimal optimization
//! with second-order working-set selection; a point is classified by the
//! code word with the smallest summed binary loss.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Kernel rows kept per binary problem, in values.
const CACHE_VALUES: usize = 12_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLoss {
    /// `max(0, 1 - m s) / 2`
    #[default]
    Hinge,
    /// `(1 - m s) / 2`
    Linear,
    /// `(1 - m s)^2 / 4` clipped at 0 for `m s > 1`
    Quadratic,
}

impl BinaryLoss {
    pub fn eval(self, code: f64, score: f64) -> f64 {
        let m = code * score;
        match self {
            BinaryLoss::Hinge => (1.0 - m).max(0.0) / 2.0,
            BinaryLoss::Linear => (1.0 - m) / 2.0,
            BinaryLoss::Quadratic => {
                let r = (1.0 - m).max(0.0);
                r * r / 4.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Kernel width; `None` picks `1 / (n_features * mean feature variance)`.
    pub gamma: Option<f64>,
    /// Box constraint.
    pub c: f64,
    /// KKT tolerance.
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub loss: BinaryLoss,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { gamma: None, c: 1.0, tol: 1e-3, max_iter: 2_000_000, loss: BinaryLoss::Hinge }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rbf {
    pub gamma: f64,
}

impl Rbf {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-self.gamma * d2).exp()
    }
}

/// Solution of one binary problem over the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

struct KernelRows<'a> {
    x: &'a Table,
    kernel: Rbf,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a Table, kernel: Rbf) -> Self {
        let capacity = (CACHE_VALUES / x.n_rows().max(1)).max(2);
        KernelRows { x, kernel, rows: HashMap::new(), order: VecDeque::new(), capacity }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = self.x.row(i);
            let row = self.x.rows().map(|xj| self.kernel.eval(xi, xj)).collect();
            self.rows.insert(i, row);
            self.order.push_back(i);
        }
        &self.rows[&i]
    }
}

/// Soft-margin dual with labels `y` in {-1, +1}; decision value
/// `sum_i alpha_i y_i K(x_i, x) - rho`.
pub fn solve_binary(x: &Table, y: &[f64], kernel: Rbf, c: f64, tol: f64, max_iter: usize) -> Result<BinarySolution> {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut cache = KernelRows::new(x, kernel);
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // i maximizes -y G over the "up" set.
        let (mut g_max, mut i_sel) = (f64::NEG_INFINITY, usize::MAX);
        for t in 0..n {
            let can_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if can_up && -y[t] * grad[t] >= g_max {
                g_max = -y[t] * grad[t];
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            break;
        }
        let i = i_sel;
        let k_i = cache.row(i).to_vec();
        let (mut g_max2, mut j_sel, mut best) = (f64::NEG_INFINITY, usize::MAX, f64::INFINITY);
        for t in 0..n {
            let can_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !can_low {
                continue;
            }
            let v = y[t] * grad[t];
            g_max2 = g_max2.max(v);
            let diff = g_max + v;
            if diff > 0.0 {
                let quad = (2.0 - 2.0 * k_i[t]).max(TAU);
                let obj = -diff * diff / quad;
                if obj <= best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if g_max + g_max2 < tol || j_sel == usize::MAX {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence { iterations, residual: g_max + g_max2 });
        }
        iterations += 1;
        let j = j_sel;
        let k_j = cache.row(j).to_vec();
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let q_ij = y[i] * y[j] * k_i[j];
        if y[i] != y[j] {
            let quad = (2.0 + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else {
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            }
        } else {
            let quad = (2.0 - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (d_i, d_j) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k_i[t] * d_i + y[j] * k_j[t] * d_j);
        }
    }

    let (mut ub, mut lb, mut free_sum, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free_sum += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 { free_sum / n_free as f64 } else { (ub + lb) / 2.0 };
    Ok(BinarySolution { alpha, rho, iterations })
}

/// One-vs-all bank over shared support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Rbf,
    pub loss: BinaryLoss,
    pub support: Table,
    /// Per learner, `alpha_i y_i` for each support row.
    pub coef: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
}

impl SvmModel {
    pub fn n_classes(&self) -> usize {
        self.rho.len()
    }

    /// Decision value of every binary learner.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let k: Vec<f64> = self.support.rows().map(|s| self.kernel.eval(s, x)).collect();
        self.coef
            .iter()
            .zip(&self.rho)
            .map(|(c, rho)| c.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() - rho)
            .collect()
    }

    /// One-vs-all code word of class `c`.
    pub fn code(&self, c: usize, learner: usize) -> f64 {
        if c == learner { 1.0 } else { -1.0 }
    }

    /// Class whose code word has the smallest aggregated loss; lowest index on ties.
    pub fn decode(&self, scores: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.n_classes() {
            let loss: f64 = scores.iter().enumerate().map(|(l, &s)| self.loss.eval(self.code(c, l), s)).sum();
            if loss < best.1 {
                best = (c, loss);
            }
        }
        best.0
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        self.decode(&self.scores(x))
    }
}

/// Learner with the largest decision value.
pub fn argmax_decode(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// `1 / (p * mean per-feature variance)`.
pub fn default_gamma(x: &Table) -> f64 {
    let n = x.n_rows().max(1) as f64;
    let p = x.n_cols;
    let mut var = 0.0;
    for j in 0..p {
        let mean = x.rows().map(|r| r[j]).sum::<f64>() / n;
        var += x.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
    }
    let mean_var = var / p as f64;
    if mean_var > 0.0 { 1.0 / (p as f64 * mean_var) } else { 1.0 }
}

pub fn fit(x: &Table, y: &[usize], n_classes: usize, params: &SvmParams) -> Result<SvmModel> {
    if n_classes < 2 {
        return Err(Error::Training("svm needs at least two classes".into()));
    }
    if !(params.c > 0.0 && params.tol > 0.0) {
        return Err(Error::InvalidParameter("svm box constraint and tolerance must be positive".into()));
    }
    let gamma = params.gamma.unwrap_or_else(|| default_gamma(x));
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("kernel width must be positive, got {gamma}")));
    }
    let kernel = Rbf { gamma };
    let solutions: Vec<BinarySolution> = (0..n_classes)
        .into_par_iter()
        .map(|c| {
            let yc: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            solve_binary(x, &yc, kernel, params.c, params.tol, params.max_iter)
        })
        .collect::<Result<_>>()?;

    let support_idx: Vec<usize> = (0..y.len()).filter(|&i| solutions.iter().any(|s| s.alpha[i] > 0.0)).collect();
    let coef = solutions
        .iter()
        .enumerate()
        .map(|(c, s)| support_idx.iter().map(|&i| s.alpha[i] * if y[i] == c { 1.0 } else { -1.0 }).collect())
        .collect();
    Ok(SvmModel {
        kernel,
        loss: params.loss,
        support: x.select(&support_idx),
        coef,
        rho: solutions.iter().map(|s| s.rho).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_blobs() -> (Table, Vec<usize>) {
        let centers = [(-1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (1.0, -1.0)];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (c, (cx, cy)) in centers.iter().enumerate() {
            for k in 0..10 {
                let a = k as f64 * 0.628;
                rows.push([cx + 0.2 * a.cos(), cy + 0.2 * a.sin()]);
                y.push(c);
            }
        }
        (Table::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn xor_pattern_is_learned_exactly() {
        let (x, y) = xor_blobs();
        let params = SvmParams { gamma: Some(2.0), c: 10.0, ..SvmParams::default() };
        let m = fit(&x, &y, 4, &params).unwrap();
        for (r, &c) in x.rows().zip(&y) {
            assert_eq!(m.predict(r), c);
        }
    }

    #[test]
    fn two_point_problem_matches_closed_form() {
        let x = Table::from_rows(&[[-0.5, 0.0], [0.5, 0.0]]).unwrap();
        let gamma = 0.7;
        let s = solve_binary(&x, &[-1.0, 1.0], Rbf { gamma }, 1e6, 1e-10, 1000).unwrap();
        let k = (-gamma * 1.0f64).exp();
        let alpha = 1.0 / (1.0 - k);
        assert!((s.alpha[0] - alpha).abs() < 1e-8 && (s.alpha[1] - alpha).abs() < 1e-8);
        assert!(s.rho.abs() < 1e-9);
        let w_norm2 = alpha * alpha * (2.0 - 2.0 * k);
        let margin = 1.0 / w_norm2.sqrt();
        assert!(margin >= ((1.0 - k) / 2.0).sqrt() - 1e-9);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Table::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(fit(&x, &[0, 0], 1, &SvmParams::default()).is_err());
    }

    #[test]
    fn iteration_budget_is_reported() {
        let (x, y) = xor_blobs();
        let yb: Vec<f64> = y.iter().map(|&c| if c < 2 { 1.0 } else { -1.0 }).collect();
        match solve_binary(&x, &yb, Rbf { gamma: 2.0 }, 10.0, 1e-3, 1) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
