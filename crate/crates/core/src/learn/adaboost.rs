//! Multiclass boosting of one-split decision stumps (AdaBoost.M2).
//!
//! Weights live on (sample, wrong label) pairs. A stump answers, on each
//! side of its threshold, a plausibility in {0, 1} for every class; its
//! pseudo-loss is linear in those answers, so the best answer per side and
//! class is read off prefix sums over the sorted feature values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostParams {
    /// Boosting rounds.
    pub rounds: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        AdaBoostParams { rounds: 100 }
    }
}

/// `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: Vec<bool>,
    pub right: Vec<bool>,
}

impl Stump {
    pub fn outputs(&self, x: &[f64]) -> &[bool] {
        if x[self.feature] <= self.threshold { &self.left } else { &self.right }
    }

    /// First class the stump finds plausible, class 0 when none.
    pub fn predict(&self, x: &[f64]) -> usize {
        self.outputs(x).iter().position(|&b| b).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub n_classes: usize,
    pub stumps: Vec<Stump>,
    /// `ln(1 / beta_t)` per stump.
    pub weights: Vec<f64>,
    /// Pseudo-loss of each round.
    pub pseudo_loss: Vec<f64>,
}

impl AdaBoostModel {
    pub fn votes(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes];
        for (s, w) in self.stumps.iter().zip(&self.weights) {
            for (acc, &h) in v.iter_mut().zip(s.outputs(x)) {
                if h {
                    *acc += w;
                }
            }
        }
        v
    }

    /// Class with the largest weighted vote, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let v = self.votes(x);
        let mut best = 0;
        for (c, &s) in v.iter().enumerate() {
            if s > v[best] {
                best = c;
            }
        }
        best
    }

    /// Training-error bound after each round: `(C - 1) prod 2 sqrt(e (1 - e))`.
    pub fn error_bound(&self) -> Vec<f64> {
        let mut b = (self.n_classes - 1) as f64;
        self.pseudo_loss
            .iter()
            .map(|&e| {
                b *= 2.0 * (e * (1.0 - e)).sqrt();
                b
            })
            .collect()
    }
}

const MIN_LOSS: f64 = 1e-10;

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
    left: Vec<bool>,
    right: Vec<bool>,
}

/// Best split of one feature. `d[i * C + y]` is the weight of pair (i, y),
/// zero for the true label; `q[i]` is its row sum.
fn best_split(x: &Table, y: &[usize], order: &[usize], d: &[f64], q: &[f64], c: usize, feature: usize) -> Option<Candidate> {
    let mut a_tot = vec![0.0; c];
    let mut b_tot = vec![0.0; c];
    for (i, &yi) in y.iter().enumerate() {
        for k in 0..c {
            a_tot[k] += d[i * c + k];
        }
        b_tot[yi] += q[i];
    }
    let (mut a_l, mut b_l) = (vec![0.0; c], vec![0.0; c]);
    let mut best: Option<(f64, usize)> = None;
    for pos in 0..order.len() - 1 {
        let i = order[pos];
        for k in 0..c {
            a_l[k] += d[i * c + k];
        }
        b_l[y[i]] += q[i];
        let (v, next) = (x.row(i)[feature], x.row(order[pos + 1])[feature]);
        if next <= v {
            continue;
        }
        let score: f64 = (0..c)
            .map(|k| (a_l[k] - b_l[k]).min(0.0) + ((a_tot[k] - a_l[k]) - (b_tot[k] - b_l[k])).min(0.0))
            .sum();
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, pos));
        }
    }
    let (score, pos) = best?;
    let (mut a_l, mut b_l) = (vec![0.0; c], vec![0.0; c]);
    for &i in &order[..=pos] {
        for k in 0..c {
            a_l[k] += d[i * c + k];
        }
        b_l[y[i]] += q[i];
    }
    let left = (0..c).map(|k| b_l[k] > a_l[k]).collect();
    let right = (0..c).map(|k| b_tot[k] - b_l[k] > a_tot[k] - a_l[k]).collect();
    let threshold = 0.5 * (x.row(order[pos])[feature] + x.row(order[pos + 1])[feature]);
    Some(Candidate { score, feature, threshold, left, right })
}

pub fn fit(x: &Table, y: &[usize], n_classes: usize, params: &AdaBoostParams) -> Result<AdaBoostModel> {
    if params.rounds == 0 {
        return Err(Error::InvalidParameter("adaboost needs at least one round".into()));
    }
    if n_classes < 2 || y.is_empty() {
        return Err(Error::Training("adaboost needs at least two classes".into()));
    }
    let (n, c) = (y.len(), n_classes);
    let orders: Vec<Vec<usize>> = (0..x.n_cols)
        .into_par_iter()
        .map(|f| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| x.row(a)[f].total_cmp(&x.row(b)[f]).then(a.cmp(&b)));
            o
        })
        .collect();

    let mut d = vec![1.0 / (n * (c - 1)) as f64; n * c];
    for (i, &yi) in y.iter().enumerate() {
        d[i * c + yi] = 0.0;
    }
    let mut model = AdaBoostModel { n_classes: c, stumps: Vec::new(), weights: Vec::new(), pseudo_loss: Vec::new() };
    for _ in 0..params.rounds {
        let total: f64 = d.iter().sum();
        d.iter_mut().for_each(|w| *w /= total);
        let q: Vec<f64> = d.chunks_exact(c).map(|r| r.iter().sum()).collect();
        let best = orders
            .par_iter()
            .enumerate()
            .filter_map(|(f, o)| best_split(x, y, o, &d, &q, c, f))
            .min_by(|a, b| a.score.total_cmp(&b.score).then(a.feature.cmp(&b.feature)));
        let Some(best) = best else { break };
        let loss = (0.5 * (1.0 + best.score)).max(MIN_LOSS);
        if loss >= 0.5 {
            break;
        }
        let beta = loss / (1.0 - loss);
        let stump = Stump { feature: best.feature, threshold: best.threshold, left: best.left, right: best.right };
        for i in 0..n {
            let h = stump.outputs(x.row(i));
            let hy = h[y[i]] as u8 as f64;
            for k in (0..c).filter(|&k| k != y[i]) {
                d[i * c + k] *= beta.powf(0.5 * (1.0 + hy - h[k] as u8 as f64));
            }
        }
        model.stumps.push(stump);
        model.weights.push((1.0 / beta).ln());
        model.pseudo_loss.push(loss);
        if loss <= MIN_LOSS {
            break;
        }
    }
    if model.stumps.is_empty() {
        return Err(Error::Training("no stump beats chance".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_data_is_separated_in_one_round() {
        let x = Table::from_rows(&[[0.1], [0.4], [0.3], [0.9], [0.7], [0.8]]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let m = fit(&x, &y, 2, &AdaBoostParams { rounds: 1 }).unwrap();
        assert_eq!(m.stumps.len(), 1);
        for (r, &c) in x.rows().zip(&y) {
            assert_eq!(m.predict(r), c);
        }
        assert!((m.stumps[0].threshold - 0.55).abs() < 1e-12);
    }

    #[test]
    fn single_round_equals_its_stump() {
        let rows: Vec<[f64; 2]> = (0..60).map(|i| [(i * 37 % 60) as f64, (i * 11 % 13) as f64]).collect();
        let y: Vec<usize> = (0..60).map(|i| (i * 37 % 60) / 20).collect();
        let x = Table::from_rows(&rows).unwrap();
        let m = fit(&x, &y, 3, &AdaBoostParams { rounds: 1 }).unwrap();
        for r in x.rows() {
            assert_eq!(m.predict(r), m.stumps[0].predict(r));
        }
    }

    #[test]
    fn bound_never_increases() {
        let rows: Vec<[f64; 3]> = (0..90).map(|i| [(i % 7) as f64, (i * 13 % 17) as f64, (i / 30) as f64 + 0.1 * (i % 5) as f64]).collect();
        let y: Vec<usize> = (0..90).map(|i| (i / 30 + i % 2) % 3).collect();
        let m = fit(&Table::from_rows(&rows).unwrap(), &y, 3, &AdaBoostParams { rounds: 30 }).unwrap();
        let b = m.error_bound();
        assert!(b.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
