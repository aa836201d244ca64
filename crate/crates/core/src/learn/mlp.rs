//! Two-hidden-layer ReLU network with a softmax output, trained on mean
//! cross-entropy by L-BFGS.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lbfgs::{self, LbfgsParams, LbfgsReport};
use super::Table;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Layer widths `n0 -> n1 -> n2 -> n_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub n_out: usize,
}

pub const WIDTH_FACTOR_RANGE: (f64, f64) = (2.0 / 3.0, 2.0);

impl MlpShape {
    /// `n1 = round(a1 n0)`, `n2 = round(a2 n1)`.
    pub fn from_factors(n0: usize, alpha1: f64, alpha2: f64, n_out: usize) -> Result<Self> {
        let (lo, hi) = WIDTH_FACTOR_RANGE;
        for a in [alpha1, alpha2] {
            if !(a >= lo - 1e-12 && a <= hi + 1e-12) {
                return Err(Error::InvalidParameter(format!("width factor {a} outside [{lo:.3}, {hi}]")));
            }
        }
        if n0 == 0 || n_out < 2 {
            return Err(Error::InvalidParameter("network needs inputs and at least two outputs".into()));
        }
        let n1 = ((alpha1 * n0 as f64).round() as usize).max(1);
        let n2 = ((alpha2 * n1 as f64).round() as usize).max(1);
        Ok(MlpShape { n0, n1, n2, n_out })
    }

    /// Connections between layers, biases excluded.
    pub fn n_weights(&self) -> usize {
        self.n0 * self.n1 + self.n1 * self.n2 + self.n2 * self.n_out
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.n1 + self.n2 + self.n_out
    }

    // Offsets into the flat parameter vector: W1, b1, W2, b2, W3, b3.
    fn offsets(&self) -> [usize; 6] {
        let w1 = 0;
        let b1 = w1 + self.n1 * self.n0;
        let w2 = b1 + self.n1;
        let b2 = w2 + self.n2 * self.n1;
        let w3 = b2 + self.n2;
        let b3 = w3 + self.n_out * self.n2;
        [w1, b1, w2, b2, w3, b3]
    }

    fn is_weight(&self, k: usize) -> bool {
        let [_, b1, w2, b2, w3, b3] = self.offsets();
        k < b1 || (w2..b2).contains(&k) || (w3..b3).contains(&k)
    }
}

/// Closed-form connection count `n0^2 (a1 + a1^2 a2) + a1 a2 n0 n_out`,
/// exact when the widths need no rounding.
pub fn connection_count(n0: usize, alpha1: f64, alpha2: f64, n_out: usize) -> f64 {
    let n0 = n0 as f64;
    n0 * n0 * (alpha1 + alpha1 * alpha1 * alpha2) + alpha1 * alpha2 * n0 * n_out as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub alpha1: f64,
    pub alpha2: f64,
    /// L2 penalty on connection weights.
    pub l2: f64,
    pub max_restarts: usize,
    pub lbfgs: LbfgsParams,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams { alpha1: 2.0, alpha2: 1.0, l2: 1e-4, max_restarts: 3, lbfgs: LbfgsParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub shape: MlpShape,
    pub params: Vec<f64>,
    pub report: LbfgsReport,
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|a| *a = a.max(0.0));
}

/// Softmax in place; returns log-sum-exp.
fn softmax(z: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    z.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
    m + s.ln()
}

struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

fn forward(shape: &MlpShape, p: &[f64], x: &[f64]) -> (Activations, f64) {
    let [w1, b1, w2, b2, w3, b3] = shape.offsets();
    let mut h1 = vec![0.0; shape.n1];
    dense(&p[w1..b1], &p[b1..w2], x, &mut h1);
    relu(&mut h1);
    let mut h2 = vec![0.0; shape.n2];
    dense(&p[w2..b2], &p[b2..w3], &h1, &mut h2);
    relu(&mut h2);
    let mut out = vec![0.0; shape.n_out];
    dense(&p[w3..b3], &p[b3..], &h2, &mut out);
    let lse = softmax(&mut out);
    (Activations { h1, h2, out }, lse)
}

/// Class probabilities for `x`.
pub fn probabilities(shape: &MlpShape, params: &[f64], x: &[f64]) -> Vec<f64> {
    forward(shape, params, x).0.out
}

const CHUNK: usize = 256;

/// Mean cross-entropy plus `l2 / 2 * |W|^2`, with its gradient.
pub fn loss_and_grad(shape: &MlpShape, p: &[f64], x: &Table, y: &[usize], l2: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let [w1, b1, w2, b2, w3, b3] = shape.offsets();
    let partial: Vec<(f64, Vec<f64>)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|rows| {
            let mut g = vec![0.0; p.len()];
            let mut loss = 0.0;
            for &i in rows {
                let xi = x.row(i);
                let (a, _) = forward(shape, p, xi);
                loss -= a.out[y[i]].max(1e-300).ln();
                let mut d3 = a.out.clone();
                d3[y[i]] -= 1.0;
                for (o, &d) in d3.iter().enumerate() {
                    g[b3 + o] += d;
                    for (k, &h) in a.h2.iter().enumerate() {
                        g[w3 + o * shape.n2 + k] += d * h;
                    }
                }
                let mut d2 = vec![0.0; shape.n2];
                for (k, dk) in d2.iter_mut().enumerate() {
                    if a.h2[k] > 0.0 {
                        *dk = d3.iter().enumerate().map(|(o, d)| d * p[w3 + o * shape.n2 + k]).sum();
                    }
                }
                for (k, &d) in d2.iter().enumerate() {
                    g[b2 + k] += d;
                    for (j, &h) in a.h1.iter().enumerate() {
                        g[w2 + k * shape.n1 + j] += d * h;
                    }
                }
                let mut d1 = vec![0.0; shape.n1];
                for (j, dj) in d1.iter_mut().enumerate() {
                    if a.h1[j] > 0.0 {
                        *dj = d2.iter().enumerate().map(|(k, d)| d * p[w2 + k * shape.n1 + j]).sum();
                    }
                }
                for (j, &d) in d1.iter().enumerate() {
                    g[b1 + j] += d;
                    for (m, &v) in xi.iter().enumerate() {
                        g[w1 + j * shape.n0 + m] += d * v;
                    }
                }
            }
            (loss, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (l, g) in partial {
        loss += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / n.max(1) as f64;
    loss *= inv;
    grad.iter_mut().for_each(|v| *v *= inv);
    if l2 > 0.0 {
        for k in (0..p.len()).filter(|&k| shape.is_weight(k)) {
            loss += 0.5 * l2 * p[k] * p[k];
            grad[k] += l2 * p[k];
        }
    }
    debug_assert_eq!(b3 + shape.n_out, p.len());
    (loss, grad)
}

/// Uniform in `+-1/sqrt(fan_in)` for weights, zero biases.
pub fn initial_params(shape: &MlpShape, seed: u64, attempt: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, &format!("mlp/init/{attempt}"));
    let [w1, b1, w2, b2, w3, b3] = shape.offsets();
    let mut p = vec![0.0; shape.n_params()];
    for (range, fan_in) in [(w1..b1, shape.n0), (w2..b2, shape.n1), (w3..b3, shape.n2)] {
        let r = 1.0 / (fan_in as f64).sqrt();
        for v in &mut p[range] {
            *v = rng.random_range(-r..r);
        }
    }
    p
}

impl MlpModel {
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        probabilities(&self.shape, &self.params, x)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.probabilities(x);
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        best
    }
}

pub fn fit(x: &Table, y: &[usize], n_classes: usize, params: &MlpParams, seed: u64) -> Result<MlpModel> {
    if y.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let shape = MlpShape::from_factors(x.n_cols, params.alpha1, params.alpha2, n_classes)?;
    let mut last_err = None;
    for attempt in 0..=params.max_restarts {
        let p0 = initial_params(&shape, seed, attempt);
        match lbfgs::minimize(|p| loss_and_grad(&shape, p, x, y, params.l2), p0, &params.lbfgs) {
            Ok((p, report)) => return Ok(MlpModel { shape, params: p, report }),
            Err(e) => {
                log::warn!("mlp training attempt {attempt} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Training("mlp training failed".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn documented_connection_count() {
        let s = MlpShape::from_factors(4, 2.0, 1.0, 4).unwrap();
        assert_eq!((s.n1, s.n2), (8, 8));
        assert_eq!(s.n_weights(), 128);
        assert!((connection_count(4, 2.0, 1.0, 4) - 128.0).abs() < 1e-9);
    }

    #[test]
    fn width_factors_are_bounded() {
        assert!(MlpShape::from_factors(4, 0.5, 1.0, 4).is_err());
        assert!(MlpShape::from_factors(4, 1.0, 2.5, 4).is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let shape = MlpShape::from_factors(3, 1.5, 1.0, 4).unwrap();
        let p = initial_params(&shape, 2, 0);
        let mut rng = rng_from(8);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
            let s: f64 = probabilities(&shape, &p, &x).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn learns_separable_blobs() {
        let rows: Vec<[f64; 2]> = (0..60).map(|i| {
            let c = (i % 3) as f64;
            [c * 3.0 + (i % 5) as f64 * 0.1, -c * 2.0 + (i % 7) as f64 * 0.1]
        }).collect();
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let x = Table::from_rows(&rows).unwrap();
        let m = fit(&x, &y, 3, &MlpParams::default(), 5).unwrap();
        assert!(x.rows().zip(&y).all(|(r, &c)| m.predict(r) == c));
    }
}
