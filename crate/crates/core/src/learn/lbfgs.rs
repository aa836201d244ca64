//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsParams {
    /// Correction pairs kept.
    pub history: usize,
    pub max_iter: usize,
    /// Stop when the gradient's infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of f falls below this.
    pub f_tol: f64,
    /// Sufficient decrease.
    pub c1: f64,
    /// Curvature.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        LbfgsParams { history: 10, max_iter: 400, grad_tol: 1e-5, f_tol: 1e-10, c1: 1e-4, c2: 0.9, max_line_search: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point {
    a: f64,
    f: f64,
    d: f64,
    g: Vec<f64>,
}

/// Minimizer of the cubic through (a, fa, da) and (b, fb, db), kept inside
/// the middle 80% of the bracket; bisection when the cubic is degenerate.
fn cubic_step(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.a, hi.a);
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.d * hi.d;
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    let mid = 0.5 * (a + b);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    if t.is_finite() && t > left + margin && t < right - margin { t } else { mid }
}

/// Minimizes `f` (returning value and gradient) from `x0`. When a line
/// search cannot satisfy the strong Wolfe conditions the run stops at the
/// current iterate, reported as not converged; failing on the very first
/// step is an error.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, params: &LbfgsParams) -> Result<(Vec<f64>, LbfgsReport)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.history);
    let report = |it, ev, fx, g: &[f64], converged| LbfgsReport {
        iterations: it,
        evaluations: ev,
        f: fx,
        grad_norm: inf_norm(g),
        converged,
    };
    if !fx.is_finite() {
        return Err(Error::Training("objective is not finite at the starting point".into()));
    }

    for it in 0..params.max_iter {
        if inf_norm(&g) <= params.grad_tol {
            return Ok((x, report(it, evaluations, fx, &g, true)));
        }
        // Two-loop recursion for p = -H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let scale = pairs.back().map_or(1.0 / inf_norm(&g).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= scale);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut p: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut d0 = dot(&g, &p);
        if !(d0 < 0.0) {
            pairs.clear();
            p = g.iter().map(|v| -v).collect();
            d0 = dot(&g, &p);
        }

        let at = |a: f64| -> Vec<f64> { x.iter().zip(&p).map(|(xi, pi)| xi + a * pi).collect() };
        let mut eval = |a: f64| -> Point {
            let (fa, ga) = f(&at(a));
            evaluations += 1;
            let d = dot(&ga, &p);
            Point { a, f: fa, d, g: ga }
        };
        let sufficient = |pt: &Point| pt.f.is_finite() && pt.f <= fx + params.c1 * pt.a * d0;
        let curvature = |pt: &Point| pt.d.abs() <= -params.c2 * d0;

        let mut prev = Point { a: 0.0, f: fx, d: d0, g: g.clone() };
        let mut a = 1.0;
        let mut found: Option<Point> = None;
        let mut bracket: Option<(Point, Point)> = None;
        for i in 0..params.max_line_search {
            let cur = eval(a);
            if !sufficient(&cur) || (i > 0 && cur.f >= prev.f) {
                bracket = Some((prev, cur));
                break;
            }
            if curvature(&cur) {
                found = Some(cur);
                break;
            }
            if cur.d >= 0.0 {
                bracket = Some((cur, prev));
                break;
            }
            a *= 2.0;
            prev = cur;
        }
        if let Some((mut lo, mut hi)) = bracket {
            for _ in 0..params.max_line_search {
                let cur = eval(cubic_step(&lo, &hi));
                if !sufficient(&cur) || cur.f >= lo.f {
                    hi = cur;
                } else {
                    if curvature(&cur) {
                        found = Some(cur);
                        break;
                    }
                    if cur.d * (hi.a - lo.a) >= 0.0 {
                        hi = lo;
                    }
                    lo = cur;
                }
                if (hi.a - lo.a).abs() < 1e-16 {
                    break;
                }
            }
        }
        let Some(step) = found else {
            if it == 0 {
                return Err(Error::Training(format!("line search failed at the start (f = {fx:.6e})")));
            }
            log::debug!("line search stalled at iteration {it} (f = {fx:.6e})");
            return Ok((x, report(it, evaluations, fx, &g, false)));
        };

        let x_new = at(step.a);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(1e-300) {
            if pairs.len() == params.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - step.f;
        x = x_new;
        fx = step.f;
        g = step.g;
        if decrease.abs() <= params.f_tol * fx.abs().max(1.0) {
            return Ok((x, report(it + 1, evaluations, fx, &g, true)));
        }
    }
    Ok((x, report(params.max_iter, evaluations, fx, &g, false)))
}
