//! CART classification trees with Gini splits, and bagged forests of them.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Bag size as a fraction of the training set; `None` trains every tree
    /// on the full set.
    pub bootstrap_fraction: Option<f64>,
    /// Candidate features per split; `None` means `round(sqrt(p))`.
    pub features_per_split: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            bootstrap_fraction: Some(1.0),
            features_per_split: None,
            min_leaf: 5,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Features examined per split; all when `>= p`.
    pub max_features: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { class: usize },
    /// `x[feature] <= threshold` goes to `left`.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// `sum_c n_c^2 / n`; larger means purer.
fn purity(counts: &[usize], n: usize) -> f64 {
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn best_split(x: &Table, y: &[usize], idx: &mut [usize], features: &[usize], n_classes: usize, min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    let mut total = vec![0usize; n_classes];
    idx.iter().for_each(|&i| total[y[i]] += 1);
    let mut best: Option<Split> = None;
    for &f in features {
        idx.sort_by(|&a, &b| x.row(a)[f].total_cmp(&x.row(b)[f]).then(a.cmp(&b)));
        let mut left = vec![0usize; n_classes];
        for pos in 0..n - 1 {
            left[y[idx[pos]]] += 1;
            let n_left = pos + 1;
            if n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let (v, next) = (x.row(idx[pos])[f], x.row(idx[pos + 1])[f]);
            if next <= v {
                continue;
            }
            let right_sq: usize = total.iter().zip(&left).map(|(t, l)| (t - l) * (t - l)).sum();
            let score = purity(&left, n_left) + right_sq as f64 / (n - n_left) as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Split { feature: f, threshold: 0.5 * (v + next), score });
            }
        }
    }
    best
}

impl Tree {
    /// Grows a tree on the rows `idx` (repeats allowed).
    pub fn fit(x: &Table, y: &[usize], idx: &[usize], n_classes: usize, params: &TreeParams, rng: &mut Rng) -> Result<Tree> {
        if idx.is_empty() {
            return Err(Error::Training("tree needs at least one sample".into()));
        }
        let p = x.n_cols;
        let min_leaf = params.min_leaf.max(1);
        let mut nodes = vec![Node::Leaf { class: 0 }];
        let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, idx.to_vec(), 0)];
        while let Some((node, mut rows, depth)) = stack.pop() {
            let mut counts = vec![0usize; n_classes];
            rows.iter().for_each(|&i| counts[y[i]] += 1);
            let class = majority(&counts);
            let pure = counts[class] == rows.len();
            let too_deep = params.max_depth.is_some_and(|d| depth >= d);
            if pure || too_deep || rows.len() < 2 * min_leaf {
                nodes[node] = Node::Leaf { class };
                continue;
            }
            let features: Vec<usize> = if params.max_features >= p {
                (0..p).collect()
            } else {
                let mut f = sample(rng, p, params.max_features.max(1)).into_vec();
                f.sort_unstable();
                f
            };
            let split = best_split(x, y, &mut rows, &features, n_classes, min_leaf)
                .filter(|s| s.score > purity(&counts, rows.len()) + 1e-12);
            let Some(split) = split else {
                nodes[node] = Node::Leaf { class };
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.row(i)[split.feature] <= split.threshold);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { class });
            nodes.push(Node::Leaf { class });
            nodes[node] = Node::Split { feature: split.feature, threshold: split.threshold, left: li, right: ri };
            stack.push((ri, r, depth + 1));
            stack.push((li, l, depth + 1));
        }
        Ok(Tree { nodes })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag error over samples left out of at least one bag.
    pub oob_error: Option<f64>,
}

impl Forest {
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut v = vec![0; self.n_classes];
        self.trees.iter().for_each(|t| v[t.predict(x)] += 1);
        v
    }

    /// Majority vote, lowest class on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        majority(&self.votes(x))
    }
}

pub fn tree_params(params: &ForestParams, p: usize) -> TreeParams {
    TreeParams {
        max_features: params.features_per_split.unwrap_or_else(|| ((p as f64).sqrt().round() as usize).max(1)),
        min_leaf: params.min_leaf,
        max_depth: params.max_depth,
    }
}

pub fn fit(x: &Table, y: &[usize], n_classes: usize, params: &ForestParams, seed: u64) -> Result<Forest> {
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    if y.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if let Some(f) = params.bootstrap_fraction {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidParameter(format!("bootstrap fraction must be positive, got {f}")));
        }
    }
    let n = y.len();
    let tp = tree_params(params, x.n_cols);
    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &format!("tree/{t}"));
            let (bag, in_bag) = match params.bootstrap_fraction {
                Some(f) => {
                    let m = ((f * n as f64).round() as usize).max(1);
                    let bag: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
                    let mut in_bag = vec![false; n];
                    bag.iter().for_each(|&i| in_bag[i] = true);
                    (bag, in_bag)
                }
                None => ((0..n).collect(), vec![true; n]),
            };
            Ok((Tree::fit(x, y, &bag, n_classes, &tp, &mut rng)?, in_bag))
        })
        .collect::<Result<_>>()?;

    let mut oob_votes = vec![vec![0usize; n_classes]; n];
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_votes[i][tree.predict(x.row(i))] += 1;
        }
    }
    let scored: Vec<usize> = (0..n).filter(|&i| oob_votes[i].iter().any(|&v| v > 0)).collect();
    let oob_error = (!scored.is_empty())
        .then(|| scored.iter().filter(|&&i| majority(&oob_votes[i]) != y[i]).count() as f64 / scored.len() as f64);
    Ok(Forest { n_classes, trees: grown.into_iter().map(|(t, _)| t).collect(), oob_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn checker(n: usize) -> (Table, Vec<usize>) {
        let rows: Vec<[f64; 2]> = (0..n).map(|i| [(i % 10) as f64, (i / 10) as f64]).collect();
        let y = rows.iter().map(|r| ((r[0] as usize / 5) + (r[1] as usize / 5)) % 3).collect();
        (Table::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_unbagged_tree_is_plain_cart() {
        let (x, y) = checker(100);
        let params = ForestParams {
            n_trees: 1,
            bootstrap_fraction: None,
            features_per_split: Some(2),
            min_leaf: 1,
            max_depth: None,
        };
        let forest = fit(&x, &y, 3, &params, 11).unwrap();
        let tp = TreeParams { max_features: 2, min_leaf: 1, max_depth: None };
        let all: Vec<usize> = (0..y.len()).collect();
        let cart = Tree::fit(&x, &y, &all, 3, &tp, &mut rng_from(0)).unwrap();
        for i in 0..40 {
            let p = [i as f64 * 0.37 - 2.0, (i * 7 % 13) as f64 - 1.5];
            assert_eq!(forest.predict(&p), cart.predict(&p));
        }
        for (r, &c) in x.rows().zip(&y) {
            assert_eq!(cart.predict(r), c);
        }
    }

    #[test]
    fn pure_training_set_predicts_its_class() {
        let x = Table::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let forest = fit(&x, &[2, 2, 2], 3, &ForestParams::default(), 1).unwrap();
        assert_eq!(forest.predict(&[-5.0]), 2);
        assert_eq!(forest.predict(&[50.0]), 2);
    }

    #[test]
    fn depth_limit_is_respected() {
        let (x, y) = checker(100);
        let all: Vec<usize> = (0..y.len()).collect();
        let tp = TreeParams { max_features: 2, min_leaf: 1, max_depth: Some(2) };
        assert!(Tree::fit(&x, &y, &all, 3, &tp, &mut rng_from(0)).unwrap().depth() <= 2);
    }
}
