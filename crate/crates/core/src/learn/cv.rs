//! K-fold cross-validation with folds over trials, so windows of one trial
//! never sit on both sides.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, ModelConfig, TrainSet};
use crate::error::{Error, Result};
use crate::eval::window_confusion;
use crate::dataset::{LabeledWindow, Stage, WindowSource};
use crate::rng::rng_for;
use crate::trial::Participant;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Label used to stratify a group: its most frequent non-idle label, 0 if none.
fn group_stratum(labels: &[u8]) -> u8 {
    let mut counts = [0usize; 256];
    labels.iter().filter(|&&l| l != 0).for_each(|&l| counts[l as usize] += 1);
    (1..256).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).filter(|&l| counts[l] > 0).unwrap_or(0) as u8
}

fn folds_from_assignment(set: &TrainSet, group_fold: &BTreeMap<&str, usize>, k: usize) -> Vec<Fold> {
    (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..set.len()).partition(|&i| group_fold[set.groups[i].as_str()] == f);
            Fold { train, test }
        })
        .collect()
}

fn covers_all_classes(set: &TrainSet, folds: &[Fold]) -> bool {
    let labels = set.labels();
    folds.iter().all(|f| {
        [&f.train, &f.test].iter().all(|side| {
            let mut seen: Vec<u8> = side.iter().map(|&i| set.y[i]).collect();
            seen.sort_unstable();
            seen.dedup();
            seen == labels
        })
    })
}

/// `k` folds over the distinct groups, dealt in a seeded order. If a class
/// is missing from some fold, groups are re-dealt stratum by stratum.
pub fn group_folds(set: &TrainSet, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut groups: Vec<&str> = set.groups.iter().map(String::as_str).collect();
    groups.sort_unstable();
    groups.dedup();
    if k < 2 || groups.len() < k {
        return Err(Error::InvalidParameter(format!("{k} folds need at least {k} trials, found {}", groups.len())));
    }
    groups.shuffle(&mut rng_for(seed, "cv/groups"));
    let assign: BTreeMap<&str, usize> = groups.iter().enumerate().map(|(i, g)| (*g, i % k)).collect();
    let folds = folds_from_assignment(set, &assign, k);
    if covers_all_classes(set, &folds) {
        return Ok(folds);
    }

    let mut labels_of: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for (g, &l) in set.groups.iter().zip(&set.y) {
        labels_of.entry(g.as_str()).or_default().push(l);
    }
    let mut strata: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for g in &groups {
        strata.entry(group_stratum(&labels_of[g])).or_default().push(g);
    }
    let mut assign = BTreeMap::new();
    let mut next = 0;
    for members in strata.values() {
        for g in members {
            assign.insert(*g, next % k);
            next += 1;
        }
    }
    let folds = folds_from_assignment(set, &assign, k);
    if !covers_all_classes(set, &folds) {
        log::warn!("stratified folds still miss a class in some fold");
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_macro_f1: Vec<f64>,
    pub mean_macro_f1: f64,
}

fn as_windows(set: &TrainSet, idx: &[usize]) -> Vec<LabeledWindow> {
    idx.iter()
        .map(|&i| LabeledWindow {
            features: set.x.row(i).to_vec(),
            label: set.y[i],
            stage: Stage::Uniform,
            source: WindowSource { trial_id: set.groups[i].clone(), participant: Participant::P1, t_end: 0.0 },
        })
        .collect()
}

/// Goal-class macro-F1 of `cfg` on each held-out fold.
pub fn cross_validate(set: &TrainSet, fingerprint: &str, cfg: &ModelConfig, k: usize, seed: u64) -> Result<CvReport> {
    let folds = group_folds(set, k, seed)?;
    let n_classes = set.labels().last().map_or(0, |&l| l as usize + 1);
    let fold_macro_f1: Vec<f64> = folds
        .par_iter()
        .map(|f| {
            let model = train(&set.subset(&f.train), fingerprint, cfg)?;
            let cm = window_confusion(&model, &as_windows(set, &f.test), n_classes)?;
            Ok(cm.scores()?.macro_f1)
        })
        .collect::<Result<_>>()?;
    let mean_macro_f1 = fold_macro_f1.iter().sum::<f64>() / fold_macro_f1.len() as f64;
    Ok(CvReport { fold_macro_f1, mean_macro_f1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::Table;

    fn toy(n_groups: usize) -> TrainSet {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        for g in 0..n_groups {
            for w in 0..6 {
                let label = if w < 3 { 0 } else { (g % 3 + 1) as u8 };
                rows.push(vec![label as f64 + 0.01 * w as f64, g as f64]);
                y.push(label);
                groups.push(format!("g{g:02}"));
            }
        }
        TrainSet { x: Table::from_rows(&rows).unwrap(), y, groups }
    }

    #[test]
    fn folds_partition_groups() {
        let set = toy(23);
        let folds = group_folds(&set, 5, 7).unwrap();
        let mut seen = vec![0; set.len()];
        for f in &folds {
            f.test.iter().for_each(|&i| seen[i] += 1);
            let test_groups: Vec<&String> = f.test.iter().map(|&i| &set.groups[i]).collect();
            assert!(f.train.iter().all(|&i| !test_groups.contains(&&set.groups[i])));
            assert_eq!(f.train.len() + f.test.len(), set.len());
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn too_few_groups_is_an_error() {
        assert!(group_folds(&toy(3), 5, 1).is_err());
    }
}
