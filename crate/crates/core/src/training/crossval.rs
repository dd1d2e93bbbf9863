use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_vocab, train, TrainConfig};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::recast::TripletDataset;

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first
/// `n mod k` folds hold one extra index.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::validation("k must be at least 2"));
    }
    if n < k {
        return Err(Error::contract(format!("{n} items cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub xi: f64,
    pub fold: usize,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub best_xi: f64,
    pub folds: Vec<FoldResult>,
    /// `(xi, mean dev accuracy)` in grid order.
    pub means: Vec<(f64, f64)>,
}

impl CrossValReport {
    /// `xi,fold,dev_accuracy` followed by `xi,mean,<value>` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("xi,fold,dev_accuracy\n");
        for r in &self.folds {
            let _ = writeln!(out, "{},{},{}", r.xi, r.fold, r.dev_accuracy);
        }
        for (xi, mean) in &self.means {
            let _ = writeln!(out, "{xi},mean,{mean}");
        }
        out
    }
}

/// Picks ξ by k-fold cross-validation of margin training.
///
/// Each fold trains on the other `k - 1` folds with a vocabulary built from
/// them and scores the best checkpoint's accuracy on the held-out fold.
/// Ties in mean accuracy go to the smallest ξ.
pub fn crossval_margin(dataset: &TripletDataset, k: usize, grid: &[f64], base: &TrainConfig) -> Result<CrossValReport> {
    if grid.is_empty() {
        return Err(Error::validation("the xi grid is empty"));
    }
    for &xi in grid {
        Objective::margin(xi)?;
    }
    let folds = kfold_partition(dataset.len(), k, base.seed)?;
    if grid.len() == 1 {
        let xi = grid[0];
        return Ok(CrossValReport { best_xi: xi, folds: Vec::new(), means: vec![(xi, f64::NAN)] });
    }

    let mut results = Vec::new();
    let mut means = Vec::new();
    for &xi in grid {
        let config = TrainConfig { objective: Objective::Margin { xi }, ..base.clone() };
        let mut total = 0.0;
        for (f, held_out) in folds.iter().enumerate() {
            let train_idx: Vec<usize> =
                folds.iter().enumerate().filter(|&(g, _)| g != f).flat_map(|(_, fold)| fold.iter().copied()).collect();
            let train_set = dataset.select(&train_idx);
            let dev_set = dataset.select(held_out);
            let vocab = build_vocab(&train_set, config.min_freq)?;
            let outcome = train(&train_set, &dev_set, &vocab, &config).map_err(|failure| failure.error)?;
            let acc = outcome.history.best_record().map_or(0.0, |r| r.dev_accuracy);
            total += acc;
            results.push(FoldResult { xi, fold: f, dev_accuracy: acc });
        }
        means.push((xi, total / k as f64));
    }
    let best_xi = means
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
        .map(|(xi, _)| xi)
        .expect("grid is nonempty");
    Ok(CrossValReport { best_xi, folds: results, means })
}
