//! Pairwise accuracy and per-premise score distributions.
//!
//! Raw scores of a premise's candidates are softmax-normalized regardless of
//! the objective the model was trained with, so models trained under either
//! objective land on a common `[0, 1]` scale. The report buckets normalized
//! scores per gold level and measures how much of each level falls in the
//! open band `(0.1, 0.9)`.

mod svg;

pub use svg::render_svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::encoder::{tokenize_pair, EncoderParams, PairTokens, Vocab};
use crate::error::{Error, Result};
use crate::objectives::{softmax, CandidateSet};
use crate::recast::{CandidateGroup, TripletDataset};

/// Lower edge of the middle-mass band (exclusive).
pub const MIDDLE_LO: f64 = 0.1;
/// Upper edge of the middle-mass band (exclusive).
pub const MIDDLE_HI: f64 = 0.9;
pub const DEFAULT_BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub correct: usize,
    pub ties: usize,
    pub n: usize,
}

impl AccuracyReport {
    fn from_counts(correct: usize, ties: usize, n: usize) -> Self {
        let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
        Self { accuracy, correct, ties, n }
    }
}

/// Both sides of every triplet, tokenized once for repeated evaluation.
#[derive(Clone, Debug)]
pub struct TokenizedTriplets {
    pairs: Vec<(PairTokens, PairTokens)>,
}

impl TokenizedTriplets {
    pub fn new(dataset: &TripletDataset, vocab: &Vocab) -> Self {
        let pairs = dataset
            .triplets
            .iter()
            .map(|t| {
                let ((pp, ph), (dp, dh)) = t.scored_pairs();
                (tokenize_pair(pp, ph, vocab), tokenize_pair(dp, dh, vocab))
            })
            .collect();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Correct iff the preferred side scores strictly higher; ties are wrong.
    pub fn accuracy(&self, params: &EncoderParams) -> Result<AccuracyReport> {
        if self.pairs.is_empty() {
            return Err(Error::contract("accuracy over an empty triplet set"));
        }
        let mut correct = 0;
        let mut ties = 0;
        for (pref, disp) in &self.pairs {
            let a = params.score_pair(pref)?;
            let b = params.score_pair(disp)?;
            if a > b {
                correct += 1;
            } else if a == b {
                ties += 1;
            }
        }
        Ok(AccuracyReport::from_counts(correct, ties, self.pairs.len()))
    }
}

pub fn pairwise_accuracy(params: &EncoderParams, vocab: &Vocab, dataset: &TripletDataset) -> Result<AccuracyReport> {
    TokenizedTriplets::new(dataset, vocab).accuracy(params)
}

/// Scores every candidate of every group.
pub fn score_groups(params: &EncoderParams, vocab: &Vocab, groups: &[CandidateGroup]) -> Result<Vec<CandidateSet>> {
    groups
        .iter()
        .map(|g| {
            let scores = g
                .candidates
                .iter()
                .map(|c| {
                    let (p, h) = g.orientation.arrange(&g.shared, c);
                    params.score_pair(&tokenize_pair(p, h, vocab))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CandidateSet {
                premise_id: g.premise_id.clone(),
                scores,
                correct_index: g.correct_index,
                gold_levels: g.levels.clone(),
            })
        })
        .collect()
}

/// Per-premise softmax of raw scores, tagged with gold levels.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSet {
    pub premise_id: String,
    pub probabilities: Vec<f64>,
    pub gold_levels: Vec<u8>,
}

pub fn normalize_per_premise(sets: &[CandidateSet]) -> Vec<NormalizedSet> {
    sets.iter()
        .map(|s| NormalizedSet {
            premise_id: s.premise_id.clone(),
            probabilities: softmax(&s.scores),
            gold_levels: s.gold_levels.iter().map(|l| l.value()).collect(),
        })
        .collect()
}

/// Bin of `x` in `bins` equal-width bins over `[0, 1]`; `1.0` goes to the
/// top bin.
pub fn bin_index(x: f64, bins: usize) -> usize {
    let b = (x * bins as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelHistogram {
    pub level: u8,
    pub counts: Vec<usize>,
    pub total: usize,
    /// Fraction of this level's normalized scores in `(0.1, 0.9)`.
    pub middle_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub pairwise_accuracy: f64,
    pub n_triplets: usize,
    pub tie_count: usize,
    pub bins: usize,
    /// Ordered by ascending gold level.
    pub histograms: Vec<LevelHistogram>,
}

impl EvalReport {
    pub fn level(&self, level: u8) -> Option<&LevelHistogram> {
        self.histograms.iter().find(|h| h.level == level)
    }

    pub fn middle_mass(&self, level: u8) -> Option<f64> {
        self.level(level).map(|h| h.middle_mass)
    }
}

/// Builds the report from already-scored candidate sets.
///
/// Pairwise accuracy runs over every candidate pair with distinct gold
/// levels inside a set.
pub fn report_from_sets(sets: &[CandidateSet], bins: usize) -> Result<EvalReport> {
    if bins < 2 {
        return Err(Error::validation("at least two bins are required"));
    }
    let mut correct = 0;
    let mut ties = 0;
    let mut n = 0;
    for set in sets {
        set.validate()?;
        if set.gold_levels.len() != set.scores.len() {
            return Err(Error::contract(format!("set `{}` lacks gold levels", set.premise_id)));
        }
        for i in 0..set.scores.len() {
            for j in 0..set.scores.len() {
                if set.gold_levels[i].value() > set.gold_levels[j].value() {
                    n += 1;
                    if set.scores[i] > set.scores[j] {
                        correct += 1;
                    } else if set.scores[i] == set.scores[j] {
                        ties += 1;
                    }
                }
            }
        }
    }

    let mut per_level: BTreeMap<u8, (Vec<usize>, usize, usize)> = BTreeMap::new();
    for norm in normalize_per_premise(sets) {
        for (&p, &level) in norm.probabilities.iter().zip(&norm.gold_levels) {
            let entry = per_level.entry(level).or_insert_with(|| (vec![0; bins], 0, 0));
            entry.0[bin_index(p, bins)] += 1;
            entry.1 += 1;
            if p > MIDDLE_LO && p < MIDDLE_HI {
                entry.2 += 1;
            }
        }
    }
    let histograms = per_level
        .into_iter()
        .map(|(level, (counts, total, middle))| LevelHistogram {
            level,
            counts,
            total,
            middle_mass: if total == 0 { 0.0 } else { middle as f64 / total as f64 },
        })
        .collect();
    let acc = AccuracyReport::from_counts(correct, ties, n);
    Ok(EvalReport { pairwise_accuracy: acc.accuracy, n_triplets: n, tie_count: ties, bins, histograms })
}

pub fn distribution_report(
    params: &EncoderParams,
    vocab: &Vocab,
    groups: &[CandidateGroup],
    bins: usize,
) -> Result<EvalReport> {
    report_from_sets(&score_groups(params, vocab, groups)?, bins)
}

/// `gold_level,bin_lo,bin_hi,count`
pub fn histogram_csv(report: &EvalReport) -> String {
    let mut out = String::from("gold_level,bin_lo,bin_hi,count\n");
    for h in &report.histograms {
        for (b, count) in h.counts.iter().enumerate() {
            let lo = b as f64 / report.bins as f64;
            let hi = (b + 1) as f64 / report.bins as f64;
            let _ = writeln!(out, "{},{},{},{}", h.level, lo, hi, count);
        }
    }
    out
}

/// `metric,value`
pub fn summary_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "pairwise_accuracy,{}", report.pairwise_accuracy);
    let _ = writeln!(out, "n_triplets,{}", report.n_triplets);
    let _ = writeln!(out, "tie_count,{}", report.tie_count);
    for h in &report.histograms {
        let _ = writeln!(out, "middle_mass_level_{},{}", h.level, h.middle_mass);
    }
    out
}

/// Summary rows for a triplet-only evaluation.
pub fn accuracy_csv(acc: &AccuracyReport) -> String {
    format!(
        "metric,value\npairwise_accuracy,{}\nn_triplets,{}\ntie_count,{}\n",
        acc.accuracy, acc.n, acc.ties
    )
}
