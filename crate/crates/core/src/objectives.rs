//! Training objectives as pure functions of scores.
//!
//! * `Log`: softmax over a premise's candidates, loss `-ln p(correct)`.
//! * `Margin(ξ)`: hinge `max(0, ξ - F(p,h) + F(p,h'))` per ranked pair.
//!
//! Batch losses are means over units for both objectives.

use serde::{Deserialize, Serialize};

use crate::corpus::PlausibilityLevel;
use crate::error::{Error, Result};

/// Scored candidates of one premise.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub premise_id: String,
    pub scores: Vec<f64>,
    pub correct_index: usize,
    pub gold_levels: Vec<PlausibilityLevel>,
}

impl CandidateSet {
    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::contract(format!("candidate set `{}` is empty", self.premise_id)));
        }
        if self.correct_index >= self.scores.len() {
            return Err(Error::contract(format!(
                "candidate set `{}`: correct index {} out of range",
                self.premise_id, self.correct_index
            )));
        }
        if !self.gold_levels.is_empty() && self.gold_levels.len() != self.scores.len() {
            return Err(Error::contract(format!(
                "candidate set `{}`: gold levels not parallel to scores",
                self.premise_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    Log,
    Margin { xi: f64 },
}

impl Objective {
    pub fn margin(xi: f64) -> Result<Self> {
        let obj = Objective::Margin { xi };
        obj.validate()?;
        Ok(obj)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Margin { xi } if !(xi > 0.0 && xi.is_finite()) => {
                Err(Error::validation(format!("margin xi must be positive, got {xi}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Log => "log",
            Objective::Margin { .. } => "margin",
        }
    }
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns the loss and `dLoss/dF_i = p_i - [i = correct]`.
pub fn softmax_log_loss(set: &CandidateSet) -> Result<(f64, Vec<f64>)> {
    set.validate()?;
    if let Some(s) = set.scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::numeric(&set.premise_id, format!("non-finite score {s}")));
    }
    let max = set.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = set.scores.iter().map(|s| (s - max).exp()).sum();
    let log_norm = max + total.ln();
    let loss = log_norm - set.scores[set.correct_index];
    let mut grad: Vec<f64> = set.scores.iter().map(|s| (s - log_norm).exp()).collect();
    // p_c - 1 as minus the mass of the others, free of cancellation
    grad[set.correct_index] = -grad
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != set.correct_index)
        .map(|(_, p)| p)
        .sum::<f64>();
    Ok((loss, grad))
}

/// Hinge on one ranked pair. The derivative at the exact kink is zero.
pub fn margin_pair_loss(score_pref: f64, score_disp: f64, xi: f64) -> Result<(f64, (f64, f64))> {
    if xi.is_nan() || xi <= 0.0 {
        return Err(Error::contract(format!("margin xi must be positive, got {xi}")));
    }
    if !score_pref.is_finite() || !score_disp.is_finite() {
        return Err(Error::numeric("pair", format!("non-finite scores ({score_pref}, {score_disp})")));
    }
    // sign of `xi - diff` is exact, so loss == 0 iff diff >= xi
    let diff = score_pref - score_disp;
    let slack = xi - diff;
    if slack > 0.0 {
        Ok((slack, (-1.0, 1.0)))
    } else {
        Ok((0.0, (0.0, 0.0)))
    }
}

/// A unit of a batch, already scored.
#[derive(Clone, Debug, PartialEq)]
pub enum ScoredUnit {
    Candidates(CandidateSet),
    Pair { preferred: f64, dispreferred: f64 },
}

/// Mean per-unit loss; units must match the objective kind.
pub fn batch_objective(units: &[ScoredUnit], objective: &Objective) -> Result<f64> {
    if units.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut total = 0.0;
    for unit in units {
        total += match (objective, unit) {
            (Objective::Log, ScoredUnit::Candidates(set)) => softmax_log_loss(set)?.0,
            (Objective::Margin { xi }, ScoredUnit::Pair { preferred, dispreferred }) => {
                margin_pair_loss(*preferred, *dispreferred, *xi)?.0
            }
            _ => {
                return Err(Error::contract(format!(
                    "unit kind does not match the {} objective",
                    objective.name()
                )))
            }
        };
    }
    Ok(total / units.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: Vec<f64>, correct: usize) -> CandidateSet {
        CandidateSet { premise_id: "p".into(), scores, correct_index: correct, gold_levels: vec![] }
    }

    #[test]
    fn two_equal_scores() {
        let (loss, grad) = softmax_log_loss(&set(vec![0.0, 0.0], 0)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![-0.5, 0.5]);
    }

    #[test]
    fn three_graded_scores() {
        // direct evaluation: e^2, e^1, e^0 over their sum
        let z = 2f64.exp() + 1f64.exp() + 1.0;
        let p = [2f64.exp() / z, 1f64.exp() / z, 1.0 / z];
        let (loss, grad) = softmax_log_loss(&set(vec![2.0, 1.0, 0.0], 0)).unwrap();
        assert!((loss + p[0].ln()).abs() < 1e-14);
        assert!((loss - 0.40761).abs() < 1e-5);
        assert!((grad[0] - (p[0] - 1.0)).abs() < 1e-14);
        assert!((grad[1] - p[1]).abs() < 1e-14 && (grad[2] - p[2]).abs() < 1e-14);
        let sm = softmax(&[2.0, 1.0, 0.0]);
        for (a, b) in sm.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn single_candidate_is_free() {
        let (loss, grad) = softmax_log_loss(&set(vec![3.7], 0)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let (loss, _) = softmax_log_loss(&set(vec![1000.0, 999.0], 1)).unwrap();
        assert!((loss - (1.0 + (-1f64).exp().ln_1p())).abs() < 1e-12);
    }

    #[test]
    fn bad_sets_rejected() {
        assert!(softmax_log_loss(&set(vec![], 0)).is_err());
        assert!(softmax_log_loss(&set(vec![1.0], 1)).is_err());
        assert!(matches!(
            softmax_log_loss(&set(vec![f64::NAN, 1.0], 0)),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(margin_pair_loss(0.9, 0.3, 0.2).unwrap(), (0.0, (0.0, 0.0)));
        assert_eq!(margin_pair_loss(0.5, 0.5, 0.2).unwrap(), (0.2, (-1.0, 1.0)));
        let (loss, _) = margin_pair_loss(0.6, 0.5, 0.37).unwrap();
        assert!((loss - 0.27).abs() < 1e-12);
        // exact kink
        assert_eq!(margin_pair_loss(0.75, 0.5, 0.25).unwrap(), (0.0, (0.0, 0.0)));
        assert!(margin_pair_loss(1.0, 0.0, 0.0).is_err());
        assert!(margin_pair_loss(f64::INFINITY, 0.0, 0.2).is_err());
    }

    #[test]
    fn batch_means() {
        let units = vec![
            ScoredUnit::Pair { preferred: 0.9, dispreferred: 0.3 },
            ScoredUnit::Pair { preferred: 0.5, dispreferred: 0.5 },
        ];
        let m = Objective::Margin { xi: 0.2 };
        assert!((batch_objective(&units, &m).unwrap() - 0.1).abs() < 1e-15);
        let same = vec![ScoredUnit::Candidates(set(vec![2.0, 1.0, 0.0], 0)); 5];
        let unit = softmax_log_loss(&set(vec![2.0, 1.0, 0.0], 0)).unwrap().0;
        assert!((batch_objective(&same, &Objective::Log).unwrap() - unit).abs() < 1e-15);
        assert!(batch_objective(&units, &Objective::Log).is_err());
        assert!(batch_objective(&[], &m).is_err());
    }

    #[test]
    fn objective_json_shape() {
        let m: Objective = serde_json::from_str(r#"{"kind":"margin","xi":0.37}"#).unwrap();
        assert_eq!(m, Objective::Margin { xi: 0.37 });
        assert_eq!(serde_json::to_string(&Objective::Log).unwrap(), r#"{"kind":"log"}"#);
        assert!(Objective::margin(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn random_batch_matches_resummation(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            xi in 0.01f64..2.0,
        ) {
            let units: Vec<_> = pairs.iter()
                .map(|&(a, b)| ScoredUnit::Pair { preferred: a, dispreferred: b })
                .collect();
            let mut brute = 0.0;
            for &(a, b) in &pairs {
                brute += (xi - a + b).max(0.0);
            }
            brute /= pairs.len() as f64;
            let got = batch_objective(&units, &Objective::Margin { xi }).unwrap();
            prop_assert!((got - brute).abs() <= 1e-12 * brute.abs().max(1.0));
        }

        #[test]
        fn softmax_sums_to_one(scores in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&scores);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
        }

        #[test]
        fn log_gradient_pulls_correct_up(
            scores in prop::collection::vec(-20.0f64..20.0, 2..8),
            pick in 0usize..8,
        ) {
            let correct = pick % scores.len();
            let (_, grad) = softmax_log_loss(&set(scores, correct)).unwrap();
            prop_assert!(grad[correct] < 0.0);
        }

        #[test]
        fn hinge_shift_invariant(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
            // shifting by a constant keeps a - b up to rounding of the shift itself
            let base = margin_pair_loss(a, b, 0.2).unwrap().0;
            let shifted = margin_pair_loss(a + c, b + c, 0.2).unwrap().0;
            prop_assert!((base - shifted).abs() < 1e-12);
        }
    }
}
