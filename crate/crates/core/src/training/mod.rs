//! Adam training with early stopping on dev pairwise accuracy, and k-fold
//! cross-validation of the margin.

mod adam;
mod crossval;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use crossval::{crossval_margin, kfold_partition, CrossValReport, FoldResult};

use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_and_gradients, TrainUnit, UnitBody};
use crate::encoder::{tokenize_pair, EncoderDims, EncoderParams, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::TokenizedTriplets;
use crate::objectives::Objective;
use crate::recast::{ranking_groups, TripletDataset};

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Consecutive non-improving evaluations before stopping; 0 disables.
    pub patience: usize,
    /// Steps between dev evaluations; 0 evaluates once per epoch.
    pub eval_every: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dim: usize,
    pub hidden: usize,
    /// Minimum token frequency for the vocabulary built from training text.
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            objective: Objective::Margin { xi: 0.2 },
            learning_rate: 1e-3,
            max_epochs: 50,
            batch_size: 16,
            patience: 10,
            eval_every: 0,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            dim: 64,
            hidden: 128,
            min_freq: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("max_epochs and batch_size must be at least 1"));
        }
        if self.dim == 0 || self.hidden == 0 || self.min_freq == 0 {
            return Err(Error::validation("dim, hidden and min_freq must be at least 1"));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    pub fn dims(&self, vocab: &Vocab) -> EncoderDims {
        EncoderDims { vocab: vocab.len(), dim: self.dim, hidden: self.hidden }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean batch loss since the previous evaluation.
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    pub best: Option<usize>,
    pub stop_reason: Option<StopReason>,
}

impl TrainHistory {
    pub fn best_record(&self) -> Option<&EvalRecord> {
        self.best.map(|i| &self.records[i])
    }

    /// `step,train_loss,dev_accuracy,is_best`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,dev_accuracy,is_best\n");
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", r.step, r.train_loss, r.dev_accuracy, self.best == Some(i));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best dev evaluation.
    pub params: EncoderParams,
    pub history: TrainHistory,
}

/// A failed run keeps the history recorded before the error.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub history: TrainHistory,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} evaluations)", self.error, self.history.records.len())
    }
}

impl std::error::Error for TrainFailure {}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        Self { error, history: TrainHistory::default() }
    }
}

/// Tokenized training units for `objective`.
///
/// Margin training uses one pair per triplet. Log training uses one
/// candidate set per preferred alternative: the alternative itself plus
/// every alternative it beats under the same shared text.
pub fn build_units(dataset: &TripletDataset, vocab: &Vocab, objective: &Objective) -> Vec<TrainUnit> {
    match objective {
        Objective::Margin { .. } => dataset
            .triplets
            .iter()
            .map(|t| {
                let ((pp, ph), (dp, dh)) = t.scored_pairs();
                TrainUnit {
                    id: t.premise_id.clone(),
                    body: UnitBody::Pair {
                        preferred: tokenize_pair(pp, ph, vocab),
                        dispreferred: tokenize_pair(dp, dh, vocab),
                    },
                }
            })
            .collect(),
        Objective::Log => ranking_groups(dataset)
            .into_iter()
            .map(|g| TrainUnit {
                body: UnitBody::Candidates {
                    candidates: g
                        .candidates
                        .iter()
                        .map(|c| {
                            let (p, h) = g.orientation.arrange(&g.shared, c);
                            tokenize_pair(p, h, vocab)
                        })
                        .collect(),
                    correct: g.correct_index,
                },
                id: g.premise_id,
            })
            .collect(),
    }
}

/// Vocabulary over the shared and alternative texts of a dataset.
pub fn build_vocab(dataset: &TripletDataset, min_freq: usize) -> Result<Vocab> {
    // each text once per triplet side so frequencies track usage
    let texts: Vec<&str> = dataset
        .triplets
        .iter()
        .flat_map(|t| [t.shared.as_str(), t.preferred.as_str(), t.dispreferred.as_str()])
        .collect();
    Vocab::build(&texts, min_freq)
}

struct Progress {
    history: TrainHistory,
    best_params: Option<EncoderParams>,
    best_accuracy: f64,
    since_improvement: usize,
    loss_sum: f64,
    loss_batches: usize,
}

impl Progress {
    /// Records one evaluation; returns true when patience is exhausted.
    fn evaluate(
        &mut self,
        params: &EncoderParams,
        dev: &TokenizedTriplets,
        step: u64,
        epoch: usize,
        patience: usize,
    ) -> Result<bool> {
        let dev_accuracy = dev.accuracy(params)?.accuracy;
        let train_loss = if self.loss_batches == 0 { f64::NAN } else { self.loss_sum / self.loss_batches as f64 };
        self.loss_sum = 0.0;
        self.loss_batches = 0;
        self.history.records.push(EvalRecord { step, epoch, train_loss, dev_accuracy });
        if self.best_params.is_none() || dev_accuracy > self.best_accuracy {
            self.best_accuracy = dev_accuracy;
            self.best_params = Some(params.clone());
            self.history.best = Some(self.history.records.len() - 1);
            self.since_improvement = 0;
            Ok(false)
        } else {
            self.since_improvement += 1;
            Ok(patience > 0 && self.since_improvement >= patience)
        }
    }
}

/// Trains a freshly initialized encoder.
///
/// Initialization uses `config.seed`; the per-epoch shuffles draw from a
/// separate stream of the same seed.
pub fn train(
    train_set: &TripletDataset,
    dev_set: &TripletDataset,
    vocab: &Vocab,
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::validation("training and dev sets must be nonempty").into());
    }
    let params = EncoderParams::init(config.dims(vocab), config.seed)?;
    train_from(params, train_set, dev_set, vocab, config)
}

/// Trains starting from `params`.
pub fn train_from(
    mut params: EncoderParams,
    train_set: &TripletDataset,
    dev_set: &TripletDataset,
    vocab: &Vocab,
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    config.validate()?;
    if params.dims.vocab != vocab.len() {
        return Err(Error::contract("parameters and vocabulary disagree in size").into());
    }
    let units = build_units(train_set, vocab, &config.objective);
    let dev = TokenizedTriplets::new(dev_set, vocab);
    if units.is_empty() || dev.is_empty() {
        return Err(Error::validation("training and dev sets must be nonempty").into());
    }

    let adam = config.adam();
    let mut state = AdamState::new(params.dims.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..units.len()).collect();
    let mut progress = Progress {
        history: TrainHistory::default(),
        best_params: None,
        best_accuracy: f64::NEG_INFINITY,
        since_improvement: 0,
        loss_sum: 0.0,
        loss_batches: 0,
    };
    let mut step: u64 = 0;
    let mut evaluated_at: Option<u64> = None;
    let mut stop = StopReason::MaxEpochs;

    let result: Result<()> = (|| {
        'epochs: for epoch in 0..config.max_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<TrainUnit> = chunk.iter().map(|&i| units[i].clone()).collect();
                let (loss, grads) = loss_and_gradients(&batch, &params, &config.objective)?;
                adam_step(&mut params, &grads, &mut state, config.learning_rate, &adam)?;
                step += 1;
                progress.loss_sum += loss;
                progress.loss_batches += 1;
                if config.eval_every > 0 && step.is_multiple_of(config.eval_every as u64) {
                    evaluated_at = Some(step);
                    if progress.evaluate(&params, &dev, step, epoch, config.patience)? {
                        stop = StopReason::EarlyStop;
                        break 'epochs;
                    }
                }
            }
            if config.eval_every == 0 || epoch + 1 == config.max_epochs {
                if evaluated_at == Some(step) {
                    continue;
                }
                evaluated_at = Some(step);
                if progress.evaluate(&params, &dev, step, epoch, config.patience)? {
                    stop = StopReason::EarlyStop;
                    break 'epochs;
                }
            }
        }
        Ok(())
    })();

    progress.history.stop_reason = Some(stop);
    match (result, progress.best_params) {
        (Ok(()), Some(params)) => Ok(TrainOutcome { params, history: progress.history }),
        (Ok(()), None) => Err(TrainFailure {
            error: Error::contract("training finished without an evaluation"),
            history: progress.history,
        }),
        (Err(error), _) => {
            progress.history.stop_reason = None;
            Err(TrainFailure { error, history: progress.history })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthMode, SynthSpec};
    use crate::recast::{recast_mnli1, recast_mnli2_split};

    fn small_data(n: usize, seed: u64) -> (TripletDataset, TripletDataset, Vocab) {
        let pairs = generate_synthetic_corpus(&SynthSpec::mnli(n, SynthMode::Separable), seed).unwrap();
        let all = recast_mnli1(&pairs).unwrap();
        let idx: Vec<usize> = (0..all.len()).collect();
        let cut = all.len() * 4 / 5;
        let train = all.select(&idx[..cut]);
        let dev = all.select(&idx[cut..]);
        let vocab = build_vocab(&train, 1).unwrap();
        (train, dev, vocab)
    }

    fn quick(objective: Objective) -> TrainConfig {
        TrainConfig {
            objective,
            learning_rate: 0.01,
            max_epochs: 4,
            batch_size: 8,
            patience: 0,
            dim: 8,
            hidden: 8,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = TrainConfig::default();
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: TrainConfig =
            serde_json::from_str(r#"{"objective":{"kind":"log"},"seed":7}"#).unwrap();
        assert_eq!(partial.objective, Objective::Log);
        assert_eq!(partial.learning_rate, 1e-3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr":1}"#).is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn deterministic_history() {
        let (train_set, dev, vocab) = small_data(30, 1);
        for obj in [Objective::Margin { xi: 0.2 }, Objective::Log] {
            let a = train(&train_set, &dev, &vocab, &quick(obj)).unwrap();
            let b = train(&train_set, &dev, &vocab, &quick(obj)).unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(
                a.params.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.params.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn best_params_reproduce_best_accuracy() {
        let (train_set, dev, vocab) = small_data(30, 2);
        let out = train(&train_set, &dev, &vocab, &TrainConfig { eval_every: 3, ..quick(Objective::Log) }).unwrap();
        let best = out.history.best_record().unwrap();
        let max = out.history.records.iter().map(|r| r.dev_accuracy).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.dev_accuracy, max);
        let first_max = out.history.records.iter().position(|r| r.dev_accuracy == max).unwrap();
        assert_eq!(out.history.best, Some(first_max));
        let acc = TokenizedTriplets::new(&dev, &vocab).accuracy(&out.params).unwrap().accuracy;
        assert_eq!(acc, best.dev_accuracy);
    }

    #[test]
    fn stagnant_metric_stops_at_second_evaluation() {
        let (train_set, dev, vocab) = small_data(10, 3);
        // a learning rate too small to move any score comparison
        let cfg = TrainConfig { learning_rate: 1e-300, patience: 1, max_epochs: 10, ..quick(Objective::Margin { xi: 0.2 }) };
        let out = train(&train_set, &dev, &vocab, &cfg).unwrap();
        assert_eq!(out.history.stop_reason, Some(StopReason::EarlyStop));
        assert_eq!(out.history.records.len(), 2);
        assert_eq!(out.history.best, Some(0));
    }

    #[test]
    fn max_epochs_reason_and_csv() {
        let (train_set, dev, vocab) = small_data(10, 4);
        let out = train(&train_set, &dev, &vocab, &quick(Objective::Margin { xi: 0.2 })).unwrap();
        assert_eq!(out.history.stop_reason, Some(StopReason::MaxEpochs));
        assert_eq!(out.history.records.len(), 4);
        let csv = out.history.to_csv();
        assert!(csv.starts_with("step,train_loss,dev_accuracy,is_best\n"));
        assert_eq!(csv.matches(",true").count(), 1);
    }

    #[test]
    fn diverging_run_keeps_history() {
        let (train_set, dev, vocab) = small_data(10, 5);
        let cfg = TrainConfig { learning_rate: 1e300, eval_every: 1, ..quick(Objective::Log) };
        let err = train(&train_set, &dev, &vocab, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::Numeric { .. }), "{}", err.error);
        assert!(err.history.stop_reason.is_none());
    }

    #[test]
    fn log_units_cover_every_ordering() {
        let pairs = generate_synthetic_corpus(&SynthSpec::mnli(5, SynthMode::Separable), 0).unwrap();
        let ds = recast_mnli1(&pairs).unwrap();
        let vocab = build_vocab(&ds, 1).unwrap();
        let units = build_units(&ds, &vocab, &Objective::Log);
        // per premise: {h2, h1, h0} and {h1, h0}
        assert_eq!(units.len(), 10);
        let sizes: Vec<usize> = units
            .iter()
            .map(|u| match &u.body {
                UnitBody::Candidates { candidates, .. } => candidates.len(),
                UnitBody::Pair { .. } => 0,
            })
            .collect();
        assert_eq!(sizes.iter().sum::<usize>(), 25);
        let split = recast_mnli2_split(&pairs, 0).unwrap();
        // every MNLI2 triplet is its own two-candidate set
        assert_eq!(build_units(&split.train, &vocab, &Objective::Log).len(), split.train.len());
        assert_eq!(build_units(&ds, &vocab, &Objective::Margin { xi: 0.2 }).len(), ds.len());
    }
}
