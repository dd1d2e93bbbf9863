//! Exact gradients for the pair scorer and a finite-difference verifier.
//!
//! The backward pass is hand-derived for the fixed architecture; every
//! reduction runs left to right over units and positions so gradients are
//! bitwise reproducible.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{tokenize_pair, EncoderDims, EncoderParams, Forward, PairTokens, Vocab, RESERVED};
use crate::error::{Error, Result};
use crate::objectives::{margin_pair_loss, softmax_log_loss, CandidateSet, Objective};

/// Gradients shaped like [`EncoderParams`]; embedding rows are stored only
/// when touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub dims: EncoderDims,
    pub embeddings: BTreeMap<u32, Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    pub fn zeros(dims: EncoderDims) -> Self {
        Self {
            dims,
            embeddings: BTreeMap::new(),
            w1: vec![0.0; dims.feature() * dims.hidden],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.hidden],
            b2: 0.0,
        }
    }

    fn row_mut(&mut self, id: u32) -> &mut Vec<f64> {
        let d = self.dims.dim;
        self.embeddings.entry(id).or_insert_with(|| vec![0.0; d])
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (&id, row) in &other.embeddings {
            for (a, b) in self.row_mut(id).iter_mut().zip(row) {
                *a += b;
            }
        }
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        self.b2 += other.b2;
    }

    /// Dense flat vector in [`EncoderParams::to_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.dims.dim;
        let mut flat = vec![0.0; self.dims.vocab * d];
        for (&id, row) in &self.embeddings {
            flat[id as usize * d..(id as usize + 1) * d].copy_from_slice(row);
        }
        flat.extend_from_slice(&self.w1);
        flat.extend_from_slice(&self.b1);
        flat.extend_from_slice(&self.w2);
        flat.push(self.b2);
        flat
    }

    /// Flat indices of touched embedding entries plus every dense parameter.
    pub fn touched_coordinates(&self) -> Vec<usize> {
        let d = self.dims.dim;
        let mut coords: Vec<usize> = self
            .embeddings
            .keys()
            .flat_map(|&id| id as usize * d..(id as usize + 1) * d)
            .collect();
        coords.extend(self.dims.vocab * d..self.dims.param_count());
        coords
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.values().flatten().chain(&self.w1).chain(&self.b1).chain(&self.w2).all(|x| x.is_finite())
            && self.b2.is_finite()
    }

    /// True when every stored entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.embeddings.values().flatten().chain(&self.w1).chain(&self.b1).chain(&self.w2).all(|&x| x == 0.0)
            && self.b2 == 0.0
    }
}

/// Adds `dscore · dF/dθ` for one forward pass into `grads`.
pub fn backward(params: &EncoderParams, fwd: &Forward, dscore: f64, grads: &mut Gradients) {
    let d = params.dims.dim;
    let h = params.dims.hidden;
    let mut dz = vec![0.0; h];
    for (j, dzj) in dz.iter_mut().enumerate() {
        grads.w2[j] += dscore * fwd.hidden[j];
        *dzj = dscore * params.w2[j] * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
        grads.b1[j] += *dzj;
    }
    grads.b2 += dscore;

    let mut dfeature = vec![0.0; 3 * d];
    for (i, df) in dfeature.iter_mut().enumerate() {
        let row = &params.w1[i * h..(i + 1) * h];
        let grow = &mut grads.w1[i * h..(i + 1) * h];
        let f = fwd.feature[i];
        let mut acc = 0.0;
        for j in 0..h {
            grow[j] += f * dz[j];
            acc += row[j] * dz[j];
        }
        *df = acc;
    }

    let tokens = &fwd.tokens;
    let views: [(&[u32], &[f64]); 3] = [
        (&tokens.ids, &dfeature[..d]),
        (&tokens.ids[tokens.premise_span.clone()], &dfeature[d..2 * d]),
        (&tokens.ids[tokens.hypothesis_span.clone()], &dfeature[2 * d..]),
    ];
    for (ids, dview) in views {
        if ids.is_empty() {
            continue;
        }
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            for (g, &dv) in grads.row_mut(id).iter_mut().zip(dview) {
                *g += dv * inv;
            }
        }
    }
}

/// One unit of a training batch, tokenized.
#[derive(Clone, Debug)]
pub struct TrainUnit {
    pub id: String,
    pub body: UnitBody,
}

#[derive(Clone, Debug)]
pub enum UnitBody {
    Pair { preferred: PairTokens, dispreferred: PairTokens },
    Candidates { candidates: Vec<PairTokens>, correct: usize },
}

fn unit_loss(
    unit: &TrainUnit,
    params: &EncoderParams,
    objective: &Objective,
    scale: f64,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let loss = match (objective, &unit.body) {
        (Objective::Margin { xi }, UnitBody::Pair { preferred, dispreferred }) => {
            let fp = params.forward(preferred)?;
            let fd = params.forward(dispreferred)?;
            let (loss, (gp, gd)) = margin_pair_loss(fp.score, fd.score, *xi)
                .map_err(|e| relabel(e, &unit.id))?;
            if let Some(grads) = grads {
                if loss > 0.0 {
                    backward(params, &fp, gp * scale, grads);
                    backward(params, &fd, gd * scale, grads);
                }
            }
            loss
        }
        (Objective::Log, UnitBody::Candidates { candidates, correct }) => {
            let forwards =
                candidates.iter().map(|t| params.forward(t)).collect::<Result<Vec<_>>>()?;
            let set = CandidateSet {
                premise_id: unit.id.clone(),
                scores: forwards.iter().map(|f| f.score).collect(),
                correct_index: *correct,
                gold_levels: Vec::new(),
            };
            let (loss, dscores) = softmax_log_loss(&set)?;
            if let Some(grads) = grads {
                for (fwd, ds) in forwards.iter().zip(dscores) {
                    if ds != 0.0 {
                        backward(params, fwd, ds * scale, grads);
                    }
                }
            }
            loss
        }
        _ => {
            return Err(Error::contract(format!(
                "unit `{}` does not match the {} objective",
                unit.id,
                objective.name()
            )))
        }
    };
    if !loss.is_finite() {
        return Err(Error::numeric(&unit.id, format!("non-finite loss {loss}")));
    }
    Ok(loss)
}

fn relabel(err: Error, unit: &str) -> Error {
    match err {
        Error::Numeric { message, .. } => Error::numeric(unit, message),
        other => other,
    }
}

/// Mean loss over the batch and its exact gradient.
pub fn loss_and_gradients(
    batch: &[TrainUnit],
    params: &EncoderParams,
    objective: &Objective,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(params.dims);
    let mut total = 0.0;
    for unit in batch {
        total += unit_loss(unit, params, objective, scale, Some(&mut grads))?;
    }
    Ok((total * scale, grads))
}

/// Mean loss over the batch without gradients.
pub fn batch_loss(batch: &[TrainUnit], params: &EncoderParams, objective: &Objective) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for unit in batch {
        total += unit_loss(unit, params, objective, scale, None)?;
    }
    Ok(total * scale)
}

/// Max over `coords` of `|fd_k - g_k| / max(1e-8, |fd_k| + |g_k|)` with
/// central differences `fd_k = (L(θ + eps·e_k) - L(θ - eps·e_k)) / 2eps`.
pub fn finite_difference_check<F>(
    mut loss: F,
    theta: &[f64],
    grad: &[f64],
    coords: &[usize],
    eps: f64,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for &k in coords {
        probe[k] = theta[k] + eps;
        let up = loss(&probe);
        probe[k] = theta[k] - eps;
        let down = loss(&probe);
        probe[k] = theta[k];
        let fd = (up - down) / (2.0 * eps);
        let rel = (fd - grad[k]).abs() / (fd.abs() + grad[k].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Runs [`finite_difference_check`] for a batch over every touched
/// coordinate of the model.
///
/// Every objective depends on scores only through differences within a
/// unit, so the loss is constant in `b2`; a finite difference there measures
/// rounding alone. `b2` is scored against its exact derivative, zero, with
/// the same relative-error formula.
pub fn check_batch_gradients(
    batch: &[TrainUnit],
    params: &EncoderParams,
    objective: &Objective,
    eps: f64,
) -> Result<f64> {
    let (_, grads) = loss_and_gradients(batch, params, objective)?;
    let theta = params.to_flat();
    let b2_index = theta.len() - 1;
    let coords: Vec<usize> = grads.touched_coordinates().into_iter().filter(|&k| k != b2_index).collect();
    let dims = params.dims;
    let mut failure = None;
    let worst = finite_difference_check(
        |flat| {
            let probe = EncoderParams::from_flat(dims, flat).expect("flat length matches dims");
            batch_loss(batch, &probe, objective).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &theta,
        &grads.to_flat(),
        &coords,
        eps,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let b2_error = grads.b2.abs() / grads.b2.abs().max(1e-8);
    Ok(worst.max(b2_error))
}

/// A seeded random model, batch and objective for gradient checking.
#[derive(Clone, Debug)]
pub struct GradcheckCase {
    pub params: EncoderParams,
    pub batch: Vec<TrainUnit>,
    pub objective: Objective,
}

/// Draws a small model (`dim` in 2..=8) with order-one weights so gradient
/// coordinates sit well above finite-difference rounding noise. Alternatives
/// within a unit are distinct bags of words, and margin cases keep every pair more
/// than `10·eps` away from the hinge kink.
pub fn gradcheck_case(seed: u64, log: bool, eps: f64) -> Result<GradcheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::from_tokens(RESERVED.iter().map(|s| s.to_string()).chain(words.iter().cloned()).collect())?;
    let dims = EncoderDims { vocab: vocab.len(), dim: rng.gen_range(2..=8), hidden: rng.gen_range(2..=6) };
    let mut params = EncoderParams::zeros(dims);
    for x in &mut params.embeddings {
        *x = rng.gen_range(-1.0..1.0);
    }
    let w1_scale = 1.0 / (dims.feature() as f64).sqrt();
    for x in &mut params.w1 {
        *x = rng.gen_range(-w1_scale..w1_scale);
    }
    for x in &mut params.b1 {
        *x = rng.gen_range(-0.2..0.2);
    }
    for x in &mut params.w2 {
        *x = rng.gen_range(-1.0..1.0);
    }
    params.b2 = rng.gen_range(-0.2..0.2);

    let text = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..=3);
        (0..n).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" ")
    };
    // pooling ignores order, so distinctness is up to permutation
    let bag = |t: &str| {
        let mut w: Vec<&str> = t.split(' ').collect();
        w.sort_unstable();
        w.join(" ")
    };
    if log {
        let batch = (0..2)
            .map(|u| {
                let premise = text(&mut rng);
                let n = rng.gen_range(2..=4);
                let mut hyps: Vec<String> = Vec::new();
                while hyps.len() < n {
                    let h = text(&mut rng);
                    if !hyps.iter().any(|o| bag(o) == bag(&h)) {
                        hyps.push(h);
                    }
                }
                let candidates = hyps.iter().map(|h| tokenize_pair(&premise, h, &vocab)).collect();
                TrainUnit { id: format!("set{u}"), body: UnitBody::Candidates { candidates, correct: rng.gen_range(0..n) } }
            })
            .collect();
        return Ok(GradcheckCase { params, batch, objective: Objective::Log });
    }

    let mut batch = Vec::new();
    let mut diffs = Vec::new();
    for u in 0..4 {
        let premise = text(&mut rng);
        let h = text(&mut rng);
        let h_prime = loop {
            let t = text(&mut rng);
            if bag(&t) != bag(&h) {
                break t;
            }
        };
        let preferred = tokenize_pair(&premise, &h, &vocab);
        let dispreferred = tokenize_pair(&premise, &h_prime, &vocab);
        diffs.push(params.score_pair(&preferred)? - params.score_pair(&dispreferred)?);
        batch.push(TrainUnit { id: format!("pair{u}"), body: UnitBody::Pair { preferred, dispreferred } });
    }
    let top = diffs.iter().copied().fold(0.0f64, f64::max);
    let xi = loop {
        let xi: f64 = rng.gen_range(0.05..top + 1.0);
        if diffs.iter().all(|d| (d - xi).abs() > 10.0 * eps) {
            break xi;
        }
    };
    Ok(GradcheckCase { params, batch, objective: Objective::Margin { xi } })
}

impl GradcheckCase {
    pub fn max_relative_error(&self, eps: f64) -> Result<f64> {
        check_batch_gradients(&self.batch, &self.params, &self.objective, eps)
    }
}
