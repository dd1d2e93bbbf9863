use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::validation("adam betas must lie in (0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::validation("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Moment accumulators over the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    /// Embedding rows that have ever received a gradient, ascending.
    touched_rows: Vec<u32>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, touched_rows: Vec::new() }
    }

    /// One bias-corrected Adam update over plain slices.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, cfg: &AdamConfig) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::contract("adam state, params and grads differ in length"));
        }
        self.t += 1;
        let (bc1, bc2) = self.corrections(cfg);
        for (k, (x, &g)) in theta.iter_mut().zip(grad).enumerate() {
            update(x, g, &mut self.m[k], &mut self.v[k], lr, bc1, bc2, cfg);
        }
        check_finite(theta)
    }

    fn corrections(&self, cfg: &AdamConfig) -> (f64, f64) {
        let t = self.t as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update(theta: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, bc1: f64, bc2: f64, cfg: &AdamConfig) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *theta -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
}

fn check_finite(theta: &[f64]) -> Result<()> {
    match theta.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(Error::numeric("adam", format!("parameter {k} became non-finite"))),
        None => Ok(()),
    }
}

/// Adam update of the encoder.
///
/// Equivalent to a dense update: embedding rows never touched have zero
/// moments and would not move, so only rows seen so far are visited.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.dims != params.dims || state.m.len() != params.dims.param_count() {
        return Err(Error::contract("adam state, params and grads are not shape-congruent"));
    }
    for &id in grads.embeddings.keys() {
        if let Err(pos) = state.touched_rows.binary_search(&id) {
            state.touched_rows.insert(pos, id);
        }
    }
    state.t += 1;
    let (bc1, bc2) = state.corrections(cfg);
    let d = params.dims.dim;
    let AdamState { m, v, touched_rows, .. } = state;

    for &id in touched_rows.iter() {
        let base = id as usize * d;
        let g = grads.embeddings.get(&id);
        for c in 0..d {
            let gk = g.map_or(0.0, |r| r[c]);
            let k = base + c;
            update(&mut params.embeddings[k], gk, &mut m[k], &mut v[k], lr, bc1, bc2, cfg);
        }
    }

    let mut k = params.dims.vocab * d;
    for (block, gblock) in [
        (&mut params.w1, &grads.w1),
        (&mut params.b1, &grads.b1),
        (&mut params.w2, &grads.w2),
    ] {
        for (x, &g) in block.iter_mut().zip(gblock.iter()) {
            update(x, g, &mut m[k], &mut v[k], lr, bc1, bc2, cfg);
            k += 1;
        }
    }
    update(&mut params.b2, grads.b2, &mut m[k], &mut v[k], lr, bc1, bc2, cfg);

    if !params.iter().all(f64::is_finite) {
        return Err(Error::numeric("adam", format!("non-finite parameter after step {}", state.t)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderDims;

    #[test]
    fn first_step_is_a_sign_step() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 1e-3] {
            let mut theta = [1.0];
            let mut st = AdamState::new(1);
            st.step(&mut theta, &[g], 0.01, &cfg).unwrap();
            // bias correction gives m_hat = g and v_hat = g^2 on the first step
            let expected = -0.01 * g / (g.abs() + cfg.epsilon);
            assert!((theta[0] - 1.0 - expected).abs() < 1e-15);
            assert!(((theta[0] - 1.0).abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_is_identity_but_counts() {
        let cfg = AdamConfig::default();
        let mut theta = [0.5, -2.0];
        let mut st = AdamState::new(2);
        for _ in 0..25 {
            st.step(&mut theta, &[0.0, 0.0], 0.1, &cfg).unwrap();
        }
        assert_eq!(theta, [0.5, -2.0]);
        assert_eq!(st.t, 25);
    }

    #[test]
    fn sparse_encoder_step_matches_dense_update() {
        let dims = EncoderDims { vocab: 6, dim: 2, hidden: 3 };
        let mut params = EncoderParams::init(dims, 4).unwrap();
        let mut dense = params.to_flat();
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(dims.param_count());
        let mut dense_st = AdamState::new(dims.param_count());
        for step in 0..5u32 {
            let mut g = Gradients::zeros(dims);
            // row 2 only on the first step, row 4 every step
            if step == 0 {
                g.embeddings.insert(2, vec![0.3, -0.1]);
            }
            g.embeddings.insert(4, vec![-0.2, 0.05 * step as f64]);
            g.w1.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64 - 8.0) / 10.0);
            g.b2 = 0.7;
            adam_step(&mut params, &g, &mut st, 0.05, &cfg).unwrap();
            dense_st.step(&mut dense, &g.to_flat(), 0.05, &cfg).unwrap();
        }
        assert_eq!(params.to_flat(), dense);
        // rows 0, 1, 3, 5 were never touched
        for row in [0usize, 1, 3, 5] {
            assert_eq!(st.m[row * 2], 0.0);
            assert_eq!(st.v[row * 2 + 1], 0.0);
        }
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        let mut st = AdamState::new(2);
        assert!(st.step(&mut [0.0], &[0.0], 0.1, &AdamConfig::default()).is_err());
    }

    #[test]
    fn overflow_aborts() {
        let mut theta = [f64::MAX];
        let mut st = AdamState::new(1);
        let err = st.step(&mut theta, &[-1.0], f64::MAX, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Numeric { .. })));
    }
}
