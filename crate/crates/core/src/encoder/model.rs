use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PairTokens;
use crate::error::{Error, Result};

/// Initial weights are drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl EncoderDims {
    pub fn feature(&self) -> usize {
        3 * self.dim
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.vocab * self.dim + self.feature() * self.hidden + 2 * self.hidden + 1
    }
}

/// Learnable weights of the scorer. Matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    /// `vocab × dim`
    pub embeddings: Vec<f64>,
    /// `3·dim × hidden`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl EncoderParams {
    pub fn zeros(dims: EncoderDims) -> Self {
        Self {
            dims,
            embeddings: vec![0.0; dims.vocab * dims.dim],
            w1: vec![0.0; dims.feature() * dims.hidden],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.hidden],
            b2: 0.0,
        }
    }

    /// Uniform init of embeddings, `W1` and `w2`; biases start at zero.
    pub fn init(dims: EncoderDims, seed: u64) -> Result<Self> {
        if dims.dim == 0 || dims.hidden == 0 {
            return Err(Error::validation("encoder dims must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(dims);
        for x in params.embeddings.iter_mut().chain(&mut params.w1).chain(&mut params.w2) {
            *x = rng.gen_range(-INIT_SCALE..=INIT_SCALE);
        }
        Ok(params)
    }

    /// Checks shapes against `dims` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if self.embeddings.len() != d.vocab * d.dim
            || self.w1.len() != d.feature() * d.hidden
            || self.b1.len() != d.hidden
            || self.w2.len() != d.hidden
        {
            return Err(Error::contract("parameter shapes disagree with dims"));
        }
        if !self.iter().all(f64::is_finite) {
            return Err(Error::numeric("params", "non-finite parameter"));
        }
        Ok(())
    }

    /// All parameters in flat order: embeddings, W1, b1, w2, b2.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.embeddings
            .iter()
            .chain(&self.w1)
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .chain(std::iter::once(self.b2))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn from_flat(dims: EncoderDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.param_count() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                flat.len()
            )));
        }
        let mut rest = flat;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let embeddings = take(dims.vocab * dims.dim);
        let w1 = take(dims.feature() * dims.hidden);
        let b1 = take(dims.hidden);
        let w2 = take(dims.hidden);
        let b2 = take(1)[0];
        Ok(Self { dims, embeddings, w1, b1, w2, b2 })
    }

    /// Flat index of embedding entry `(row, col)`.
    pub fn embedding_offset(&self, row: usize, col: usize) -> usize {
        row * self.dims.dim + col
    }

    pub fn embedding_row(&self, id: u32) -> &[f64] {
        let d = self.dims.dim;
        &self.embeddings[id as usize * d..(id as usize + 1) * d]
    }

    /// Runs the forward pass and keeps the intermediates.
    pub fn forward(&self, tokens: &PairTokens) -> Result<Forward> {
        let d = self.dims.dim;
        let h = self.dims.hidden;
        if let Some(&bad) = tokens.ids.iter().find(|&&id| id as usize >= self.dims.vocab) {
            return Err(Error::contract(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.dims.vocab
            )));
        }
        let mut feature = vec![0.0; 3 * d];
        self.mean_pool(&tokens.ids, &mut feature[..d]);
        self.mean_pool(&tokens.ids[tokens.premise_span.clone()], &mut feature[d..2 * d]);
        self.mean_pool(&tokens.ids[tokens.hypothesis_span.clone()], &mut feature[2 * d..]);

        let mut pre = self.b1.clone();
        for (i, &f) in feature.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            let row = &self.w1[i * h..(i + 1) * h];
            for (z, &w) in pre.iter_mut().zip(row) {
                *z += f * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|z| z.tanh()).collect();
        let mut score = 0.0;
        for (a, w) in hidden.iter().zip(&self.w2) {
            score += a * w;
        }
        score += self.b2;
        Ok(Forward { tokens: tokens.clone(), feature, hidden, score })
    }

    fn mean_pool(&self, ids: &[u32], out: &mut [f64]) {
        if ids.is_empty() {
            return;
        }
        for &id in ids {
            for (o, &e) in out.iter_mut().zip(self.embedding_row(id)) {
                *o += e;
            }
        }
        let n = ids.len() as f64;
        for o in out.iter_mut() {
            *o /= n;
        }
    }

    pub fn score_pair(&self, tokens: &PairTokens) -> Result<f64> {
        Ok(self.forward(tokens)?.score)
    }
}

/// Forward-pass intermediates needed for backpropagation.
#[derive(Clone, Debug)]
pub struct Forward {
    pub tokens: PairTokens,
    pub feature: Vec<f64>,
    pub hidden: Vec<f64>,
    pub score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{tokenize_pair, Vocab};

    fn dims(vocab: usize, dim: usize, hidden: usize) -> EncoderDims {
        EncoderDims { vocab, dim, hidden }
    }

    #[test]
    fn init_is_deterministic_with_expected_shapes() {
        let a = EncoderParams::init(dims(1000, 64, 128), 9).unwrap();
        let b = EncoderParams::init(dims(1000, 64, 128), 9).unwrap();
        assert_eq!(a.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   b.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.embeddings.len(), 1000 * 64);
        assert_eq!(a.w1.len(), 192 * 128);
        assert!(a.b1.iter().all(|&x| x == 0.0) && a.b2 == 0.0);
        assert!(a.iter().all(|x| x.abs() <= INIT_SCALE));
        assert!(EncoderParams::init(dims(10, 0, 3), 0).is_err());
    }

    #[test]
    fn zero_params_score_b2() {
        let v = Vocab::build(&["a b c d"], 1).unwrap();
        let mut p = EncoderParams::zeros(dims(v.len(), 4, 3));
        let t = tokenize_pair("a b", "c d", &v);
        assert_eq!(p.score_pair(&t).unwrap(), 0.0);
        p.b2 = 0.75;
        assert_eq!(p.score_pair(&t).unwrap(), 0.75);
    }

    #[test]
    fn zero_output_weights_score_b2() {
        let v = Vocab::build(&["a b c d"], 1).unwrap();
        let mut p = EncoderParams::init(dims(v.len(), 4, 3), 1).unwrap();
        p.w2.iter_mut().for_each(|w| *w = 0.0);
        p.b2 = -0.3;
        for (a, b) in [("a", "b"), ("c d", "a a a"), ("zzz", "b")] {
            assert_eq!(p.score_pair(&tokenize_pair(a, b, &v)).unwrap(), -0.3);
        }
    }

    #[test]
    fn hand_computed_forward_pass() {
        // vocab: 4 reserved ids only; embeddings 4 x 2, hidden 2
        let mut p = EncoderParams::zeros(dims(4, 2, 2));
        p.embeddings = vec![0.0, 0.0, 0.5, -1.0, 1.0, 2.0, -0.5, 0.25];
        // rows of W1 correspond to the six feature entries
        p.w1 = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.9, 1.0, -1.1, 0.2];
        p.b1 = vec![0.05, -0.05];
        p.w2 = vec![1.5, -2.0];
        p.b2 = 0.1;
        // ids [CLS, UNK, SEP, PAD, UNK, SEP]: premise = [UNK], hypothesis = [PAD, UNK]
        let t = PairTokens { ids: vec![2, 1, 3, 0, 1, 3], premise_span: 1..2, hypothesis_span: 3..5 };
        // independent evaluation of the three steps
        let e = |id: usize| [p.embeddings[2 * id], p.embeddings[2 * id + 1]];
        let all = [
            (e(2)[0] + e(1)[0] + e(3)[0] + e(0)[0] + e(1)[0] + e(3)[0]) / 6.0,
            (e(2)[1] + e(1)[1] + e(3)[1] + e(0)[1] + e(1)[1] + e(3)[1]) / 6.0,
        ];
        let prem = e(1);
        let hyp = [(e(0)[0] + e(1)[0]) / 2.0, (e(0)[1] + e(1)[1]) / 2.0];
        let f = [all[0], all[1], prem[0], prem[1], hyp[0], hyp[1]];
        // all = [1/6, 1/12], prem = [0.5, -1], hyp = [0.25, -0.5]
        assert!((all[0] - 1.0 / 6.0).abs() < 1e-15 && (all[1] - 1.0 / 12.0).abs() < 1e-15);
        let z0: f64 = 0.05 + (0..6).map(|i| f[i] * p.w1[2 * i]).sum::<f64>();
        let z1: f64 = -0.05 + (0..6).map(|i| f[i] * p.w1[2 * i + 1]).sum::<f64>();
        let expected = 1.5 * z0.tanh() - 2.0 * z1.tanh() + 0.1;
        assert!((z0 + 1.0 / 12.0).abs() < 1e-12);
        assert!((z1 - 1.2).abs() < 1e-12);
        let got = p.score_pair(&t).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        assert!((expected + 1.692_020_663_674_71).abs() < 1e-12, "{expected}");
    }

    #[test]
    fn out_of_range_id_is_contract_error() {
        let p = EncoderParams::zeros(dims(4, 2, 2));
        let t = PairTokens { ids: vec![2, 9, 3, 3], premise_span: 1..2, hypothesis_span: 3..3 };
        assert!(matches!(p.score_pair(&t), Err(Error::Contract(_))));
    }

    #[test]
    fn flat_round_trip() {
        let p = EncoderParams::init(dims(7, 3, 5), 2).unwrap();
        let q = EncoderParams::from_flat(p.dims, &p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.to_flat().len(), p.dims.param_count());
    }
}
