use crate::error::{ImmError, Result};
use crate::prob::{Categorical, RandomSource};

use super::{check_weights, DifferentiableModel};

pub const EMBED_DIM: usize = 16;
pub const HIDDEN_DIM: usize = 32;
pub const CONTEXT_LEN: usize = 3;
pub const MAX_VOCAB: usize = 64;

const INPUT_DIM: usize = CONTEXT_LEN * EMBED_DIM;

/// Fixed-window feedforward language model:
/// embeddings of the last three tokens, one tanh hidden layer, softmax output.
///
/// The short context is the previous token; the extended context is the two
/// tokens before it, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNeuralLM {
    vocab: usize,
    params: Vec<f64>,
}

struct Layout {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize) -> Self {
        let emb = 0;
        let w1 = emb + vocab * EMBED_DIM;
        let b1 = w1 + HIDDEN_DIM * INPUT_DIM;
        let w2 = b1 + HIDDEN_DIM;
        let b2 = w2 + vocab * HIDDEN_DIM;
        Self { emb, w1, b1, w2, b2, total: b2 + vocab }
    }
}

struct Activations {
    input: [f64; INPUT_DIM],
    hidden: [f64; HIDDEN_DIM],
    probs: Vec<f64>,
}

impl TinyNeuralLM {
    /// Parameters uniform in `[-0.1, 0.1]`.
    pub fn new(vocab: usize, rng: &mut RandomSource) -> Self {
        assert!((1..=MAX_VOCAB).contains(&vocab), "vocabulary size {vocab} outside 1..={MAX_VOCAB}");
        let total = Layout::new(vocab).total;
        let params = (0..total).map(|_| rng.uniform(-0.1, 0.1)).collect();
        Self { vocab, params }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Zeroes the output layer so the prediction is uniform.
    pub fn zero_output_layer(&mut self) {
        let l = Layout::new(self.vocab);
        self.params[l.w2..l.total].iter_mut().for_each(|p| *p = 0.0);
    }

    fn check_token(&self, tok: u32) -> Result<usize> {
        let t = tok as usize;
        if t >= self.vocab {
            return Err(ImmError::UnknownToken(tok.to_string()));
        }
        Ok(t)
    }

    fn activations(&self, short: u32, ext: &[u32; 2]) -> Result<Activations> {
        let l = Layout::new(self.vocab);
        let p = &self.params;
        let toks = [self.check_token(short)?, self.check_token(ext[0])?, self.check_token(ext[1])?];
        let mut input = [0.0; INPUT_DIM];
        for (j, &t) in toks.iter().enumerate() {
            input[j * EMBED_DIM..(j + 1) * EMBED_DIM].copy_from_slice(&p[l.emb + t * EMBED_DIM..l.emb + (t + 1) * EMBED_DIM]);
        }
        let mut hidden = [0.0; HIDDEN_DIM];
        for (h, out) in hidden.iter_mut().enumerate() {
            let row = &p[l.w1 + h * INPUT_DIM..l.w1 + (h + 1) * INPUT_DIM];
            let z: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + p[l.b1 + h];
            *out = z.tanh();
        }
        let mut logits = vec![0.0; self.vocab];
        for (v, out) in logits.iter_mut().enumerate() {
            let row = &p[l.w2 + v * HIDDEN_DIM..l.w2 + (v + 1) * HIDDEN_DIM];
            *out = row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>() + p[l.b2 + v];
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for z in &mut logits {
            *z = (*z - max).exp();
            total += *z;
        }
        if !total.is_finite() {
            return Err(ImmError::NonFinite("language model logits"));
        }
        logits.iter_mut().for_each(|z| *z /= total);
        Ok(Activations { input, hidden, probs: logits })
    }
}

impl DifferentiableModel for TinyNeuralLM {
    type Short = u32;
    type Ext = [u32; 2];

    fn num_labels(&self) -> usize {
        self.vocab
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, short: &u32, ext: &[u32; 2]) -> Result<Categorical> {
        Ok(Categorical::from_normalized_unchecked(self.activations(*short, ext)?.probs))
    }

    fn backward_weighted(&self, short: &u32, ext: &[u32; 2], weights: &[f64], grad: &mut [f64]) -> Result<()> {
        check_weights(weights, self.vocab)?;
        let l = Layout::new(self.vocab);
        let act = self.activations(*short, ext)?;
        let p = &self.params;
        let mass: f64 = weights.iter().sum();

        let dlogits: Vec<f64> = act.probs.iter().zip(weights).map(|(q, w)| mass * q - w).collect();
        let mut dhidden = [0.0; HIDDEN_DIM];
        for (v, &dz) in dlogits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            grad[l.b2 + v] += dz;
            let base = l.w2 + v * HIDDEN_DIM;
            for h in 0..HIDDEN_DIM {
                grad[base + h] += dz * act.hidden[h];
                dhidden[h] += dz * p[base + h];
            }
        }
        let mut dinput = [0.0; INPUT_DIM];
        for h in 0..HIDDEN_DIM {
            let da = dhidden[h] * (1.0 - act.hidden[h] * act.hidden[h]);
            grad[l.b1 + h] += da;
            let base = l.w1 + h * INPUT_DIM;
            for i in 0..INPUT_DIM {
                grad[base + i] += da * act.input[i];
                dinput[i] += da * p[base + i];
            }
        }
        let toks = [*short as usize, ext[0] as usize, ext[1] as usize];
        for (j, &t) in toks.iter().enumerate() {
            for e in 0..EMBED_DIM {
                grad[l.emb + t * EMBED_DIM + e] += dinput[j * EMBED_DIM + e];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{backward_weighted, fd_check, relative_error};

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut m = TinyNeuralLM::new(10, &mut RandomSource::new(4, 0));
        m.zero_output_layer();
        let q = m.forward(&3, &[1, 7]).unwrap();
        for &p in q.probs() {
            assert!((p - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_vocabulary_is_an_error() {
        let m = TinyNeuralLM::new(5, &mut RandomSource::new(4, 0));
        assert!(matches!(m.forward(&5, &[0, 0]), Err(ImmError::UnknownToken(_))));
        assert!(m.forward(&0, &[0, 9]).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = TinyNeuralLM::new(12, &mut RandomSource::new(8, 0));
        let a = m.forward(&2, &[5, 11]).unwrap();
        let b = m.forward(&2, &[5, 11]).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn backward_is_linear_in_weights() {
        let mut rng = RandomSource::new(9, 0);
        let m = TinyNeuralLM::new(7, &mut rng);
        let w1: Vec<f64> = (0..7).map(|_| rng.uniform(0.0, 1.0)).collect();
        let w2: Vec<f64> = (0..7).map(|_| rng.uniform(0.0, 1.0)).collect();
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let g1 = backward_weighted(&m, &1, &[2, 3], &w1).unwrap();
        let g2 = backward_weighted(&m, &1, &[2, 3], &w2).unwrap();
        let gs = backward_weighted(&m, &1, &[2, 3], &sum).unwrap();
        let added: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        for (a, b) in gs.iter().zip(&added) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(relative_error(&gs, &added) < 1e-12);
    }

    #[test]
    fn finite_differences_agree() {
        let mut rng = RandomSource::new(77, 0);
        for _ in 0..10 {
            let vocab = 6;
            let mut m = TinyNeuralLM::new(vocab, &mut rng);
            for p in m.params_mut() {
                *p *= 5.0;
            }
            let w: Vec<f64> = (0..vocab).map(|_| rng.uniform(0.0, 1.0)).collect();
            let short = rng.index(vocab) as u32;
            let ext = [rng.index(vocab) as u32, rng.index(vocab) as u32];
            assert!(fd_check(&m, &short, &ext, &w).unwrap() < 1e-4);
        }
    }
}
