//! Temporal abstraction and the discrete variational bottleneck.
//!
//! The encoder output `H^e` (length `M`) is halved `c` times by a CNN stack
//! into `O^e` (length `L = M / 2^c`), projected to code logits, discretized
//! (argmax at inference, Gumbel-Softmax relaxation during training), embedded
//! through the codebook, and rescaled back to length `M` by the transposed
//! stack for step-wise injection into the decoder.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{DvtError, Result};
use crate::nn::{DownsampleStack, UpsampleStack};
use crate::params::{init, ParamStore};
use crate::tensor::{argmax_rows, softmax_rows, Tape, TensorId};

/// Codebook: projection to logits plus learnable code embeddings, both the
/// model width.
pub struct CodeBook {
    /// `d x K`: maps a CNN output vector to `K` code logits.
    pub w_z: usize,
    /// `K x d`: one embedding row per code.
    pub e_z: usize,
    pub k: usize,
}

impl CodeBook {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, k: usize) -> Self {
        CodeBook {
            w_z: store.register(&format!("{name}.w_z"), init::normal(rng, (d, k), 0.02)),
            e_z: store.register(&format!("{name}.e_z"), init::normal(rng, (k, d), 0.02)),
            k,
        }
    }
}

/// Discretization mode: hard argmax (stage-2 targets, inference) or the
/// Gumbel-Softmax relaxation (stage-1 training and gradient tests).
pub enum QuantizeMode<'a> {
    Hard,
    Relaxed { tau: f64, noise: &'a Array2<f64> },
}

/// Tape handles produced by [`LatentCodec::quantize`].
pub struct Quantized {
    /// Code logits `t`, `L x K`.
    pub logits: TensorId,
    /// Hard codes `z = argmax_k t_k`, always computed.
    pub codes: Vec<usize>,
    /// Relaxed weights `w`, present in relaxed mode.
    pub weights: Option<TensorId>,
    /// Code embeddings `O^z`, `L x d`.
    pub code_emb: TensorId,
}

/// CNN stacks plus codebook.
pub struct LatentCodec {
    pub down: DownsampleStack,
    pub up: UpsampleStack,
    pub book: CodeBook,
    pub c: usize,
}

impl LatentCodec {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig) -> Self {
        LatentCodec {
            down: DownsampleStack::new(store, rng, &format!("{name}.down"), cfg.cnn_layers, cfg.d_model),
            up: UpsampleStack::new(store, rng, &format!("{name}.up"), cfg.cnn_layers, cfg.d_model),
            book: CodeBook::new(store, rng, &format!("{name}.book"), cfg.d_model, cfg.codebook_size),
            c: cfg.cnn_layers,
        }
    }

    pub fn block(&self) -> usize {
        1 << self.c
    }

    /// `M x d -> (M / 2^c) x d`. The input length must be divisible by `2^c`.
    pub fn downsample(&self, tape: &mut Tape, store: &ParamStore, h_e: TensorId) -> Result<TensorId> {
        let (m, _) = tape.shape(h_e);
        if m % self.block() != 0 {
            return Err(DvtError::Config(format!(
                "sequence length {m} is not divisible by the CNN block {}",
                self.block()
            )));
        }
        Ok(self.down.forward(tape, store, h_e))
    }

    /// `L x d -> (L * 2^c) x d`.
    pub fn upsample(&self, tape: &mut Tape, store: &ParamStore, o_z: TensorId) -> TensorId {
        self.up.forward(tape, store, o_z)
    }

    /// Project to logits and discretize.
    pub fn quantize(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        o_e: TensorId,
        mode: QuantizeMode,
    ) -> Result<Quantized> {
        let w_z = tape.param(store, self.book.w_z);
        let logits = tape.matmul(o_e, w_z);
        let codes = argmax_rows(tape.value(logits));
        match mode {
            QuantizeMode::Hard => {
                let e_z = tape.param(store, self.book.e_z);
                let code_emb = tape.embedding(e_z, &codes);
                Ok(Quantized { logits, codes, weights: None, code_emb })
            }
            QuantizeMode::Relaxed { tau, noise } => {
                if tau <= 0.0 {
                    return Err(DvtError::Config(format!("Gumbel temperature must be > 0, got {tau}")));
                }
                let (l, k) = tape.shape(logits);
                if noise.dim() != (l, k) {
                    return Err(DvtError::Config(format!(
                        "Gumbel noise shape {:?} does not match logits ({l}, {k})",
                        noise.dim()
                    )));
                }
                let g = tape.constant(noise.clone());
                let shifted = tape.add(logits, g);
                let scaled = tape.scale(shifted, 1.0 / tau);
                let weights = tape.row_softmax(scaled);
                let e_z = tape.param(store, self.book.e_z);
                let code_emb = tape.matmul(weights, e_z);
                Ok(Quantized { logits, codes, weights: Some(weights), code_emb })
            }
        }
    }

    /// Embed a given hard code sequence (used at inference with prior
    /// samples).
    pub fn embed_codes(&self, tape: &mut Tape, store: &ParamStore, codes: &[usize]) -> TensorId {
        let e_z = tape.param(store, self.book.e_z);
        tape.embedding(e_z, codes)
    }
}

/// Entropy of the position-averaged code distribution (natural log):
/// `H(mean_l softmax(t_l))`. Maximizing it pushes the model to spread
/// probability over the codebook.
pub fn entropy_reg(tape: &mut Tape, logits: TensorId) -> TensorId {
    let s = tape.row_softmax(logits);
    let p_bar = tape.mean_axis0(s);
    // The offset keeps ln finite when a softmax entry underflows to 0.
    let guarded = tape.add_scalar(p_bar, 1e-300);
    let lp = tape.ln(guarded);
    let prod = tape.mul(p_bar, lp);
    let sum = tape.sum_all(prod);
    tape.scale(sum, -1.0)
}

/// Plain-value twin of [`entropy_reg`] for reporting.
pub fn entropy_of_mean_softmax(logits: &Array2<f64>) -> f64 {
    let s = softmax_rows(logits);
    let p_bar = s.mean_axis(ndarray::Axis(0)).expect("nonempty");
    -p_bar.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>()
}

/// Sample i.i.d. standard Gumbel noise: `g = -ln(-ln(u))`, `u ~ U(0,1)`.
pub fn gumbel_noise(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| {
        let u: f64 = rng.random();
        let u = u.max(1e-300); // avoid ln(0)
        -(-(u.ln())).ln()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn codec(cfg: &ModelConfig) -> (LatentCodec, ParamStore) {
        let mut store = ParamStore::new();
        let mut r = rng::derive(3, &[rng::stream::INIT]);
        let codec = LatentCodec::new(&mut store, &mut r, "latent", cfg);
        (codec, store)
    }

    #[test]
    fn downsample_and_upsample_lengths() {
        let mut cfg = ModelConfig::tiny();
        cfg.cnn_layers = 3;
        let (codec, store) = codec(&cfg);
        let mut tape = Tape::new();
        // M = 16, c = 3 -> L = 2
        let x = tape.constant(Array2::from_shape_fn((16, 8), |(i, j)| (i + j) as f64 * 0.1));
        let d = codec.downsample(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(d), (2, 8));
        let u = codec.upsample(&mut tape, &store, d);
        assert_eq!(tape.shape(u), (16, 8));
        // indivisible length is rejected
        let bad = tape.constant(Array2::zeros((10, 8)));
        assert!(codec.downsample(&mut tape, &store, bad).is_err());
    }

    #[test]
    fn zero_layers_is_identity_length() {
        let mut cfg = ModelConfig::tiny();
        cfg.cnn_layers = 0;
        cfg.max_tgt_len = 16;
        let (codec, store) = codec(&cfg);
        let mut tape = Tape::new();
        let x = tape.constant(Array2::from_shape_fn((5, 8), |(i, j)| (i * j) as f64));
        let d = codec.downsample(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(d), (5, 8));
        assert_eq!(tape.value(d), tape.value(x));
        let u = codec.upsample(&mut tape, &store, d);
        assert_eq!(tape.shape(u), (5, 8));
    }

    #[test]
    fn hard_quantize_takes_argmax() {
        let cfg = ModelConfig::tiny();
        let (codec, mut store) = codec(&cfg);
        // Force known logits: set w_z so that t = o_e @ w_z has a known argmax.
        // With o_e = one-hot rows, t row = w_z row.
        let k = cfg.codebook_size;
        let mut w = Array2::zeros((8, k));
        w[(0, 1)] = 2.0;
        w[(0, 0)] = 0.1;
        w[(0, 2)] = -1.0;
        store.set(codec.book.w_z, w);
        let mut tape = Tape::new();
        let mut x = Array2::zeros((1, 8));
        x[(0, 0)] = 1.0;
        let o_e = tape.constant(x);
        let q = codec.quantize(&mut tape, &store, o_e, QuantizeMode::Hard).unwrap();
        assert_eq!(q.codes, vec![1]);
        // embedding row equals codebook row 1
        assert_eq!(tape.value(q.code_emb).row(0), store.value(codec.book.e_z).row(1));
    }

    #[test]
    fn relaxed_weights_match_closed_form() {
        let cfg = ModelConfig::tiny();
        let (codec, mut store) = codec(&cfg);
        // two-code book: shrink K by editing params directly
        let mut w = Array2::zeros((8, 7));
        // logits [0, 0, -inf...]: leave all zero except push other codes down
        for kk in 2..7 {
            w[(0, kk)] = -1e3;
        }
        store.set(codec.book.w_z, w);
        let mut tape = Tape::new();
        let mut x = Array2::zeros((1, 8));
        x[(0, 0)] = 1.0;
        let o_e = tape.constant(x);
        let noise = Array2::zeros((1, 7));
        let q = codec
            .quantize(&mut tape, &store, o_e, QuantizeMode::Relaxed { tau: 1.0, noise: &noise })
            .unwrap();
        let wv = tape.value(q.weights.unwrap());
        assert!((wv[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((wv[(0, 1)] - 0.5).abs() < 1e-9);

        // low temperature sharpens toward the argmax
        let mut tape = Tape::new();
        let logits = array![[0.0, 5.0]];
        let fake = tape.constant(logits);
        let scaled = tape.scale(fake, 1.0 / 0.01);
        let wv = tape.row_softmax(scaled);
        let wv = tape.value(wv);
        assert!(wv[(0, 0)] < 1e-9);
        assert!((wv[(0, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quantize_rejects_bad_temperature() {
        let cfg = ModelConfig::tiny();
        let (codec, store) = codec(&cfg);
        let mut tape = Tape::new();
        let x = tape.constant(Array2::zeros((1, 8)));
        let noise = Array2::zeros((1, 7));
        let r = codec.quantize(&mut tape, &store, x, QuantizeMode::Relaxed { tau: 0.0, noise: &noise });
        assert!(matches!(r, Err(DvtError::Config(_))));
    }

    #[test]
    fn entropy_reg_values() {
        // uniform logits over K=256 -> ln 256
        let mut tape = Tape::new();
        let t = tape.constant(Array2::zeros((4, 256)));
        let h = entropy_reg(&mut tape, t);
        assert!((tape.value(h)[(0, 0)] - 256f64.ln()).abs() < 1e-9);

        // near one-hot average -> ~0
        let mut tape = Tape::new();
        let mut l = Array2::zeros((3, 4));
        for i in 0..3 {
            l[(i, 2)] = 1e4;
        }
        let t = tape.constant(l);
        let h = entropy_reg(&mut tape, t);
        assert!(tape.value(h)[(0, 0)].abs() < 1e-9);

        // K=2 uniform -> ln 2
        assert!((entropy_of_mean_softmax(&Array2::zeros((1, 2))) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_reg_within_bounds_on_random_logits() {
        let mut r = rng::derive(11, &[rng::stream::INIT]);
        for trial in 0..20 {
            let k = 2 + (trial % 9);
            let l = 1 + (trial % 5);
            let logits = Array2::from_shape_fn((l, k), |_| r.random::<f64>() * 10.0 - 5.0);
            let h = entropy_of_mean_softmax(&logits);
            assert!(h >= -1e-12 && h <= (k as f64).ln() + 1e-12, "H={h} out of [0, ln {k}]");
        }
    }

    #[test]
    fn relaxed_rows_sum_to_one() {
        let cfg = ModelConfig::tiny();
        let (codec, store) = codec(&cfg);
        let mut r = rng::derive(5, &[rng::stream::GUMBEL]);
        let mut tape = Tape::new();
        let x = tape.constant(Array2::from_shape_fn((6, 8), |(i, j)| ((i * j) as f64).sin()));
        let noise = gumbel_noise(&mut r, (6, 7));
        let q = codec
            .quantize(&mut tape, &store, x, QuantizeMode::Relaxed { tau: 0.5, noise: &noise })
            .unwrap();
        let w = tape.value(q.weights.unwrap());
        for row in w.axis_iter(ndarray::Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            for &v in row {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn gumbel_max_matches_softmax_frequencies() {
        // Empirical argmax(t + g) frequencies track softmax(t) within
        // 3 standard errors per class.
        let t = array![[0.5, 1.0, -0.3, 0.2, 2.0]];
        let probs = softmax_rows(&t);
        let n = 100_000;
        let mut counts = [0usize; 5];
        let mut r = rng::derive(1234, &[rng::stream::GUMBEL]);
        for _ in 0..n {
            let g = gumbel_noise(&mut r, (1, 5));
            let perturbed = &t + &g;
            counts[argmax_rows(&perturbed)[0]] += 1;
        }
        for k in 0..5 {
            let p = probs[(0, k)];
            let freq = counts[k] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "class {k}: freq {freq} vs p {p} (3se = {})",
                3.0 * se
            );
        }
    }
}
