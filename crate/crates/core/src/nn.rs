//! Transformer building blocks and 1-d convolution stacks on top of the tape.
//!
//! Layers hold parameter ids into a [`ParamStore`]; `forward` methods record
//! onto a [`Tape`]. Pre-norm residual blocks throughout.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::params::{init, ParamStore};
use crate::tensor::{Tape, TensorId};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Per-forward context: dropout is active only in training mode and draws
/// masks from the provided RNG.
pub struct FwdCtx<'a> {
    pub train: bool,
    pub dropout: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl FwdCtx<'_> {
    /// Inference context: no dropout, no randomness.
    pub fn eval() -> FwdCtx<'static> {
        FwdCtx { train: false, dropout: 0.0, rng: None }
    }

    pub fn apply_dropout(&mut self, tape: &mut Tape, x: TensorId) -> TensorId {
        if !self.train || self.dropout <= 0.0 {
            return x;
        }
        let rng = self.rng.as_mut().expect("training forward needs an RNG for dropout");
        let keep = 1.0 - self.dropout;
        let shape = tape.shape(x);
        let mask = Array2::from_shape_fn(shape, |_| {
            if rand::Rng::random::<f64>(rng) < keep { 1.0 / keep } else { 0.0 }
        });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let w = store.register(&format!("{name}.w"), init::normal(rng, (d_in, d_out), INIT_STD));
        let b = bias.then(|| store.register(&format!("{name}.b"), init::zeros((1, d_out))));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> TensorId {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.register(&format!("{name}.gain"), init::ones((1, dim))),
            bias: store.register(&format!("{name}.bias"), init::zeros((1, dim))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> TensorId {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Multi-head attention. Query and key/value sources may differ
/// (cross-attention); `mask` is an additive `len_q x len_k` bias.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        heads: usize,
    ) -> Self {
        assert_eq!(d_model % heads, 0);
        MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), d_model, d_model, true),
            k: Linear::new(store, rng, &format!("{name}.k"), d_model, d_model, true),
            v: Linear::new(store, rng, &format!("{name}.v"), d_model, d_model, true),
            o: Linear::new(store, rng, &format!("{name}.o"), d_model, d_model, true),
            heads,
            d_model,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: TensorId,
        kv: TensorId,
        mask: Option<&Array2<f64>>,
    ) -> TensorId {
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(tape, store, query);
        let k = self.k.forward(tape, store, kv);
        let v = self.v.forward(tape, store, kv);
        let mask_id = mask.map(|m| tape.constant(m.clone()));
        let mut ctx_heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, scale);
            let scores = match mask_id {
                Some(m) => tape.add(scores, m),
                None => scores,
            };
            let attn = tape.row_softmax(scores);
            ctx_heads.push(tape.matmul(attn, vh));
        }
        let ctx = tape.concat_cols(&ctx_heads);
        self.o.forward(tape, store, ctx)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        d_ff: usize,
    ) -> Self {
        FeedForward {
            w1: Linear::new(store, rng, &format!("{name}.w1"), d_model, d_ff, true),
            w2: Linear::new(store, rng, &format!("{name}.w2"), d_ff, d_model, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> TensorId {
        let h = self.w1.forward(tape, store, x);
        let h = tape.gelu(h);
        self.w2.forward(tape, store, h)
    }
}

/// Pre-norm encoder block: `x + attn(ln(x))`, `x + ffn(ln(x))`.
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d_model, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d_model, d_ff),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
        mask: Option<&Array2<f64>>,
        ctx: &mut FwdCtx,
    ) -> TensorId {
        let n = self.ln1.forward(tape, store, x);
        let a = self.attn.forward(tape, store, n, n, mask);
        let a = ctx.apply_dropout(tape, a);
        let x = tape.add(x, a);
        let n = self.ln2.forward(tape, store, x);
        let f = self.ffn.forward(tape, store, n);
        let f = ctx.apply_dropout(tape, f);
        tape.add(x, f)
    }
}

/// Pre-norm decoder block with causal self-attention and cross-attention.
pub struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        DecoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self"), d_model, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross"), d_model, heads),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d_model),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d_model, d_ff),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
        memory: TensorId,
        causal_mask: &Array2<f64>,
        ctx: &mut FwdCtx,
    ) -> TensorId {
        let n = self.ln1.forward(tape, store, x);
        let a = self.self_attn.forward(tape, store, n, n, Some(causal_mask));
        let a = ctx.apply_dropout(tape, a);
        let x = tape.add(x, a);
        let n = self.ln2.forward(tape, store, x);
        let c = self.cross_attn.forward(tape, store, n, memory, None);
        let c = ctx.apply_dropout(tape, c);
        let x = tape.add(x, c);
        let n = self.ln3.forward(tape, store, x);
        let f = self.ffn.forward(tape, store, n);
        let f = ctx.apply_dropout(tape, f);
        tape.add(x, f)
    }
}

/// Encoder stack with a final layer norm.
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub final_ln: LayerNorm,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        n_layers: usize,
        d_model: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("{name}.layer{i}"), d_model, heads, d_ff))
            .collect();
        Encoder { layers, final_ln: LayerNorm::new(store, &format!("{name}.final_ln"), d_model) }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut x: TensorId,
        mask: Option<&Array2<f64>>,
        ctx: &mut FwdCtx,
    ) -> TensorId {
        for layer in &self.layers {
            x = layer.forward(tape, store, x, mask, ctx);
        }
        self.final_ln.forward(tape, store, x)
    }
}

/// Decoder stack with a final layer norm.
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub final_ln: LayerNorm,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        n_layers: usize,
        d_model: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|i| DecoderLayer::new(store, rng, &format!("{name}.layer{i}"), d_model, heads, d_ff))
            .collect();
        Decoder { layers, final_ln: LayerNorm::new(store, &format!("{name}.final_ln"), d_model) }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut x: TensorId,
        memory: TensorId,
        causal_mask: &Array2<f64>,
        ctx: &mut FwdCtx,
    ) -> TensorId {
        for layer in &self.layers {
            x = layer.forward(tape, store, x, memory, causal_mask, ctx);
        }
        self.final_ln.forward(tape, store, x)
    }
}

const CONV_KERNEL: usize = 4;
const CONV_STRIDE: usize = 2;
const CONV_PAD: usize = 1;

/// One halving convolution: kernel 4, stride 2, one zero pad per side, so an
/// even input length `L` maps to exactly `L/2`.
pub struct ConvHalve {
    pub w: usize,
    pub b: usize,
    channels: usize,
}

impl ConvHalve {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        ConvHalve {
            w: store.register(
                &format!("{name}.w"),
                init::normal(rng, (CONV_KERNEL * channels, channels), INIT_STD),
            ),
            b: store.register(&format!("{name}.b"), init::zeros((1, channels))),
            channels,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> TensorId {
        let (len, c) = tape.shape(x);
        assert_eq!(c, self.channels);
        assert_eq!(len % 2, 0, "halving conv needs an even input length");
        let u = tape.unfold1d(x, CONV_KERNEL, CONV_STRIDE, CONV_PAD);
        let w = tape.param(store, self.w);
        let y = tape.matmul(u, w);
        let b = tape.param(store, self.b);
        tape.add_row(y, b)
    }
}

/// One doubling transposed convolution with the symmetric geometry.
pub struct ConvDouble {
    pub w: usize,
    pub b: usize,
    channels: usize,
}

impl ConvDouble {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        ConvDouble {
            w: store.register(
                &format!("{name}.w"),
                init::normal(rng, (channels, CONV_KERNEL * channels), INIT_STD),
            ),
            b: store.register(&format!("{name}.b"), init::zeros((1, channels))),
            channels,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> TensorId {
        let (len, c) = tape.shape(x);
        assert_eq!(c, self.channels);
        let z = {
            let w = tape.param(store, self.w);
            tape.matmul(x, w)
        };
        let y = tape.fold1d(z, CONV_KERNEL, CONV_STRIDE, CONV_PAD, len * 2);
        let b = tape.param(store, self.b);
        tape.add_row(y, b)
    }
}

/// `c`-layer halving stack: length `M -> M / 2^c`. GELU between layers,
/// linear final layer.
pub struct DownsampleStack {
    pub convs: Vec<ConvHalve>,
}

impl DownsampleStack {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, channels: usize) -> Self {
        DownsampleStack {
            convs: (0..c).map(|i| ConvHalve::new(store, rng, &format!("{name}.conv{i}"), channels)).collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: TensorId) -> TensorId {
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(tape, store, x);
            if i + 1 < self.convs.len() {
                x = tape.gelu(x);
            }
        }
        x
    }
}

/// `c`-layer doubling stack: length `L -> L * 2^c`, symmetric to
/// [`DownsampleStack`].
pub struct UpsampleStack {
    pub convs: Vec<ConvDouble>,
}

impl UpsampleStack {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, channels: usize) -> Self {
        UpsampleStack {
            convs: (0..c).map(|i| ConvDouble::new(store, rng, &format!("{name}.conv{i}"), channels)).collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: TensorId) -> TensorId {
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(tape, store, x);
            if i + 1 < self.convs.len() {
                x = tape.gelu(x);
            }
        }
        x
    }
}

/// Additive causal mask: 0 at or below the diagonal, a large negative number
/// above it.
pub fn causal_mask(len: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, len), |(i, j)| if j <= i { 0.0 } else { -1e30 })
}

/// Additive key-padding mask: every query sees a large negative bias at pad
/// key columns.
pub fn key_pad_mask(pad: &[bool]) -> Array2<f64> {
    let n = pad.len();
    Array2::from_shape_fn((n, n), |(_, j)| if pad[j] { -1e30 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn test_rng() -> ChaCha8Rng {
        rng::derive(42, &[rng::stream::INIT])
    }

    #[test]
    fn conv_halve_then_double_restores_length() {
        let mut store = ParamStore::new();
        let mut r = test_rng();
        let down = ConvHalve::new(&mut store, &mut r, "down", 6);
        let up = ConvDouble::new(&mut store, &mut r, "up", 6);
        let mut tape = Tape::new();
        let x = tape.constant(Array2::from_shape_fn((16, 6), |(i, j)| (i * j) as f64 * 0.01));
        let d = down.forward(&mut tape, &store, x);
        assert_eq!(tape.shape(d), (8, 6));
        let u = up.forward(&mut tape, &store, d);
        assert_eq!(tape.shape(u), (16, 6));
    }

    #[test]
    fn encoder_shape_and_determinism() {
        let mut store = ParamStore::new();
        let mut r = test_rng();
        let enc = Encoder::new(&mut store, &mut r, "enc", 2, 8, 2, 16);
        let x_val = Array2::from_shape_fn((5, 8), |(i, j)| ((i + j) as f64).sin() * 0.1);
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.constant(x_val.clone());
            let y = enc.forward(&mut tape, store, x, None, &mut FwdCtx::eval());
            tape.value(y).clone()
        };
        let a = run(&store);
        let b = run(&store);
        assert_eq!(tape_shape(&a), (5, 8));
        assert_eq!(a, b);
    }

    fn tape_shape(a: &Array2<f64>) -> (usize, usize) {
        (a.nrows(), a.ncols())
    }

    #[test]
    fn decoder_causal_masking_blocks_future() {
        // Changing a future target position must not change earlier outputs.
        let mut store = ParamStore::new();
        let mut r = test_rng();
        let dec = Decoder::new(&mut store, &mut r, "dec", 2, 8, 2, 16);
        let mem_val = Array2::from_shape_fn((3, 8), |(i, j)| (i as f64 - j as f64) * 0.05);
        let base = Array2::from_shape_fn((6, 8), |(i, j)| ((i * 31 + j) as f64).cos() * 0.1);
        let mut changed = base.clone();
        changed[(5, 0)] += 1.0;
        let run = |x_val: &Array2<f64>| {
            let mut tape = Tape::new();
            let x = tape.constant(x_val.clone());
            let mem = tape.constant(mem_val.clone());
            let mask = causal_mask(6);
            let y = dec.forward(&mut tape, &store, x, mem, &mask, &mut FwdCtx::eval());
            tape.value(y).clone()
        };
        let a = run(&base);
        let b = run(&changed);
        for i in 0..5 {
            for j in 0..8 {
                assert_eq!(a[(i, j)], b[(i, j)], "position {i} saw the future");
            }
        }
        assert_ne!(a.row(5), b.row(5));
    }

    #[test]
    fn attention_grads_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut r = test_rng();
        let mha = MultiHeadAttention::new(&mut store, &mut r, "mha", 8, 2);
        let x_val = Array2::from_shape_fn((4, 8), |(i, j)| ((i * 7 + j) as f64).sin() * 0.3);
        let build = |store: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.constant(x_val.clone());
            let mask = causal_mask(4);
            let y = mha.forward(&mut tape, store, x, x, Some(&mask));
            let loss = tape.mean_all(y);
            let g = tape.backward(loss, store.len());
            (tape.value(loss)[(0, 0)], g)
        };
        let (_, grads) = build(&store);
        let pid = store.id_of("mha.q.w").unwrap();
        let analytic = grads.get(pid).unwrap().clone();
        let h = 1e-6;
        for &at in &[(0usize, 0usize), (3, 5), (7, 7)] {
            let orig = store.value(pid)[at];
            store.set_entry(pid, at, orig + h);
            let (fp, _) = build(&store);
            store.set_entry(pid, at, orig - h);
            let (fm, _) = build(&store);
            store.set_entry(pid, at, orig);
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[at];
            assert!(
                (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-5,
                "attention grad mismatch at {at:?}: {a} vs {fd}"
            );
        }
    }
}
