//! Stage-1 model: posterior encoder, prompt encoder, code-conditioned
//! decoder, and the training losses.
//!
//! The posterior encodes the story, the CNN stack abstracts it into code
//! logits, and the relaxed code embeddings are rescaled back to story length
//! and added to the decoder's input embeddings at every step. Three losses
//! combine into the minimized stage-1 objective
//! `L_recon - lambda1 * L_entr + lambda2 * L_disc`:
//! masked token NLL, entropy of the average code distribution, and
//! cross-entropy of the bi-affine discourse head over adjacent EDU pairs.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{PromptStoryPair, BOS};
use crate::discourse::{label_id, DiscourseAnnotation};
use crate::error::{DvtError, Result};
use crate::latent::{entropy_reg, LatentCodec, QuantizeMode};
use crate::nn::{causal_mask, key_pad_mask, Decoder, Encoder, FwdCtx};
use crate::params::{init, ParamStore};
use crate::rng;
use crate::tensor::{Tape, TensorId};

/// Which encoder to run on a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Posterior,
    Prompt,
}

pub struct Stage1Model {
    pub cfg: ModelConfig,
    /// Token embeddings, shared by both encoders, the decoder input, and the
    /// (tied) output projection.
    pub token_emb: usize,
    pub pos_emb: usize,
    pub posterior: Encoder,
    pub prompt_enc: Encoder,
    pub decoder: Decoder,
    pub codec: LatentCodec,
    /// Bi-affine tensor, stored `(R*d) x d`.
    pub w_d: usize,
    /// Relation bias, `1 x R`.
    pub b_d: usize,
}

impl Stage1Model {
    /// Build the model and its parameter store; weights are seeded so the
    /// construction is reproducible.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng::derive(seed, &[rng::stream::INIT]);
        let d = cfg.d_model;
        let token_emb = store.register("token_emb", init::normal(&mut r, (cfg.vocab_size, d), 0.02));
        let pos_emb = store.register("pos_emb", init::normal(&mut r, (cfg.max_positions, d), 0.02));
        let posterior =
            Encoder::new(&mut store, &mut r, "posterior", cfg.enc_layers, d, cfg.heads, cfg.ffn_dim);
        let prompt_enc =
            Encoder::new(&mut store, &mut r, "prompt_enc", cfg.enc_layers, d, cfg.heads, cfg.ffn_dim);
        let decoder = Decoder::new(&mut store, &mut r, "decoder", cfg.dec_layers, d, cfg.heads, cfg.ffn_dim);
        let codec = LatentCodec::new(&mut store, &mut r, "latent", cfg);
        let w_d = store.register("disc.w_d", init::normal(&mut r, (cfg.num_relations * d, d), 0.02));
        let b_d = store.register("disc.b_d", init::zeros((1, cfg.num_relations)));
        Ok((Stage1Model { cfg: cfg.clone(), token_emb, pos_emb, posterior, prompt_enc, decoder, codec, w_d, b_d }, store))
    }

    /// Rebuild a model around a loaded checkpoint config.
    pub fn from_config_value(config: &serde_json::Value) -> Result<(Self, ParamStore)> {
        let cfg: ModelConfig = serde_json::from_value(config.clone())
            .map_err(|e| DvtError::Checkpoint(format!("bad model config in checkpoint: {e}")))?;
        Stage1Model::new(&cfg, 0)
    }

    fn embed_with_positions(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<TensorId> {
        if ids.len() > self.cfg.max_positions {
            return Err(DvtError::Config(format!(
                "sequence of {} tokens exceeds max_positions {}",
                ids.len(),
                self.cfg.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(DvtError::Data(format!("token id {bad} outside vocab of {}", self.cfg.vocab_size)));
        }
        let table = tape.param(store, self.token_emb);
        let tok = tape.embedding(table, ids);
        let pos_table = tape.param(store, self.pos_emb);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embedding(pos_table, &positions);
        Ok(tape.add(tok, pos))
    }

    /// Bidirectional encoding of a token sequence. The posterior path masks
    /// pad keys; the prompt path always sees a leading `<bos>` memory slot so
    /// cross-attention is well-defined even for empty prompts.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[usize],
        which: EncoderKind,
        pad: Option<&[bool]>,
        ctx: &mut FwdCtx,
    ) -> Result<TensorId> {
        match which {
            EncoderKind::Posterior => {
                let x = self.embed_with_positions(tape, store, ids)?;
                let x = ctx.apply_dropout(tape, x);
                let mask = pad.filter(|p| p.iter().any(|&b| b)).map(key_pad_mask);
                Ok(self.posterior.forward(tape, store, x, mask.as_ref(), ctx))
            }
            EncoderKind::Prompt => {
                let mut with_bos = Vec::with_capacity(ids.len() + 1);
                with_bos.push(BOS);
                with_bos.extend_from_slice(ids);
                let x = self.embed_with_positions(tape, store, &with_bos)?;
                let x = ctx.apply_dropout(tape, x);
                Ok(self.prompt_enc.forward(tape, store, x, None, ctx))
            }
        }
    }

    /// Teacher-forced decoding. The input embedding at step `m` is
    /// `h^z_m + e_m + p_m` where `e_m` embeds the previous target token;
    /// output logits are tied to the token embedding table.
    pub fn decode_with_codes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        target_ids: &[usize],
        h_z: Option<TensorId>,
        memory: TensorId,
        ctx: &mut FwdCtx,
    ) -> Result<TensorId> {
        let m = target_ids.len();
        if m == 0 {
            return Err(DvtError::Data("empty decoding target".into()));
        }
        let mut dec_in = Vec::with_capacity(m);
        dec_in.push(BOS);
        dec_in.extend_from_slice(&target_ids[..m - 1]);
        self.decode_inputs(tape, store, &dec_in, h_z, memory, ctx)
    }

    /// Decoder forward on already-shifted input ids (step-wise generation
    /// feeds `[<bos>, generated...]` here directly).
    pub fn decode_inputs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input_ids: &[usize],
        h_z: Option<TensorId>,
        memory: TensorId,
        ctx: &mut FwdCtx,
    ) -> Result<TensorId> {
        let m = input_ids.len();
        if let Some(h) = h_z {
            let (hm, _) = tape.shape(h);
            if hm != m {
                return Err(DvtError::Config(format!(
                    "code guidance has length {hm} but the decoder input has {m} positions"
                )));
            }
        }
        let emb = self.embed_with_positions(tape, store, input_ids)?;
        let emb = match h_z {
            Some(h) => tape.add(emb, h),
            None => emb,
        };
        let emb = ctx.apply_dropout(tape, emb);
        let mask = causal_mask(m);
        let out = self.decoder.forward(tape, store, emb, memory, &mask, ctx);
        let table = tape.param(store, self.token_emb);
        let table_t = tape.transpose(table);
        Ok(tape.matmul(out, table_t))
    }

    /// Mean NLL of the target over non-pad positions (natural log).
    pub fn reconstruction_loss(
        &self,
        tape: &mut Tape,
        logits: TensorId,
        target_ids: &[usize],
        pad_mask: &[bool],
    ) -> Result<TensorId> {
        let weights: Vec<f64> = pad_mask.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect();
        if weights.iter().sum::<f64>() == 0.0 {
            return Err(DvtError::Eval("reconstruction loss undefined: all positions padded".into()));
        }
        let logp = tape.row_log_softmax(logits);
        Ok(tape.masked_nll(logp, target_ids, &weights))
    }

    /// Bi-affine relation logits for one ordered pair of pooled EDU vectors.
    fn pair_logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pooled: TensorId,
        i: usize,
    ) -> TensorId {
        let d = self.cfg.d_model;
        let r = self.cfg.num_relations;
        let h_i = tape.slice_rows(pooled, i, 1);
        let h_j = tape.slice_rows(pooled, i + 1, 1);
        let w = tape.param(store, self.w_d);
        let h_j_col = tape.transpose(h_j);
        let u = tape.matmul(w, h_j_col); // (R*d) x 1
        let u = tape.reshape(u, r, d);
        let h_i_col = tape.transpose(h_i);
        let v = tape.matmul(u, h_i_col); // R x 1
        let v = tape.transpose(v);
        let b = tape.param(store, self.b_d);
        tape.add(v, b)
    }

    /// Mean cross-entropy over adjacent EDU pairs; 0 for single-EDU
    /// passages. Pools `H^z` rows over each EDU span.
    pub fn discourse_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_z: TensorId,
        annotation: &DiscourseAnnotation,
    ) -> Result<TensorId> {
        let (m, _) = tape.shape(h_z);
        if annotation.num_edus() < 2 {
            return Ok(tape.constant(Array2::zeros((1, 1))));
        }
        for &(s, e) in &annotation.edus {
            if s > e || e >= m {
                return Err(DvtError::Data(format!(
                    "EDU span ({s},{e}) outside the {m}-token latent sequence"
                )));
            }
        }
        let pooled = tape.span_means(h_z, &annotation.edus);
        let n_pairs = annotation.num_edus() - 1;
        let mut total: Option<TensorId> = None;
        for i in 0..n_pairs {
            let logits = self.pair_logits(tape, store, pooled, i);
            let logp = tape.row_log_softmax(logits);
            let target = label_id(&annotation.labels[i]);
            let nll = tape.masked_nll(logp, &[target], &[1.0]);
            total = Some(match total {
                Some(t) => tape.add(t, nll),
                None => nll,
            });
        }
        Ok(tape.scale(total.expect("n_pairs >= 1"), 1.0 / n_pairs as f64))
    }

    /// Predicted relation ids for each adjacent EDU pair (evaluation).
    pub fn discourse_predictions(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_z: TensorId,
        annotation: &DiscourseAnnotation,
    ) -> Vec<usize> {
        if annotation.num_edus() < 2 {
            return Vec::new();
        }
        let pooled = tape.span_means(h_z, &annotation.edus);
        (0..annotation.num_edus() - 1)
            .map(|i| {
                let logits = self.pair_logits(tape, store, pooled, i);
                crate::tensor::argmax_rows(tape.value(logits))[0]
            })
            .collect()
    }
}

/// Knobs for one stage-1 forward pass.
pub struct Stage1Opts {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Warm-start trains unconditionally: the prompt is replaced by the
    /// bare `<bos>` memory slot.
    pub use_prompt: bool,
}

/// Scalar views of the loss terms plus tape handles for backprop.
pub struct Stage1Output {
    pub total: TensorId,
    pub recon: f64,
    pub entr: f64,
    pub disc: f64,
    pub codes: Vec<usize>,
}

/// Full stage-1 forward on one example with the Gumbel noise supplied by the
/// caller (sampled per step during training, fixed in gradient tests).
pub fn stage1_forward(
    tape: &mut Tape,
    store: &ParamStore,
    model: &Stage1Model,
    example: &PromptStoryPair,
    noise: &Array2<f64>,
    opts: &Stage1Opts,
    ctx: &mut FwdCtx,
) -> Result<Stage1Output> {
    let h_e = model.encode(
        tape,
        store,
        &example.story_ids,
        EncoderKind::Posterior,
        Some(&example.story_mask),
        ctx,
    )?;
    let o_e = model.codec.downsample(tape, store, h_e)?;
    let q = model.codec.quantize(tape, store, o_e, QuantizeMode::Relaxed { tau: opts.tau, noise })?;
    let h_z = model.codec.upsample(tape, store, q.code_emb);
    let prompt: &[usize] = if opts.use_prompt { &example.prompt_ids } else { &[] };
    let memory = model.encode(tape, store, prompt, EncoderKind::Prompt, None, ctx)?;
    let logits = model.decode_with_codes(tape, store, &example.story_ids, Some(h_z), memory, ctx)?;
    let recon = model.reconstruction_loss(tape, logits, &example.story_ids, &example.story_mask)?;
    let entr = entropy_reg(tape, q.logits);
    let disc = match &example.annotation {
        Some(ann) if opts.lambda2 > 0.0 => Some(model.discourse_loss(tape, store, h_z, ann)?),
        _ => None,
    };

    let recon_v = tape.value(recon)[(0, 0)];
    let entr_v = tape.value(entr)[(0, 0)];
    let disc_v = disc.map(|d| tape.value(d)[(0, 0)]).unwrap_or(0.0);

    let neg_entr = tape.scale(entr, -opts.lambda1);
    let mut total = tape.add(recon, neg_entr);
    if let Some(d) = disc {
        let d = tape.scale(d, opts.lambda2);
        total = tape.add(total, d);
    }
    Ok(Stage1Output { total, recon: recon_v, entr: entr_v, disc: disc_v, codes: q.codes })
}

/// Hard posterior codes of one example (no noise, eval mode).
pub fn posterior_codes(
    store: &ParamStore,
    model: &Stage1Model,
    example: &PromptStoryPair,
) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let mut ctx = FwdCtx::eval();
    let h_e = model.encode(
        &mut tape,
        store,
        &example.story_ids,
        EncoderKind::Posterior,
        Some(&example.story_mask),
        &mut ctx,
    )?;
    let o_e = model.codec.downsample(&mut tape, store, h_e)?;
    let q = model.codec.quantize(&mut tape, store, o_e, QuantizeMode::Hard)?;
    Ok(q.codes)
}

/// Evaluation reconstruction NLL with an explicit hard code sequence
/// (pass posterior codes for the true-codes score, shuffled ones for the
/// control).
pub fn recon_with_codes(
    store: &ParamStore,
    model: &Stage1Model,
    example: &PromptStoryPair,
    codes: &[usize],
    use_prompt: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut ctx = FwdCtx::eval();
    let expected = example.story_ids.len() / model.codec.block();
    if codes.len() != expected {
        return Err(DvtError::Config(format!(
            "{} codes given, but a {}-token story needs {expected}",
            codes.len(),
            example.story_ids.len()
        )));
    }
    let emb = model.codec.embed_codes(&mut tape, store, codes);
    let h_z = model.codec.upsample(&mut tape, store, emb);
    let prompt: &[usize] = if use_prompt { &example.prompt_ids } else { &[] };
    let memory = model.encode(&mut tape, store, prompt, EncoderKind::Prompt, None, &mut ctx)?;
    let logits =
        model.decode_with_codes(&mut tape, store, &example.story_ids, Some(h_z), memory, &mut ctx)?;
    let loss = model.reconstruction_loss(&mut tape, logits, &example.story_ids, &example.story_mask)?;
    Ok(tape.value(loss)[(0, 0)])
}

/// Per-pair (predicted, gold) discourse label ids on one example, using the
/// hard posterior path.
pub fn discourse_eval(
    store: &ParamStore,
    model: &Stage1Model,
    example: &PromptStoryPair,
) -> Result<Vec<(usize, usize)>> {
    let Some(ann) = &example.annotation else { return Ok(Vec::new()) };
    if ann.num_edus() < 2 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let mut ctx = FwdCtx::eval();
    let h_e = model.encode(
        &mut tape,
        store,
        &example.story_ids,
        EncoderKind::Posterior,
        Some(&example.story_mask),
        &mut ctx,
    )?;
    let o_e = model.codec.downsample(&mut tape, store, h_e)?;
    let q = model.codec.quantize(&mut tape, store, o_e, QuantizeMode::Hard)?;
    let h_z = model.codec.upsample(&mut tape, store, q.code_emb);
    let preds = model.discourse_predictions(&mut tape, store, h_z, ann);
    Ok(preds
        .into_iter()
        .zip(ann.labels.iter().map(|l| label_id(l)))
        .collect())
}

/// Gumbel noise shape for one example: `(story_len / 2^c, K)`.
pub fn noise_shape(model: &Stage1Model, example: &PromptStoryPair) -> (usize, usize) {
    (example.story_ids.len() / model.codec.block(), model.cfg.codebook_size)
}

/// Per-(step, example) Gumbel noise stream.
pub fn step_noise(
    model: &Stage1Model,
    example: &PromptStoryPair,
    seed: u64,
    step: usize,
    index: usize,
) -> Array2<f64> {
    let mut r = rng::derive(seed, &[rng::stream::GUMBEL, step as u64, index as u64]);
    crate::latent::gumbel_noise(&mut r, noise_shape(model, example))
}

/// Dropout RNG for one (step, example).
pub fn step_dropout_rng(seed: u64, step: usize, index: usize) -> ChaCha8Rng {
    rng::derive(seed, &[rng::stream::DROPOUT, step as u64, index as u64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{pad_to_block, PromptStoryPair};
    use crate::tensor::argmax_rows;

    fn tiny_model() -> (Stage1Model, ParamStore) {
        Stage1Model::new(&ModelConfig::tiny(), 7).unwrap()
    }

    fn example(story_len: usize, with_ann: bool) -> PromptStoryPair {
        let story: Vec<usize> = (0..story_len).map(|i| 4 + (i % 12)).collect();
        let (story_ids, story_mask) = pad_to_block(&story, 8).unwrap();
        let annotation = with_ann.then(|| DiscourseAnnotation {
            edus: vec![(0, 4), (5, 9), (10, story_len.min(story_ids.len()) - 1)],
            labels: vec!["and_arg1_arg2".to_string(), "unknown".to_string()],
        });
        PromptStoryPair { prompt_ids: vec![5, 6, 7], story_ids, story_mask, annotation }
    }

    #[test]
    fn encoder_shapes_and_determinism() {
        let (model, store) = tiny_model();
        let mut tape = Tape::new();
        let mut ctx = FwdCtx::eval();
        let ids: Vec<usize> = (0..16).map(|i| 4 + (i % 10)).collect();
        let h = model.encode(&mut tape, &store, &ids, EncoderKind::Posterior, None, &mut ctx).unwrap();
        assert_eq!(tape.shape(h), (16, 8));
        // empty prompt still yields a single-slot memory
        let mem = model.encode(&mut tape, &store, &[], EncoderKind::Prompt, None, &mut ctx).unwrap();
        assert_eq!(tape.shape(mem), (1, 8));
        // identical inputs, identical outputs
        let h2 = model.encode(&mut tape, &store, &ids, EncoderKind::Posterior, None, &mut ctx).unwrap();
        assert_eq!(tape.value(h), tape.value(h2));
        // overlength input rejected
        let long = vec![4usize; 40];
        assert!(model.encode(&mut tape, &store, &long, EncoderKind::Posterior, None, &mut ctx).is_err());
    }

    #[test]
    fn zero_codes_match_plain_decoder_bitwise() {
        let (model, store) = tiny_model();
        let ex = example(16, false);
        let mut ctx = FwdCtx::eval();

        let mut tape = Tape::new();
        let memory = model.encode(&mut tape, &store, &ex.prompt_ids, EncoderKind::Prompt, None, &mut ctx).unwrap();
        let zeros = tape.constant(Array2::zeros((16, 8)));
        let with_zeros = model
            .decode_with_codes(&mut tape, &store, &ex.story_ids, Some(zeros), memory, &mut ctx)
            .unwrap();

        let mut tape2 = Tape::new();
        let memory2 =
            model.encode(&mut tape2, &store, &ex.prompt_ids, EncoderKind::Prompt, None, &mut ctx).unwrap();
        let plain = model
            .decode_with_codes(&mut tape2, &store, &ex.story_ids, None, memory2, &mut ctx)
            .unwrap();

        assert_eq!(tape.value(with_zeros), tape2.value(plain));
        assert_eq!(tape.shape(with_zeros), (16, 16)); // M x vocab
    }

    #[test]
    fn shifted_codes_change_logits() {
        let (model, store) = tiny_model();
        let ex = example(16, false);
        let codes = posterior_codes(&store, &model, &ex).unwrap();
        assert_eq!(codes.len(), 2);
        let base = recon_with_codes(&store, &model, &ex, &codes, true).unwrap();
        let mut rolled = codes.clone();
        rolled.rotate_right(1);
        // rotating the (random-init) codes gives a different loss unless the
        // two codes coincide
        if rolled != codes {
            let moved = recon_with_codes(&store, &model, &ex, &rolled, true).unwrap();
            assert_ne!(base, moved);
        }
    }

    #[test]
    fn uniform_and_perfect_reconstruction_bounds() {
        let (model, _store) = tiny_model();
        let ex = example(13, false);
        // all-zero logits = uniform distribution -> ln V
        let mut tape = Tape::new();
        let logits = tape.constant(Array2::zeros((16, 16)));
        let loss = model
            .reconstruction_loss(&mut tape, logits, &ex.story_ids, &ex.story_mask)
            .unwrap();
        assert!((tape.value(loss)[(0, 0)] - (16f64).ln()).abs() < 1e-12);

        // near-perfect prediction -> ~0
        let mut tape = Tape::new();
        let mut sharp = Array2::zeros((16, 16));
        for (m, &t) in ex.story_ids.iter().enumerate() {
            sharp[(m, t)] = 1e4;
        }
        let logits = tape.constant(sharp);
        let loss = model
            .reconstruction_loss(&mut tape, logits, &ex.story_ids, &ex.story_mask)
            .unwrap();
        assert!(tape.value(loss)[(0, 0)].abs() < 1e-9);

        // all-pad is an error
        let mut tape = Tape::new();
        let logits = tape.constant(Array2::zeros((16, 16)));
        let r = model.reconstruction_loss(&mut tape, logits, &ex.story_ids, &vec![true; 16]);
        assert!(r.is_err());
    }

    #[test]
    fn discourse_loss_uniform_and_single_edu() {
        let (model, mut store) = tiny_model();
        // zero bi-affine weights -> uniform over 21 labels -> ln 21 per pair
        store.set(model.w_d, Array2::zeros((21 * 8, 8)));
        store.set(model.b_d, Array2::zeros((1, 21)));
        let mut tape = Tape::new();
        let h_z = tape.constant(Array2::from_shape_fn((16, 8), |(i, j)| ((i + j) as f64).sin()));
        let ann = DiscourseAnnotation {
            edus: vec![(0, 7), (8, 15)],
            labels: vec!["so_arg1_arg2".to_string()],
        };
        let loss = model.discourse_loss(&mut tape, &store, h_z, &ann).unwrap();
        assert!((tape.value(loss)[(0, 0)] - 21f64.ln()).abs() < 1e-12);

        // single EDU -> zero loss
        let single = DiscourseAnnotation { edus: vec![(0, 15)], labels: vec![] };
        let loss = model.discourse_loss(&mut tape, &store, h_z, &single).unwrap();
        assert_eq!(tape.value(loss)[(0, 0)], 0.0);
    }

    #[test]
    fn span_pooling_is_arithmetic_mean() {
        let mut tape = Tape::new();
        let x = tape.constant(Array2::from_shape_fn((6, 3), |(i, j)| (i * 10 + j) as f64));
        let pooled = tape.span_means(x, &[(2, 4)]);
        // rows 2,3,4 -> mean row = 30+j
        for j in 0..3 {
            assert_eq!(tape.value(pooled)[(0, j)], 30.0 + j as f64);
        }
    }

    #[test]
    fn stage1_loss_composition() {
        let (model, store) = tiny_model();
        let ex = example(14, true);
        let noise = Array2::zeros(noise_shape(&model, &ex));
        let run = |l1: f64, l2: f64| {
            let mut tape = Tape::new();
            let out = stage1_forward(
                &mut tape,
                &store,
                &model,
                &ex,
                &noise,
                &Stage1Opts { tau: 0.9, lambda1: l1, lambda2: l2, use_prompt: true },
                &mut FwdCtx::eval(),
            )
            .unwrap();
            (tape.value(out.total)[(0, 0)], out)
        };
        // lambda1 = lambda2 = 0 reduces to the reconstruction loss
        let (total0, out0) = run(0.0, 0.0);
        assert!((total0 - out0.recon).abs() < 1e-12);
        // weighted total matches its parts
        let (total, out) = run(0.1, 0.1);
        assert!((total - (out.recon - 0.1 * out.entr + 0.1 * out.disc)).abs() < 1e-12);
        assert!(total.is_finite());
        assert!(out.entr >= 0.0 && out.entr <= 7f64.ln() + 1e-12);
    }

    #[test]
    fn decoder_is_causal_in_token_stream() {
        // Changing a later target token cannot change earlier logits.
        let (model, store) = tiny_model();
        let ex = example(16, false);
        let run = |ids: &[usize]| {
            let mut ctx = FwdCtx::eval();
            let mut tape = Tape::new();
            let memory =
                model.encode(&mut tape, &store, &ex.prompt_ids, EncoderKind::Prompt, None, &mut ctx).unwrap();
            let logits = model.decode_with_codes(&mut tape, &store, ids, None, memory, &mut ctx).unwrap();
            tape.value(logits).clone()
        };
        let a = run(&ex.story_ids);
        let mut altered = ex.story_ids.clone();
        altered[15] = 4;
        let b = run(&altered);
        for m in 0..15 {
            assert_eq!(a.row(m), b.row(m), "logits at {m} depend on a future token");
        }
        let _ = argmax_rows(&a);
    }
}
