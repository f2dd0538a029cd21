//! Autoregressive prior over the latent codes.
//!
//! A Transformer encoder-decoder reads the prompt and predicts the
//! posterior's argmax code sequence; at inference it samples codes with
//! nucleus filtering. The latent vocabulary is `K` codes plus `<bos>`,
//! `<eos>`, and `<pad>` above them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{PromptStoryPair, BOS};
use crate::error::{DvtError, Result};
use crate::generator::{posterior_codes, Stage1Model};
use crate::inference::nucleus_filter;
use crate::nn::{causal_mask, Decoder, Encoder, FwdCtx};
use crate::params::{init, ParamStore};
use crate::rng;
use crate::tensor::{softmax_rows, Tape, TensorId};

/// Prior-specific settings on top of the shared architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub model: ModelConfig,
    /// Maximum number of codes in a target sequence.
    pub max_code_len: usize,
}

impl PriorConfig {
    pub fn new(model: ModelConfig) -> Self {
        PriorConfig { model, max_code_len: 64 }
    }

    /// Latent vocabulary size `K + 3`.
    pub fn latent_vocab(&self) -> usize {
        self.model.codebook_size + 3
    }

    pub fn code_bos(&self) -> usize {
        self.model.codebook_size
    }

    pub fn code_eos(&self) -> usize {
        self.model.codebook_size + 1
    }

    pub fn code_pad(&self) -> usize {
        self.model.codebook_size + 2
    }
}

pub struct PriorModel {
    pub cfg: PriorConfig,
    pub token_emb: usize,
    pub pos_emb: usize,
    pub encoder: Encoder,
    pub code_emb: usize,
    pub code_pos: usize,
    pub decoder: Decoder,
}

impl PriorModel {
    pub fn new(cfg: &PriorConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.model.validate()?;
        if cfg.max_code_len == 0 {
            return Err(DvtError::Config("max_code_len must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut r = rng::derive(seed, &[rng::stream::INIT, 0xBEEF]);
        let d = cfg.model.d_model;
        let token_emb =
            store.register("token_emb", init::normal(&mut r, (cfg.model.vocab_size, d), 0.02));
        let pos_emb = store.register("pos_emb", init::normal(&mut r, (cfg.model.max_positions, d), 0.02));
        let encoder =
            Encoder::new(&mut store, &mut r, "enc", cfg.model.enc_layers, d, cfg.model.heads, cfg.model.ffn_dim);
        let code_emb =
            store.register("code_emb", init::normal(&mut r, (cfg.latent_vocab(), d), 0.02));
        let code_pos =
            store.register("code_pos", init::normal(&mut r, (cfg.max_code_len + 1, d), 0.02));
        let decoder =
            Decoder::new(&mut store, &mut r, "dec", cfg.model.dec_layers, d, cfg.model.heads, cfg.model.ffn_dim);
        Ok((PriorModel { cfg: cfg.clone(), token_emb, pos_emb, encoder, code_emb, code_pos, decoder }, store))
    }

    pub fn from_config_value(config: &serde_json::Value) -> Result<(Self, ParamStore)> {
        let cfg: PriorConfig = serde_json::from_value(config.clone())
            .map_err(|e| DvtError::Checkpoint(format!("bad prior config in checkpoint: {e}")))?;
        PriorModel::new(&cfg, 0)
    }

    /// Copy the stage-1 prompt-encoder weights (and shared embeddings) into
    /// this prior's encoder. Returns how many parameters were transferred.
    pub fn init_encoder_from_stage1(
        &self,
        store: &mut ParamStore,
        stage1_store: &ParamStore,
    ) -> usize {
        let mut copied = 0;
        for (name, value) in stage1_store.iter() {
            let target = if name == "token_emb" || name == "pos_emb" {
                Some(name.to_string())
            } else {
                name.strip_prefix("prompt_enc.").map(|rest| format!("enc.{rest}"))
            };
            if let Some(t) = target {
                if let Some(pid) = store.id_of(&t) {
                    if store.value(pid).dim() == value.dim() {
                        store.set(pid, value.clone());
                        copied += 1;
                    }
                }
            }
        }
        copied
    }

    fn encode_prompt(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prompt_ids: &[usize],
        ctx: &mut FwdCtx,
    ) -> Result<TensorId> {
        let mut ids = Vec::with_capacity(prompt_ids.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(prompt_ids);
        if ids.len() > self.cfg.model.max_positions {
            return Err(DvtError::Config(format!(
                "prompt of {} tokens exceeds max_positions {}",
                ids.len(),
                self.cfg.model.max_positions
            )));
        }
        let table = tape.param(store, self.token_emb);
        let tok = tape.embedding(table, &ids);
        let pos_table = tape.param(store, self.pos_emb);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embedding(pos_table, &positions);
        let x = tape.add(tok, pos);
        let x = ctx.apply_dropout(tape, x);
        Ok(self.encoder.forward(tape, store, x, None, ctx))
    }

    /// Teacher-forced logits over the latent vocabulary for a target code
    /// sequence (which includes the trailing `<eos>`).
    fn decode_codes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        targets: &[usize],
        memory: TensorId,
        ctx: &mut FwdCtx,
    ) -> Result<TensorId> {
        let n = targets.len();
        if n == 0 {
            return Err(DvtError::Data("empty prior target".into()));
        }
        if n > self.cfg.max_code_len + 1 {
            return Err(DvtError::Config(format!(
                "prior target of {n} exceeds the {} + eos limit",
                self.cfg.max_code_len
            )));
        }
        let mut dec_in = Vec::with_capacity(n);
        dec_in.push(self.cfg.code_bos());
        dec_in.extend_from_slice(&targets[..n - 1]);
        let table = tape.param(store, self.code_emb);
        let emb = tape.embedding(table, &dec_in);
        let pos_table = tape.param(store, self.code_pos);
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.embedding(pos_table, &positions);
        let x = tape.add(emb, pos);
        let x = ctx.apply_dropout(tape, x);
        let mask = causal_mask(n);
        let out = self.decoder.forward(tape, store, x, memory, &mask, ctx);
        let table = tape.param(store, self.code_emb);
        let table_t = tape.transpose(table);
        Ok(tape.matmul(out, table_t))
    }

    /// Mean token-level cross-entropy of the prior on one example.
    pub fn prior_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prompt_ids: &[usize],
        targets: &[usize],
        ctx: &mut FwdCtx,
    ) -> Result<TensorId> {
        let memory = self.encode_prompt(tape, store, prompt_ids, ctx)?;
        let logits = self.decode_codes(tape, store, targets, memory, ctx)?;
        let logp = tape.row_log_softmax(logits);
        let weights = vec![1.0; targets.len()];
        Ok(tape.masked_nll(logp, targets, &weights))
    }

    /// Teacher-forced (correct, total) next-code counts on one example.
    pub fn teacher_forced_counts(
        &self,
        store: &ParamStore,
        prompt_ids: &[usize],
        targets: &[usize],
    ) -> Result<(usize, usize)> {
        let mut tape = Tape::new();
        let mut ctx = FwdCtx::eval();
        let memory = self.encode_prompt(&mut tape, store, prompt_ids, &mut ctx)?;
        let logits = self.decode_codes(&mut tape, store, targets, memory, &mut ctx)?;
        let preds = crate::tensor::argmax_rows(tape.value(logits));
        let correct = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
        Ok((correct, targets.len()))
    }

    /// Autoregressive nucleus sampling of a code sequence. `<eos>` is
    /// suppressed before `min_len` codes; sampling stops at `<eos>` or
    /// `max_len`. Returned codes are all in `[0, K)`.
    pub fn sample_codes(
        &self,
        store: &ParamStore,
        prompt_ids: &[usize],
        p: f64,
        temperature: f64,
        min_len: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DvtError::Config(format!("nucleus p must be in (0, 1], got {p}")));
        }
        if temperature <= 0.0 {
            return Err(DvtError::Config("temperature must be > 0".into()));
        }
        let max_len = max_len.min(self.cfg.max_code_len);
        if min_len > max_len {
            return Err(DvtError::Config(format!("min_len {min_len} exceeds max_len {max_len}")));
        }
        let mut ctx = FwdCtx::eval();
        let mut tape = Tape::new();
        let memory = self.encode_prompt(&mut tape, store, prompt_ids, &mut ctx)?;
        let memory_value = tape.value(memory).clone();
        let mut codes: Vec<usize> = Vec::new();
        loop {
            let mut tape = Tape::new();
            let memory = tape.constant(memory_value.clone());
            // feed the sampled prefix; a dummy last target is never read
            // because only the final row of logits is used
            let mut targets = codes.clone();
            targets.push(self.cfg.code_eos());
            let logits = self.decode_codes(&mut tape, store, &targets, memory, &mut ctx)?;
            let last = tape.value(logits).nrows() - 1;
            let mut row: Vec<f64> =
                tape.value(logits).row(last).iter().map(|&v| v / temperature).collect();
            row[self.cfg.code_bos()] = f64::NEG_INFINITY;
            row[self.cfg.code_pad()] = f64::NEG_INFINITY;
            if codes.len() < min_len {
                row[self.cfg.code_eos()] = f64::NEG_INFINITY;
            }
            let arr = ndarray::Array2::from_shape_vec((1, row.len()), row).expect("row");
            let probs: Vec<f64> = softmax_rows(&arr).row(0).to_vec();
            let filtered = nucleus_filter(&probs, p)?;
            let choice = sample_index(&filtered, rng);
            if choice == self.cfg.code_eos() {
                break;
            }
            codes.push(choice);
            if codes.len() >= max_len {
                break;
            }
        }
        Ok(codes)
    }
}

/// Sample an index from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    // numerical slack: fall back to the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Argmax code sequence of the frozen posterior, with codes that cover only
/// padding dropped, and `<eos>` appended.
pub fn make_targets(
    stage1_store: &ParamStore,
    stage1: &Stage1Model,
    prior_cfg: &PriorConfig,
    example: &PromptStoryPair,
) -> Result<Vec<usize>> {
    let codes = posterior_codes(stage1_store, stage1, example)?;
    let block = stage1.codec.block();
    let keep = example.num_content_tokens().div_ceil(block);
    let mut out: Vec<usize> = codes.into_iter().take(keep).collect();
    if out.len() > prior_cfg.max_code_len {
        return Err(DvtError::Config(format!(
            "{} codes exceed the prior's max target length {}",
            out.len(),
            prior_cfg.max_code_len
        )));
    }
    out.push(prior_cfg.code_eos());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::pad_to_block;

    fn tiny_prior() -> (PriorModel, ParamStore) {
        let mut cfg = PriorConfig::new(ModelConfig::tiny());
        cfg.max_code_len = 8;
        PriorModel::new(&cfg, 3).unwrap()
    }

    #[test]
    fn make_targets_argmax_and_eos() {
        let (stage1, s_store) = Stage1Model::new(&ModelConfig::tiny(), 7).unwrap();
        let prior_cfg = PriorConfig::new(ModelConfig::tiny());
        let story: Vec<usize> = (0..13).map(|i| 4 + (i % 11)).collect();
        let (story_ids, story_mask) = pad_to_block(&story, 8).unwrap();
        let ex = PromptStoryPair { prompt_ids: vec![4, 5], story_ids, story_mask, annotation: None };
        let t = make_targets(&s_store, &stage1, &prior_cfg, &ex).unwrap();
        // two codes (16/8) + eos
        assert_eq!(t.len(), 3);
        assert_eq!(*t.last().unwrap(), prior_cfg.code_eos());
        assert!(t[..2].iter().all(|&c| c < 7));
        // deterministic
        assert_eq!(t, make_targets(&s_store, &stage1, &prior_cfg, &ex).unwrap());
    }

    #[test]
    fn uniform_prior_loss_is_ln_vocab() {
        // zeroed embeddings and output projection give uniform predictions
        let (prior, mut store) = tiny_prior();
        let v = prior.cfg.latent_vocab();
        store.set(prior.code_emb, ndarray::Array2::zeros((v, 8)));
        let mut tape = Tape::new();
        let mut ctx = FwdCtx::eval();
        let targets = vec![0, 3, prior.cfg.code_eos()];
        let loss = prior.prior_loss(&mut tape, &store, &[4, 5], &targets, &mut ctx).unwrap();
        assert!((tape.value(loss)[(0, 0)] - (v as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn prior_loss_finite_and_length_capped() {
        let (prior, store) = tiny_prior();
        let mut tape = Tape::new();
        let mut ctx = FwdCtx::eval();
        let targets = vec![1, 2, 3, prior.cfg.code_eos()];
        let loss = prior.prior_loss(&mut tape, &store, &[4, 5, 6], &targets, &mut ctx).unwrap();
        assert!(tape.value(loss)[(0, 0)].is_finite());
        // too-long target is rejected (max_code_len = 8 -> limit 9)
        let long = vec![0usize; 10];
        let mut tape = Tape::new();
        assert!(prior.prior_loss(&mut tape, &store, &[4], &long, &mut ctx).is_err());
    }

    #[test]
    fn sampling_contract() {
        let (prior, store) = tiny_prior();
        let mut r = rng::derive(9, &[rng::stream::SAMPLE]);
        let codes = prior.sample_codes(&store, &[4, 5], 0.9, 1.0, 4, 8, &mut r).unwrap();
        assert!(codes.len() >= 4 && codes.len() <= 8);
        assert!(codes.iter().all(|&c| c < 7), "codes outside [0, K): {codes:?}");

        // p = 1.0 is plain ancestral sampling and stays in range
        let mut r = rng::derive(10, &[rng::stream::SAMPLE]);
        let codes = prior.sample_codes(&store, &[4], 1.0, 1.0, 1, 8, &mut r).unwrap();
        assert!(!codes.is_empty() && codes.len() <= 8);

        // near-zero temperature is deterministic regardless of seed
        let mut r1 = rng::derive(1, &[rng::stream::SAMPLE]);
        let mut r2 = rng::derive(2, &[rng::stream::SAMPLE]);
        let a = prior.sample_codes(&store, &[4, 6], 1.0, 1e-9, 2, 6, &mut r1).unwrap();
        let b = prior.sample_codes(&store, &[4, 6], 1.0, 1e-9, 2, 6, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_weight_transfer_from_stage1() {
        let (stage1, s_store) = Stage1Model::new(&ModelConfig::tiny(), 7).unwrap();
        let (prior, mut p_store) = {
            let cfg = PriorConfig::new(ModelConfig::tiny());
            PriorModel::new(&cfg, 99).unwrap()
        };
        let before = p_store.value(prior.token_emb).clone();
        let copied = prior.init_encoder_from_stage1(&mut p_store, &s_store);
        assert!(copied > 0, "no parameters copied");
        assert_ne!(&before, p_store.value(prior.token_emb));
        assert_eq!(s_store.value(stage1.token_emb), p_store.value(prior.token_emb));
        // one encoder layer weight matches too
        let s_pid = s_store.id_of("prompt_enc.layer0.attn.q.w").unwrap();
        let p_pid = p_store.id_of("enc.layer0.attn.q.w").unwrap();
        assert_eq!(s_store.value(s_pid), p_store.value(p_pid));
    }
}
