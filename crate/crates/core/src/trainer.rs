//! Training stages: warm-start, fine-tune, and prior fitting.
//!
//! One optimizer step averages gradients over `batch_size * grad_accum`
//! examples. Per-example tapes run in parallel but are reduced in a fixed
//! order, so training is bit-reproducible given a seed.

use rayon::prelude::*;
use std::path::Path;

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::corpus::PromptStoryPair;
use crate::error::{DvtError, Result};
use crate::generator::{
    discourse_eval, posterior_codes, recon_with_codes, stage1_forward, step_dropout_rng, step_noise,
    Stage1Model, Stage1Opts,
};
use crate::nn::FwdCtx;
use crate::params::{clip_global_norm, AdamW, ParamStore};
use crate::prior::{make_targets, PriorModel};
use crate::rng;
use crate::tensor::ParamGrads;

/// Linearly decaying learning rate: `lr0 * (1 - step/total)`.
pub fn lr_schedule(lr0: f64, step: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(DvtError::Config("lr schedule needs a positive total step count".into()));
    }
    let step = step.min(total);
    Ok(lr0 * (1.0 - step as f64 / total as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub lr: f64,
    pub tau: f64,
    pub total: f64,
    pub recon: f64,
    pub entr: f64,
    pub disc: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,tau,loss,recon,entr,disc,grad_norm\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.lr, r.tau, r.total, r.recon, r.entr, r.disc, r.grad_norm
            ));
        }
        out
    }

    pub fn last_recon(&self) -> Option<f64> {
        self.rows.last().map(|r| r.recon)
    }
}

/// Deterministic epoch-shuffled index stream.
struct IndexStream {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    at: usize,
}

impl IndexStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = IndexStream { n, seed, epoch: 0, order: Vec::new(), at: 0 };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom as _;
        let mut order: Vec<usize> = (0..self.n).collect();
        let mut r = rng::derive(self.seed, &[rng::stream::BATCH, self.epoch]);
        order.shuffle(&mut r);
        self.order = order;
        self.at = 0;
        self.epoch += 1;
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.at == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.at]);
            self.at += 1;
        }
        out
    }
}

fn reduce_grads(per_example: Vec<ParamGrads>, n_params: usize) -> ParamGrads {
    let scale = 1.0 / per_example.len().max(1) as f64;
    let mut acc = ParamGrads::zeros(n_params);
    for g in &per_example {
        acc.accumulate_scaled(g, scale);
    }
    acc
}

/// Shared stage-1 loop. `fixed_tau` pins the Gumbel temperature
/// (warm-start); otherwise the config schedule is followed. `use_prompt`
/// false trains unconditionally on the stories alone.
fn train_stage1(
    model: &Stage1Model,
    store: &mut ParamStore,
    pairs: &[PromptStoryPair],
    cfg: &TrainConfig,
    fixed_tau: Option<f64>,
    use_prompt: bool,
    lambda2: f64,
) -> Result<TrainLog> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(DvtError::Data("training corpus is empty".into()));
    }
    let mut opt = AdamW::new(store, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut stream = IndexStream::new(pairs.len(), cfg.seed);
    let mut log = TrainLog::default();
    let per_step = cfg.batch_size * cfg.grad_accum;
    for step in 0..cfg.total_steps {
        let tau = fixed_tau.unwrap_or_else(|| cfg.tau.at(step));
        let lr = lr_schedule(cfg.lr0, step, cfg.lr_horizon())?;
        let batch = stream.take(per_step);
        let opts = Stage1Opts { tau, lambda1: cfg.lambda1, lambda2, use_prompt };
        let results: Vec<(ParamGrads, f64, f64, f64, f64)> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &idx)| {
                let ex = &pairs[idx];
                let noise = step_noise(model, ex, cfg.seed, step, j);
                let mut drop_rng = step_dropout_rng(cfg.seed, step, j);
                let mut ctx =
                    FwdCtx { train: true, dropout: model.cfg.dropout, rng: Some(&mut drop_rng) };
                let mut tape = crate::tensor::Tape::new();
                let out = stage1_forward(&mut tape, store, model, ex, &noise, &opts, &mut ctx)?;
                let total = tape.value(out.total)[(0, 0)];
                let grads = tape.backward(out.total, store.len());
                Ok((grads, total, out.recon, out.entr, out.disc))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = results.len() as f64;
        let (mut total, mut recon, mut entr, mut disc) = (0.0, 0.0, 0.0, 0.0);
        let mut grads_vec = Vec::with_capacity(results.len());
        for (g, t, r, e, d) in results {
            grads_vec.push(g);
            total += t / b;
            recon += r / b;
            entr += e / b;
            disc += d / b;
        }
        let mut grads = reduce_grads(grads_vec, store.len());
        let grad_norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
        opt.step(store, &grads, lr);
        if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.total_steps {
            log.rows.push(TrainLogRow { step, lr, tau, total, recon, entr, disc, grad_norm });
        }
    }
    Ok(log)
}

/// Warm-start: unconditional reconstruction plus entropy regularization on
/// contiguous texts, Gumbel temperature fixed at `tau_max`, no discourse
/// loss, no prompts.
pub fn warm_start(
    model: &Stage1Model,
    store: &mut ParamStore,
    pairs: &[PromptStoryPair],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_stage1(model, store, pairs, cfg, Some(cfg.tau.tau_max), false, 0.0)
}

/// Fine-tune on prompt/story pairs with the annealed temperature schedule
/// and the full objective.
pub fn finetune(
    model: &Stage1Model,
    store: &mut ParamStore,
    pairs: &[PromptStoryPair],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_stage1(model, store, pairs, cfg, None, true, cfg.lambda2)
}

/// Cache argmax targets and fit the prior with teacher forcing.
/// Returns the log and the cached targets (stable across epochs because the
/// posterior is frozen).
pub fn train_prior(
    prior: &PriorModel,
    p_store: &mut ParamStore,
    stage1: &Stage1Model,
    s_store: &ParamStore,
    pairs: &[PromptStoryPair],
    cfg: &TrainConfig,
) -> Result<(TrainLog, Vec<Vec<usize>>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(DvtError::Data("prior training corpus is empty".into()));
    }
    let targets: Vec<Vec<usize>> = pairs
        .par_iter()
        .map(|ex| make_targets(s_store, stage1, &prior.cfg, ex))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::new(p_store, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut stream = IndexStream::new(pairs.len(), cfg.seed);
    let mut log = TrainLog::default();
    let per_step = cfg.batch_size * cfg.grad_accum;
    for step in 0..cfg.total_steps {
        let lr = lr_schedule(cfg.lr0, step, cfg.lr_horizon())?;
        let batch = stream.take(per_step);
        let results: Vec<(ParamGrads, f64)> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &idx)| {
                let ex = &pairs[idx];
                let mut drop_rng = step_dropout_rng(cfg.seed ^ 0x9, step, j);
                let mut ctx =
                    FwdCtx { train: true, dropout: prior.cfg.model.dropout, rng: Some(&mut drop_rng) };
                let mut tape = crate::tensor::Tape::new();
                let loss =
                    prior.prior_loss(&mut tape, p_store, &ex.prompt_ids, &targets[idx], &mut ctx)?;
                let v = tape.value(loss)[(0, 0)];
                Ok((tape.backward(loss, p_store.len()), v))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = results.len() as f64;
        let mut loss = 0.0;
        let mut grads_vec = Vec::with_capacity(results.len());
        for (g, v) in results {
            grads_vec.push(g);
            loss += v / b;
        }
        let mut grads = reduce_grads(grads_vec, p_store.len());
        let grad_norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
        opt.step(p_store, &grads, lr);
        if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.total_steps {
            log.rows.push(TrainLogRow {
                step,
                lr,
                tau: 0.0,
                total: loss,
                recon: loss,
                entr: 0.0,
                disc: 0.0,
                grad_norm,
            });
        }
    }
    Ok((log, targets))
}

// ---- checkpoint glue ----

pub fn save_stage1(path: &Path, model: &Stage1Model, store: &ParamStore) -> Result<()> {
    let cfg = serde_json::to_value(&model.cfg)?;
    checkpoint::save(path, "stage1", &cfg, store)
}

pub fn load_stage1(path: &Path) -> Result<(Stage1Model, ParamStore)> {
    let ckpt = checkpoint::load(path)?;
    if ckpt.kind != "stage1" {
        return Err(DvtError::Checkpoint(format!(
            "{} is a {:?} checkpoint, expected stage1",
            path.display(),
            ckpt.kind
        )));
    }
    let (model, mut store) = Stage1Model::from_config_value(&ckpt.config)?;
    checkpoint::restore_into(&ckpt, &mut store)?;
    Ok((model, store))
}

pub fn save_prior(path: &Path, prior: &PriorModel, store: &ParamStore) -> Result<()> {
    let cfg = serde_json::to_value(&prior.cfg)?;
    checkpoint::save(path, "prior", &cfg, store)
}

pub fn load_prior(path: &Path) -> Result<(PriorModel, ParamStore)> {
    let ckpt = checkpoint::load(path)?;
    if ckpt.kind != "prior" {
        return Err(DvtError::Checkpoint(format!(
            "{} is a {:?} checkpoint, expected prior",
            path.display(),
            ckpt.kind
        )));
    }
    let (model, mut store) = PriorModel::from_config_value(&ckpt.config)?;
    checkpoint::restore_into(&ckpt, &mut store)?;
    Ok((model, store))
}

// ---- evaluation helpers ----

/// Mean eval reconstruction NLL with the posterior's own hard codes.
pub fn mean_recon_true_codes(
    model: &Stage1Model,
    store: &ParamStore,
    pairs: &[PromptStoryPair],
    use_prompt: bool,
) -> Result<f64> {
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|ex| {
            let codes = posterior_codes(store, model, ex)?;
            recon_with_codes(store, model, ex, &codes, use_prompt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean eval reconstruction NLL with each example's codes randomly permuted
/// along the sequence (a non-identity permutation whenever one exists).
pub fn mean_recon_permuted_codes(
    model: &Stage1Model,
    store: &ParamStore,
    pairs: &[PromptStoryPair],
    use_prompt: bool,
    seed: u64,
) -> Result<f64> {
    use rand::seq::SliceRandom as _;
    let losses: Vec<f64> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let codes = posterior_codes(store, model, ex)?;
            let mut shuffled = codes.clone();
            let mut r = rng::derive(seed, &[rng::stream::BATCH, 0xC0DE, i as u64]);
            for _ in 0..8 {
                shuffled.shuffle(&mut r);
                if shuffled != codes {
                    break;
                }
            }
            if shuffled == codes && codes.len() > 1 {
                shuffled.rotate_right(1);
            }
            recon_with_codes(store, model, ex, &shuffled, use_prompt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean per-example code utilization (distinct codes / sequence length) of
/// the posterior on a dataset.
pub fn mean_code_utilization(
    model: &Stage1Model,
    store: &ParamStore,
    pairs: &[PromptStoryPair],
) -> Result<f64> {
    let utils: Vec<f64> = pairs
        .par_iter()
        .map(|ex| {
            let codes = posterior_codes(store, model, ex)?;
            crate::metrics::code_utilization(&codes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(utils.iter().sum::<f64>() / utils.len().max(1) as f64)
}

/// Discourse-head accuracy over all gold-labeled adjacent EDU pairs, plus
/// the majority-class baseline on the same pairs.
pub fn discourse_accuracy(
    model: &Stage1Model,
    store: &ParamStore,
    pairs: &[PromptStoryPair],
) -> Result<(f64, f64)> {
    let all: Vec<(usize, usize)> = pairs
        .par_iter()
        .map(|ex| discourse_eval(store, model, ex))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if all.is_empty() {
        return Err(DvtError::Eval("no labeled EDU pairs to score".into()));
    }
    let correct = all.iter().filter(|(p, g)| p == g).count();
    let mut counts = std::collections::HashMap::new();
    for &(_, g) in &all {
        *counts.entry(g).or_insert(0usize) += 1;
    }
    let majority = counts.values().copied().max().unwrap_or(0);
    Ok((correct as f64 / all.len() as f64, majority as f64 / all.len() as f64))
}

/// Teacher-forced next-code accuracy of the prior over a dataset with
/// cached targets.
pub fn prior_teacher_accuracy(
    prior: &PriorModel,
    p_store: &ParamStore,
    pairs: &[PromptStoryPair],
    targets: &[Vec<usize>],
) -> Result<f64> {
    let counts: Vec<(usize, usize)> = pairs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(ex, t)| prior.teacher_forced_counts(p_store, &ex.prompt_ids, t))
        .collect::<Result<Vec<_>>>()?;
    let (c, n) = counts.iter().fold((0, 0), |(c, n), &(ci, ni)| (c + ci, n + ni));
    if n == 0 {
        return Err(DvtError::Eval("no prior targets to score".into()));
    }
    Ok(c as f64 / n as f64)
}
