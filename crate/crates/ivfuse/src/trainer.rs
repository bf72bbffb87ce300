//! Training loop: Adam, step-decay learning rate, seeded shuffling,
//! per-epoch logging.
//!
//! Each step stacks a mini-batch per modality, runs both stacks through the
//! shared autoencoder in train mode (batch-norm statistics come from the
//! whole stack), assembles the objective, backpropagates both streams into
//! one gradient accumulator, and applies a bias-corrected Adam update. All
//! updates walk layers and slots in a fixed order, so identical seeds give
//! bit-identical checkpoints.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{total_loss_with_grads, DecompositionMaps, LossBreakdown, LossWeights};
use crate::net::{
    backward_tape, forward_tape, init_params, layer_spec, ModelParams, ParamGrads,
};
use crate::tensor::{BnMode, Tensor4};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Everything the training loop needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; divided by `lr_decay_factor` every
    /// `lr_decay_every` epochs.
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Height and width training images are center-cropped to.
    pub crop: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 24,
            lr0: 1e-3,
            lr_decay_factor: 10.0,
            lr_decay_every: 40,
            seed: 0,
            loss_weights: LossWeights::default(),
            crop: (128, 128),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lr0 must be positive and finite, got {}",
                self.lr0
            )));
        }
        if !(self.lr_decay_factor > 0.0) || !self.lr_decay_factor.is_finite() {
            return Err(Error::InvalidArgument("lr_decay_factor must be positive".into()));
        }
        if self.lr_decay_every < 1 {
            return Err(Error::InvalidArgument("lr_decay_every must be >= 1".into()));
        }
        if self.crop.0 < 11 || self.crop.1 < 11 {
            return Err(Error::InvalidArgument(format!(
                "crop must be at least 11x11 for the similarity window, got {}x{}",
                self.crop.0, self.crop.1
            )));
        }
        self.loss_weights.validate()
    }
}

/// One already-preprocessed training pair: (1,1,h,w) tensors in [0,1].
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub ir: Tensor4,
    pub vis: Tensor4,
}

/// Learning rate for `epoch` under the step-decay schedule.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 / config.lr_decay_factor.powi((epoch / config.lr_decay_every) as i32)
}

struct SlotMoments {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl SlotMoments {
    fn new(len: usize) -> Self {
        SlotMoments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

struct LayerMoments {
    kernel: SlotMoments,
    bias: SlotMoments,
    gamma: SlotMoments,
    beta: SlotMoments,
    slope: Option<SlotMoments>,
}

/// Adam first/second moments for every learnable, plus the step counter.
pub struct AdamState {
    layers: Vec<LayerMoments>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let layers = (0..7)
            .map(|idx| {
                let p = params.layer(idx);
                LayerMoments {
                    kernel: SlotMoments::new(p.kernel.len()),
                    bias: SlotMoments::new(p.bias.len()),
                    gamma: SlotMoments::new(p.bn_gamma.len()),
                    beta: SlotMoments::new(p.bn_beta.len()),
                    slope: p.prelu_slope.map(|_| SlotMoments::new(1)),
                }
            })
            .collect();
        AdamState { layers, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn ensure_finite_slot(layer: &str, slot: &str, values: &[f32]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{layer} {slot} gradient is non-finite — aborting optimizer step"
        )));
    }
    Ok(())
}

fn adam_update_slot(
    params: &mut [f32],
    grads: &[f32],
    moments: &mut SlotMoments,
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let m = ADAM_BETA1 * moments.m[i] as f64 + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * moments.v[i] as f64 + (1.0 - ADAM_BETA2) * g * g;
        moments.m[i] = m as f32;
        moments.v[i] = v as f32;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        params[i] = (params[i] as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON)) as f32;
    }
}

/// One bias-corrected Adam update over every learnable. Layers and slots are
/// visited in a fixed order (kernel, bias, γ, β, slope per layer). Rejects
/// the whole step if any gradient entry is non-finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (idx, g) in grads.layers.iter().enumerate() {
        let name = layer_spec(idx).name;
        ensure_finite_slot(name, "kernel", g.kernel.data())?;
        ensure_finite_slot(name, "bias", &g.bias)?;
        ensure_finite_slot(name, "gamma", &g.gamma)?;
        ensure_finite_slot(name, "beta", &g.beta)?;
        if let Some(s) = g.slope {
            ensure_finite_slot(name, "slope", &[s])?;
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for idx in 0..7 {
        let p = params.layer_mut(idx);
        let g = &grads.layers[idx];
        let s = &mut state.layers[idx];
        adam_update_slot(p.kernel.data_mut(), g.kernel.data(), &mut s.kernel, lr, bias1, bias2);
        adam_update_slot(&mut p.bias, &g.bias, &mut s.bias, lr, bias1, bias2);
        adam_update_slot(&mut p.bn_gamma, &g.gamma, &mut s.gamma, lr, bias1, bias2);
        adam_update_slot(&mut p.bn_beta, &g.beta, &mut s.beta, lr, bias1, bias2);
        if let (Some(sm), Some(gs)) = (s.slope.as_mut(), g.slope) {
            let mut slope = [p.prelu_slope.unwrap()];
            adam_update_slot(&mut slope, &[gs], sm, lr, bias1, bias2);
            p.prelu_slope = Some(slope[0]);
        }
    }
    Ok(())
}

/// Per-epoch summary: averaged loss terms, learning rate, wall time.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Loss terms averaged over the epoch's steps.
    pub loss: LossBreakdown,
    pub steps: usize,
    pub wall_ms: u128,
}

impl EpochRecord {
    /// `key=value` line for the training log.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} lr={:e} total={:.6} background_term={:.6} detail_term={:.6} \
             recon_ir={:.6} recon_vis={:.6} gradient_term={:.6} steps={} wall_ms={}",
            self.epoch,
            self.lr,
            self.loss.total,
            self.loss.decomp_background_term,
            self.loss.decomp_detail_term,
            self.loss.recon_ir,
            self.loss.recon_vis,
            self.loss.gradient_term,
            self.steps,
            self.wall_ms
        )
    }
}

/// One record per completed epoch.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }
}

fn stack_batch(pairs: &[TrainPair], indices: &[usize]) -> (Tensor4, Tensor4) {
    let (_, _, h, w) = pairs[indices[0]].ir.shape();
    let mut ir = Tensor4::zeros(indices.len(), 1, h, w);
    let mut vis = Tensor4::zeros(indices.len(), 1, h, w);
    for (slot, &i) in indices.iter().enumerate() {
        ir.plane_mut(slot, 0).copy_from_slice(pairs[i].ir.plane(0, 0));
        vis.plane_mut(slot, 0).copy_from_slice(pairs[i].vis.plane(0, 0));
    }
    (ir, vis)
}

/// Train from scratch on preprocessed pairs. See [`train_with_observer`].
pub fn train(pairs: &[TrainPair], config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    train_with_observer(pairs, config, |_| {})
}

/// Train from scratch, invoking `on_epoch` after each epoch (for live
/// progress output). Parameters are initialized from `config.seed`; the
/// shuffle stream is decorrelated from initialization by a fixed constant.
pub fn train_with_observer(
    pairs: &[TrainPair],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let (ch, cw) = config.crop;
    for (i, p) in pairs.iter().enumerate() {
        if p.ir.shape() != (1, 1, ch, cw) || p.vis.shape() != (1, 1, ch, cw) {
            return Err(Error::Data(format!(
                "training pair {i} has shapes {} / {}, expected (1,1,{ch},{cw})",
                p.ir.shape_string(),
                p.vis.shape_string()
            )));
        }
    }

    let mut params = init_params(config.seed);
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(epoch, config);
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossBreakdown {
            total: 0.0,
            decomp_background_term: 0.0,
            decomp_detail_term: 0.0,
            recon_ir: 0.0,
            recon_vis: 0.0,
            gradient_term: 0.0,
        };
        let mut steps = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let (ir_b, vis_b) = stack_batch(pairs, chunk);
            let ir_f = forward_tape(&ir_b, &params, BnMode::Train)?;
            let vis_f = forward_tape(&vis_b, &params, BnMode::Train)?;
            let maps = DecompositionMaps {
                background_ir: &ir_f.decomp().background,
                background_vis: &vis_f.decomp().background,
                detail_ir: &ir_f.decomp().detail,
                detail_vis: &vis_f.decomp().detail,
            };
            let (breakdown, lgrads) = total_loss_with_grads(
                &ir_b,
                ir_f.reconstruction(),
                &vis_b,
                vis_f.reconstruction(),
                &maps,
                &config.loss_weights,
            )?;
            if !breakdown.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let mut grads = ParamGrads::zeros_like(&params);
            backward_tape(
                &ir_f,
                &params,
                &lgrads.background_ir,
                &lgrads.detail_ir,
                &lgrads.ir_recon,
                &mut grads,
            )?;
            backward_tape(
                &vis_f,
                &params,
                &lgrads.background_vis,
                &lgrads.detail_vis,
                &lgrads.vis_recon,
                &mut grads,
            )?;
            ir_f.update_running(&mut params);
            vis_f.update_running(&mut params);
            adam_step(&mut params, &grads, &mut adam, lr)?;

            sums.total += breakdown.total;
            sums.decomp_background_term += breakdown.decomp_background_term;
            sums.decomp_detail_term += breakdown.decomp_detail_term;
            sums.recon_ir += breakdown.recon_ir;
            sums.recon_vis += breakdown.recon_vis;
            sums.gradient_term += breakdown.gradient_term;
            steps += 1;
        }
        let n = steps as f64;
        let record = EpochRecord {
            epoch,
            lr,
            loss: LossBreakdown {
                total: sums.total / n,
                decomp_background_term: sums.decomp_background_term / n,
                decomp_detail_term: sums.decomp_detail_term / n,
                recon_ir: sums.recon_ir / n,
                recon_vis: sums.recon_vis / n,
                gradient_term: sums.gradient_term / n,
            },
            steps,
            wall_ms: started.elapsed().as_millis(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((params, log))
}
