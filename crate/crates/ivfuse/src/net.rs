//! The seven-layer decomposition autoencoder.
//!
//! Encoder: conv1 → conv2 → {conv3 (background branch), conv4 (detail
//! branch)}. Decoder: conv5 consumes the concatenated background/detail
//! maps; skip connections concatenate conv2's output into conv6's input and
//! conv1's output into conv7's input, so conv5–conv7 all see 128 input
//! channels. Every layer is padding → 3×3 conv → batch norm → activation.

use crate::error::{Error, Result};
use crate::tensor::{
    activation_backward, activation_forward, batchnorm_backward, batchnorm_forward,
    concat_channels, conv2d_backward, conv2d_forward, split_channels, ActKind, BnCache, BnMode,
    PaddingMode, Tensor4,
};

/// Batch-norm EMA momentum used throughout the network.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm variance epsilon used throughout the network.
pub const BN_EPSILON: f64 = 1e-5;
/// Bump when the parameter layout changes; checked by checkpoint loading.
pub const FORMAT_VERSION: u32 = 1;

/// Static description of one layer: channel counts, padding, nonlinearity.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_c: usize,
    pub out_c: usize,
    pub padding: PaddingMode,
    pub activation: ActKind,
}

/// conv1..conv4.
pub const ENCODER_SPECS: [LayerSpec; 4] = [
    LayerSpec { name: "conv1", in_c: 1, out_c: 64, padding: PaddingMode::Reflection, activation: ActKind::PReLU },
    LayerSpec { name: "conv2", in_c: 64, out_c: 64, padding: PaddingMode::Zero, activation: ActKind::PReLU },
    LayerSpec { name: "conv3", in_c: 64, out_c: 64, padding: PaddingMode::Zero, activation: ActKind::Tanh },
    LayerSpec { name: "conv4", in_c: 64, out_c: 64, padding: PaddingMode::Zero, activation: ActKind::Tanh },
];

/// conv5..conv7. The 128-channel inputs of conv6/conv7 come from the
/// skip concatenations.
pub const DECODER_SPECS: [LayerSpec; 3] = [
    LayerSpec { name: "conv5", in_c: 128, out_c: 64, padding: PaddingMode::Zero, activation: ActKind::PReLU },
    LayerSpec { name: "conv6", in_c: 128, out_c: 64, padding: PaddingMode::Zero, activation: ActKind::PReLU },
    LayerSpec { name: "conv7", in_c: 128, out_c: 1, padding: PaddingMode::Reflection, activation: ActKind::Sigmoid },
];

/// Spec of layer `idx` in conv1..conv7 order.
pub fn layer_spec(idx: usize) -> &'static LayerSpec {
    if idx < 4 {
        &ENCODER_SPECS[idx]
    } else {
        &DECODER_SPECS[idx - 4]
    }
}

/// Learned and running state of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    /// (out_c, in_c, 3, 3)
    pub kernel: Tensor4,
    pub bias: Vec<f32>,
    pub bn_gamma: Vec<f32>,
    pub bn_beta: Vec<f32>,
    pub bn_running_mean: Vec<f32>,
    pub bn_running_var: Vec<f32>,
    /// Present exactly on PReLU layers; a single slope shared by the layer.
    pub prelu_slope: Option<f32>,
}

/// All parameters of the autoencoder, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<ConvLayerParams>,
    pub decoder: Vec<ConvLayerParams>,
    pub format_version: u32,
}

impl ModelParams {
    /// Layer `idx` in conv1..conv7 order.
    pub fn layer(&self, idx: usize) -> &ConvLayerParams {
        if idx < 4 {
            &self.encoder[idx]
        } else {
            &self.decoder[idx - 4]
        }
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut ConvLayerParams {
        if idx < 4 {
            &mut self.encoder[idx]
        } else {
            &mut self.decoder[idx - 4]
        }
    }

    /// Number of learned scalars (kernels, biases, batch-norm affines,
    /// PReLU slopes; running statistics are state, not parameters).
    pub fn learnable_count(&self) -> usize {
        let mut count = 0;
        for idx in 0..7 {
            let p = self.layer(idx);
            count += p.kernel.len() + p.bias.len() + p.bn_gamma.len() + p.bn_beta.len();
            if p.prelu_slope.is_some() {
                count += 1;
            }
        }
        count
    }

    /// Check the full layout against the architecture table: shapes, vector
    /// lengths, slope presence, variance positivity, finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() != 4 || self.decoder.len() != 3 {
            return Err(Error::Data(format!(
                "model has {} encoder / {} decoder layers, expected 4 / 3",
                self.encoder.len(),
                self.decoder.len()
            )));
        }
        for idx in 0..7 {
            let spec = layer_spec(idx);
            let p = self.layer(idx);
            let want = (spec.out_c, spec.in_c, 3, 3);
            if p.kernel.shape() != want {
                return Err(Error::Data(format!(
                    "{} kernel shape {} does not match expected ({},{},3,3)",
                    spec.name,
                    p.kernel.shape_string(),
                    spec.out_c,
                    spec.in_c
                )));
            }
            for (what, len) in [
                ("bias", p.bias.len()),
                ("bn_gamma", p.bn_gamma.len()),
                ("bn_beta", p.bn_beta.len()),
                ("bn_running_mean", p.bn_running_mean.len()),
                ("bn_running_var", p.bn_running_var.len()),
            ] {
                if len != spec.out_c {
                    return Err(Error::Data(format!(
                        "{} {what} has length {len}, expected {}",
                        spec.name, spec.out_c
                    )));
                }
            }
            let wants_slope = spec.activation == ActKind::PReLU;
            if p.prelu_slope.is_some() != wants_slope {
                return Err(Error::Data(format!(
                    "{} slope presence mismatch: activation {:?}",
                    spec.name, spec.activation
                )));
            }
            if p.bn_running_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Data(format!(
                    "{} has a non-positive or non-finite running variance",
                    spec.name
                )));
            }
            p.kernel.ensure_finite(spec.name)?;
            let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
            if !finite(&p.bias)
                || !finite(&p.bn_gamma)
                || !finite(&p.bn_beta)
                || !finite(&p.bn_running_mean)
                || !p.prelu_slope.map_or(true, |s| s.is_finite())
            {
                return Err(Error::Data(format!("{} has non-finite parameters", spec.name)));
            }
        }
        Ok(())
    }
}

/// Deterministic parameter initialization: kernels uniform in (−b, b) with
/// b = √(6 / fan_in), fan_in = in_c·9; biases zero; γ=1, β=0; running mean 0,
/// running variance 1; PReLU slopes 0.25.
pub fn init_params(seed: u64) -> ModelParams {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut make = |spec: &LayerSpec| -> ConvLayerParams {
        let bound = (6.0 / (spec.in_c as f64 * 9.0)).sqrt() as f32;
        let kernel = Tensor4::from_fn(spec.out_c, spec.in_c, 3, 3, |_, _, _, _| {
            rng.gen_range(-bound..bound)
        });
        ConvLayerParams {
            kernel,
            bias: vec![0.0; spec.out_c],
            bn_gamma: vec![1.0; spec.out_c],
            bn_beta: vec![0.0; spec.out_c],
            bn_running_mean: vec![0.0; spec.out_c],
            bn_running_var: vec![1.0; spec.out_c],
            prelu_slope: (spec.activation == ActKind::PReLU).then_some(0.25),
        }
    };
    ModelParams {
        encoder: ENCODER_SPECS.iter().map(&mut make).collect(),
        decoder: DECODER_SPECS.iter().map(&mut make).collect(),
        format_version: FORMAT_VERSION,
    }
}

/// Encoder outputs: the two decomposition branches plus the early
/// activations the decoder's skip connections need.
#[derive(Debug, Clone)]
pub struct DecomposeOutput {
    /// conv3 branch, (n,64,h,w), values in (−1,1).
    pub background: Tensor4,
    /// conv4 branch, (n,64,h,w), values in (−1,1).
    pub detail: Tensor4,
    /// conv1 output, routed to conv7's input.
    pub skip1: Tensor4,
    /// conv2 output, routed to conv6's input.
    pub skip2: Tensor4,
}

/// Per-layer records for the backward pass.
struct LayerTape {
    /// Layer input (the conv's saved input).
    x: Tensor4,
    bn_cache: BnCache,
    /// Batch-norm output = activation input.
    act_in: Tensor4,
    /// Activation output = layer output.
    act_out: Tensor4,
}

/// Forward records of one image stream through encoder + decoder.
pub struct StreamForward {
    /// conv1..conv7 in order.
    tapes: Vec<LayerTape>,
    decomp: DecomposeOutput,
    reconstruction: Tensor4,
}

/// Gradients for one layer's learnables, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub kernel: Tensor4,
    pub bias: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub slope: Option<f32>,
}

/// Gradients for the whole model, conv1..conv7 order.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let layers = (0..7)
            .map(|idx| {
                let p = params.layer(idx);
                let (oc, ic, _, _) = p.kernel.shape();
                LayerGrads {
                    kernel: Tensor4::zeros(oc, ic, 3, 3),
                    bias: vec![0.0; oc],
                    gamma: vec![0.0; oc],
                    beta: vec![0.0; oc],
                    slope: p.prelu_slope.map(|_| 0.0),
                }
            })
            .collect();
        ParamGrads { layers }
    }

    /// True if every gradient entry is finite.
    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.kernel.data().iter().all(|v| v.is_finite())
                && l.bias.iter().all(|v| v.is_finite())
                && l.gamma.iter().all(|v| v.is_finite())
                && l.beta.iter().all(|v| v.is_finite())
                && l.slope.map_or(true, |s| s.is_finite())
        })
    }
}

/// One layer forward with tape: padding → conv → batch norm → activation.
fn forward_layer_tape(
    x: Tensor4,
    p: &ConvLayerParams,
    spec: &LayerSpec,
    mode: BnMode,
) -> Result<LayerTape> {
    let conv = conv2d_forward(&x, &p.kernel, &p.bias, spec.padding)?;
    let (bn, bn_cache) = batchnorm_forward(
        &conv,
        &p.bn_gamma,
        &p.bn_beta,
        &p.bn_running_mean,
        &p.bn_running_var,
        mode,
        BN_EPSILON,
    )?;
    let act_out = activation_forward(&bn, spec.activation, p.prelu_slope)?;
    Ok(LayerTape {
        x,
        bn_cache,
        act_in: bn,
        act_out,
    })
}

fn check_image_input(image: &Tensor4) -> Result<()> {
    if image.c() != 1 {
        return Err(Error::ShapeMismatch {
            context: "decompose image",
            lhs: image.shape_string(),
            rhs: format!("({},1,h,w)", image.n()),
        });
    }
    if image.h() < 8 || image.w() < 8 {
        return Err(Error::InvalidArgument(format!(
            "images must be at least 8x8, got {}",
            image.shape_string()
        )));
    }
    Ok(())
}

/// Run the full autoencoder over one image batch, keeping the tape.
///
/// In `Train` mode batch-norm layers normalize with batch statistics; running
/// statistics are only advanced by [`StreamForward::update_running`], so the
/// forward itself never mutates the parameters.
pub fn forward_tape(image: &Tensor4, params: &ModelParams, mode: BnMode) -> Result<StreamForward> {
    check_image_input(image)?;
    let mut tapes = Vec::with_capacity(7);
    // encoder
    tapes.push(forward_layer_tape(image.clone(), &params.encoder[0], &ENCODER_SPECS[0], mode)?);
    let y1 = tapes[0].act_out.clone();
    tapes.push(forward_layer_tape(y1.clone(), &params.encoder[1], &ENCODER_SPECS[1], mode)?);
    let y2 = tapes[1].act_out.clone();
    tapes.push(forward_layer_tape(y2.clone(), &params.encoder[2], &ENCODER_SPECS[2], mode)?);
    tapes.push(forward_layer_tape(y2.clone(), &params.encoder[3], &ENCODER_SPECS[3], mode)?);
    let background = tapes[2].act_out.clone();
    let detail = tapes[3].act_out.clone();
    // decoder with skip concatenations
    let x5 = concat_channels(&background, &detail)?;
    tapes.push(forward_layer_tape(x5, &params.decoder[0], &DECODER_SPECS[0], mode)?);
    let x6 = concat_channels(&tapes[4].act_out, &y2)?;
    tapes.push(forward_layer_tape(x6, &params.decoder[1], &DECODER_SPECS[1], mode)?);
    let x7 = concat_channels(&tapes[5].act_out, &y1)?;
    tapes.push(forward_layer_tape(x7, &params.decoder[2], &DECODER_SPECS[2], mode)?);
    let reconstruction = tapes[6].act_out.clone();
    Ok(StreamForward {
        decomp: DecomposeOutput {
            background,
            detail,
            skip1: y1,
            skip2: y2,
        },
        tapes,
        reconstruction,
    })
}

impl StreamForward {
    pub fn decomp(&self) -> &DecomposeOutput {
        &self.decomp
    }

    pub fn reconstruction(&self) -> &Tensor4 {
        &self.reconstruction
    }

    /// Advance the batch-norm running statistics from this forward's batch
    /// statistics, in layer order. Call once per training step and stream.
    pub fn update_running(&self, params: &mut ModelParams) {
        for idx in 0..7 {
            let p = params.layer_mut(idx);
            self.tapes[idx].bn_cache.update_running(
                &mut p.bn_running_mean,
                &mut p.bn_running_var,
                BN_MOMENTUM,
            );
        }
    }
}

/// Backward through one layer; accumulates parameter gradients and returns
/// the gradient w.r.t. the layer input.
fn backward_layer(
    idx: usize,
    grad_out: &Tensor4,
    tape: &LayerTape,
    params: &ModelParams,
    grads: &mut LayerGrads,
) -> Result<Tensor4> {
    let spec = layer_spec(idx);
    let p = params.layer(idx);
    let (d_act_in, d_slope) = activation_backward(
        grad_out,
        spec.activation,
        p.prelu_slope,
        &tape.act_in,
        &tape.act_out,
    )?;
    let (d_conv, d_gamma, d_beta) = batchnorm_backward(&d_act_in, &tape.bn_cache, &p.bn_gamma)?;
    let conv_grads = conv2d_backward(&d_conv, &tape.x, &p.kernel, spec.padding)?;
    grads.kernel.add_assign(&conv_grads.kernel, "grad kernel accumulation")?;
    for (a, b) in grads.bias.iter_mut().zip(&conv_grads.bias) {
        *a += b;
    }
    for (a, b) in grads.gamma.iter_mut().zip(&d_gamma) {
        *a += b;
    }
    for (a, b) in grads.beta.iter_mut().zip(&d_beta) {
        *a += b;
    }
    if let (Some(acc), Some(d)) = (grads.slope.as_mut(), d_slope) {
        *acc += d;
    }
    Ok(conv_grads.input)
}

/// Backpropagate loss gradients w.r.t. the decomposition maps and the
/// reconstruction through the whole network, accumulating into `grads`.
pub fn backward_tape(
    tape: &StreamForward,
    params: &ModelParams,
    d_background: &Tensor4,
    d_detail: &Tensor4,
    d_reconstruction: &Tensor4,
    grads: &mut ParamGrads,
) -> Result<()> {
    let g7x = backward_layer(6, d_reconstruction, &tape.tapes[6], params, &mut grads.layers[6])?;
    let (g_y6, g_skip1) = split_channels(&g7x, 64)?;
    let g6x = backward_layer(5, &g_y6, &tape.tapes[5], params, &mut grads.layers[5])?;
    let (g_y5, g_skip2) = split_channels(&g6x, 64)?;
    let g5x = backward_layer(4, &g_y5, &tape.tapes[4], params, &mut grads.layers[4])?;
    let (g_b_dec, g_d_dec) = split_channels(&g5x, 64)?;

    let mut g_b = d_background.clone();
    g_b.add_assign(&g_b_dec, "background grad join")?;
    let mut g_d = d_detail.clone();
    g_d.add_assign(&g_d_dec, "detail grad join")?;

    let g4x = backward_layer(3, &g_d, &tape.tapes[3], params, &mut grads.layers[3])?;
    let g3x = backward_layer(2, &g_b, &tape.tapes[2], params, &mut grads.layers[2])?;

    let mut g_y2 = g3x;
    g_y2.add_assign(&g4x, "conv2 grad join")?;
    g_y2.add_assign(&g_skip2, "skip2 grad join")?;
    let g2x = backward_layer(1, &g_y2, &tape.tapes[1], params, &mut grads.layers[1])?;

    let mut g_y1 = g2x;
    g_y1.add_assign(&g_skip1, "skip1 grad join")?;
    backward_layer(0, &g_y1, &tape.tapes[0], params, &mut grads.layers[0])?;
    Ok(())
}

/// Encode an image batch into background/detail maps plus skip activations.
pub fn decompose(image: &Tensor4, params: &ModelParams, mode: BnMode) -> Result<DecomposeOutput> {
    check_image_input(image)?;
    let run = |x: &Tensor4, idx: usize| -> Result<Tensor4> {
        let p = params.layer(idx);
        let spec = layer_spec(idx);
        let conv = conv2d_forward(x, &p.kernel, &p.bias, spec.padding)?;
        let (bn, _) = batchnorm_forward(
            &conv,
            &p.bn_gamma,
            &p.bn_beta,
            &p.bn_running_mean,
            &p.bn_running_var,
            mode,
            BN_EPSILON,
        )?;
        activation_forward(&bn, spec.activation, p.prelu_slope)
    };
    let y1 = run(image, 0)?;
    let y2 = run(&y1, 1)?;
    let background = run(&y2, 2)?;
    let detail = run(&y2, 3)?;
    Ok(DecomposeOutput {
        background,
        detail,
        skip1: y1,
        skip2: y2,
    })
}

/// Decode background/detail maps (plus skip activations) into an image.
pub fn reconstruct(
    background: &Tensor4,
    detail: &Tensor4,
    skip1: &Tensor4,
    skip2: &Tensor4,
    params: &ModelParams,
    mode: BnMode,
) -> Result<Tensor4> {
    for (name, t) in [("detail", detail), ("skip1", skip1), ("skip2", skip2)] {
        if t.shape() != background.shape() {
            return Err(Error::ShapeMismatch {
                context: "reconstruct inputs",
                lhs: background.shape_string(),
                rhs: format!("{name} {}", t.shape_string()),
            });
        }
    }
    let run = |x: &Tensor4, idx: usize| -> Result<Tensor4> {
        let p = params.layer(idx);
        let spec = layer_spec(idx);
        let conv = conv2d_forward(x, &p.kernel, &p.bias, spec.padding)?;
        let (bn, _) = batchnorm_forward(
            &conv,
            &p.bn_gamma,
            &p.bn_beta,
            &p.bn_running_mean,
            &p.bn_running_var,
            mode,
            BN_EPSILON,
        )?;
        activation_forward(&bn, spec.activation, p.prelu_slope)
    };
    let y5 = run(&concat_channels(background, detail)?, 4)?;
    let y6 = run(&concat_channels(&y5, skip2)?, 5)?;
    run(&concat_channels(&y6, skip1)?, 6)
}
