//! The training objective.
//!
//! Two decomposition terms pull the background feature maps of the two
//! modalities together and push the detail maps apart, both squashed through
//! tanh; two reconstruction terms mix mean squared difference with a
//! structural-similarity penalty; a final term matches image gradients of
//! the visible reconstruction. All norms are mean-normalized (sums divided
//! by element count) so the tanh terms stay out of saturation and weights
//! keep their meaning across image sizes.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Side length of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Term weights of the objective. `alpha1` scales the detail-separation
/// term, `alpha2`/`alpha3` the infrared/visible reconstruction terms,
/// `alpha4` the gradient term, and `lambda` the SSIM share inside each
/// reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.05,
            alpha2: 2.0,
            alpha3: 2.0,
            alpha4: 10.0,
            lambda: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Raw per-term values; weights are applied only when assembling `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// tanh of the mean squared background-map difference.
    pub decomp_background_term: f64,
    /// tanh of the mean squared detail-map difference.
    pub decomp_detail_term: f64,
    /// msd + λ·(1−SSIM)/2 for the infrared pair.
    pub recon_ir: f64,
    /// msd + λ·(1−SSIM)/2 for the visible pair.
    pub recon_vis: f64,
    /// Mean absolute image-gradient difference of the visible pair.
    pub gradient_term: f64,
}

impl LossBreakdown {
    /// Reassemble `total` from the raw terms and weights.
    pub fn reassemble(&self, weights: &LossWeights) -> f64 {
        self.decomp_background_term - weights.alpha1 * self.decomp_detail_term
            + weights.alpha2 * self.recon_ir
            + weights.alpha3 * self.recon_vis
            + weights.alpha4 * self.gradient_term
    }
}

/// The four decomposition maps the objective compares across modalities.
#[derive(Debug, Clone, Copy)]
pub struct DecompositionMaps<'a> {
    pub background_ir: &'a Tensor4,
    pub background_vis: &'a Tensor4,
    pub detail_ir: &'a Tensor4,
    pub detail_vis: &'a Tensor4,
}

/// Gradients of the total loss w.r.t. every tensor the network produced.
#[derive(Debug, Clone)]
pub struct TotalLossGrads {
    pub background_ir: Tensor4,
    pub background_vis: Tensor4,
    pub detail_ir: Tensor4,
    pub detail_vis: Tensor4,
    pub ir_recon: Tensor4,
    pub vis_recon: Tensor4,
}

/// Mean squared difference, accumulated in f64.
pub fn msd(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    a.ensure_same_shape(b, "msd")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Value and per-term breakdown of the decomposition objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionLoss {
    /// background_term − α1·detail_term
    pub value: f64,
    pub background_term: f64,
    pub detail_term: f64,
}

/// Background maps are pulled together, detail maps pushed apart; tanh
/// bounds both sides, so the value always lies in (−α1, 1).
pub fn decomposition_loss(
    background_vis: &Tensor4,
    background_ir: &Tensor4,
    detail_vis: &Tensor4,
    detail_ir: &Tensor4,
    weights: &LossWeights,
) -> Result<DecompositionLoss> {
    background_vis.ensure_same_shape(background_ir, "decomposition_loss backgrounds")?;
    detail_vis.ensure_same_shape(detail_ir, "decomposition_loss details")?;
    background_vis.ensure_same_shape(detail_vis, "decomposition_loss branches")?;
    let background_term = msd(background_vis, background_ir)?.tanh();
    let detail_term = msd(detail_vis, detail_ir)?.tanh();
    Ok(DecompositionLoss {
        value: background_term - weights.alpha1 * detail_term,
        background_term,
        detail_term,
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut win = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in win.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut win {
        *v /= sum;
    }
    win
}

fn ssim_check(x: &Tensor4, xhat: &Tensor4, data_range: f64) -> Result<()> {
    x.ensure_same_shape(xhat, "ssim")?;
    if x.c() != 1 {
        return Err(Error::InvalidArgument(format!(
            "ssim expects single-channel images, got {} channels",
            x.c()
        )));
    }
    if x.h() < SSIM_WINDOW || x.w() < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            x.h(),
            x.w()
        )));
    }
    if !(data_range > 0.0) || !data_range.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ssim data_range must be positive and finite, got {data_range}"
        )));
    }
    Ok(())
}

/// Sum of local SSIM values over one plane; optionally accumulates
/// d(sum)/d(xhat) into `grad` (length h·w, caller scales afterwards).
fn ssim_plane(
    x: &[f32],
    xhat: &[f32],
    h: usize,
    w: usize,
    c1: f64,
    c2: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let win = gaussian_window();
    let mut sum = 0.0;
    for py in 0..=h - SSIM_WINDOW {
        for px in 0..=w - SSIM_WINDOW {
            let (mut mu1, mut mu2, mut m11, mut m22, mut m12) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
            for (i, &wy) in win.iter().enumerate() {
                let row = (py + i) * w + px;
                for (j, &wx) in win.iter().enumerate() {
                    let wij = wy * wx;
                    let a = x[row + j] as f64;
                    let b = xhat[row + j] as f64;
                    mu1 += wij * a;
                    mu2 += wij * b;
                    m11 += wij * a * a;
                    m22 += wij * b * b;
                    m12 += wij * a * b;
                }
            }
            let sigma1 = m11 - mu1 * mu1;
            let sigma2 = m22 - mu2 * mu2;
            let sigma12 = m12 - mu1 * mu2;
            let a1 = 2.0 * mu1 * mu2 + c1;
            let a2 = 2.0 * sigma12 + c2;
            let b1 = mu1 * mu1 + mu2 * mu2 + c1;
            let b2 = sigma1 + sigma2 + c2;
            let s = (a1 * a2) / (b1 * b2);
            sum += s;
            if let Some(g) = grad.as_deref_mut() {
                // Chain through the weighted raw moments: μ2, m22, m12 are
                // the only quantities that depend on x̂.
                let g_mu2 = 2.0 * mu1 * a2 / (b1 * b2) - 2.0 * mu2 * s / b1;
                let g_sigma12 = 2.0 * a1 / (b1 * b2);
                let g_sigma2 = -s / b2;
                let g_mu2_total = g_mu2 - 2.0 * mu2 * g_sigma2 - mu1 * g_sigma12;
                for (i, &wy) in win.iter().enumerate() {
                    let row = (py + i) * w + px;
                    for (j, &wx) in win.iter().enumerate() {
                        let wij = wy * wx;
                        let k = row + j;
                        g[k] += wij
                            * (g_mu2_total
                                + 2.0 * (xhat[k] as f64) * g_sigma2
                                + (x[k] as f64) * g_sigma12);
                    }
                }
            }
        }
    }
    sum
}

/// Mean local structural similarity over an 11×11 Gaussian window (σ=1.5),
/// valid region only. `data_range` is the dynamic range of the inputs
/// (1.0 for normalized images).
pub fn ssim(x: &Tensor4, xhat: &Tensor4, data_range: f64) -> Result<f64> {
    ssim_check(x, xhat, data_range)?;
    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);
    let (h, w) = (x.h(), x.w());
    let mut sum = 0.0;
    for ni in 0..x.n() {
        sum += ssim_plane(x.plane(ni, 0), xhat.plane(ni, 0), h, w, c1, c2, None);
    }
    let windows = x.n() * (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    Ok(sum / windows as f64)
}

/// Like [`ssim`], also returning d(ssim)/d(xhat).
pub fn ssim_with_grad(x: &Tensor4, xhat: &Tensor4, data_range: f64) -> Result<(f64, Tensor4)> {
    ssim_check(x, xhat, data_range)?;
    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);
    let (h, w) = (x.h(), x.w());
    let windows = x.n() * (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    let scale = 1.0 / windows as f64;
    let mut sum = 0.0;
    let mut grad = Tensor4::zeros(x.n(), 1, h, w);
    let mut gplane = vec![0.0f64; h * w];
    for ni in 0..x.n() {
        gplane.fill(0.0);
        sum += ssim_plane(x.plane(ni, 0), xhat.plane(ni, 0), h, w, c1, c2, Some(&mut gplane));
        let out = grad.plane_mut(ni, 0);
        for (o, &g) in out.iter_mut().zip(&gplane) {
            *o = (g * scale) as f32;
        }
    }
    Ok((sum * scale, grad))
}

/// msd(X,X̂) + λ·(1−SSIM(X,X̂))/2 on normalized images (data range 1).
pub fn reconstruction_pair_loss(x: &Tensor4, xhat: &Tensor4, lambda: f64) -> Result<f64> {
    let m = msd(x, xhat)?;
    let s = ssim(x, xhat, 1.0)?;
    Ok(m + lambda * (1.0 - s) / 2.0)
}

fn check_gradient_size(v: &Tensor4) -> Result<()> {
    if v.h() < 2 || v.w() < 2 {
        return Err(Error::InvalidArgument(format!(
            "image gradients need h,w >= 2, got {}",
            v.shape_string()
        )));
    }
    Ok(())
}

/// Mean absolute difference of forward-difference image gradients, the two
/// directions averaged separately and summed. Optionally accumulates the
/// gradient w.r.t. `vhat` (sign subgradient, sign(0)=0).
fn gradient_l1_impl(v: &Tensor4, vhat: &Tensor4, mut grad: Option<&mut Tensor4>) -> Result<f64> {
    v.ensure_same_shape(vhat, "gradient_l1")?;
    check_gradient_size(v)?;
    let (n, c, h, w) = v.shape();
    let count_x = (n * c * h * (w - 1)) as f64;
    let count_y = (n * c * (h - 1) * w) as f64;
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    for ni in 0..n {
        for ci in 0..c {
            let pv = v.plane(ni, ci);
            let ph = vhat.plane(ni, ci);
            for y in 0..h {
                for x in 0..w - 1 {
                    let k = y * w + x;
                    let e = (pv[k + 1] as f64 - pv[k] as f64) - (ph[k + 1] as f64 - ph[k] as f64);
                    sum_x += e.abs();
                    if let Some(g) = grad.as_deref_mut() {
                        let sgn = if e > 0.0 { 1.0 } else if e < 0.0 { -1.0 } else { 0.0 };
                        let gp = g.plane_mut(ni, ci);
                        gp[k + 1] += (-sgn / count_x) as f32;
                        gp[k] += (sgn / count_x) as f32;
                    }
                }
            }
            for y in 0..h - 1 {
                for x in 0..w {
                    let k = y * w + x;
                    let e = (pv[k + w] as f64 - pv[k] as f64) - (ph[k + w] as f64 - ph[k] as f64);
                    sum_y += e.abs();
                    if let Some(g) = grad.as_deref_mut() {
                        let sgn = if e > 0.0 { 1.0 } else if e < 0.0 { -1.0 } else { 0.0 };
                        let gp = g.plane_mut(ni, ci);
                        gp[k + w] += (-sgn / count_y) as f32;
                        gp[k] += (sgn / count_y) as f32;
                    }
                }
            }
        }
    }
    Ok(sum_x / count_x + sum_y / count_y)
}

/// Mean absolute difference between the forward-difference gradients of the
/// two images (valid region, per-direction means summed).
pub fn gradient_l1(v: &Tensor4, vhat: &Tensor4) -> Result<f64> {
    gradient_l1_impl(v, vhat, None)
}

fn check_total_inputs(
    ir: &Tensor4,
    ir_recon: &Tensor4,
    vis: &Tensor4,
    vis_recon: &Tensor4,
    maps: &DecompositionMaps,
    weights: &LossWeights,
) -> Result<()> {
    weights.validate()?;
    ir.ensure_same_shape(ir_recon, "total_loss infrared pair")?;
    vis.ensure_same_shape(vis_recon, "total_loss visible pair")?;
    ir.ensure_same_shape(vis, "total_loss modalities")?;
    maps.background_ir
        .ensure_same_shape(maps.background_vis, "total_loss backgrounds")?;
    maps.detail_ir
        .ensure_same_shape(maps.detail_vis, "total_loss details")?;
    Ok(())
}

/// Assemble the full objective from images, reconstructions, and
/// decomposition maps. Terms are reported raw; weights only enter `total`.
pub fn total_loss(
    ir: &Tensor4,
    ir_recon: &Tensor4,
    vis: &Tensor4,
    vis_recon: &Tensor4,
    maps: &DecompositionMaps,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    check_total_inputs(ir, ir_recon, vis, vis_recon, maps, weights)?;
    let decomp = decomposition_loss(
        maps.background_vis,
        maps.background_ir,
        maps.detail_vis,
        maps.detail_ir,
        weights,
    )?;
    let recon_ir = reconstruction_pair_loss(ir, ir_recon, weights.lambda)?;
    let recon_vis = reconstruction_pair_loss(vis, vis_recon, weights.lambda)?;
    let gradient_term = gradient_l1(vis, vis_recon)?;
    let mut breakdown = LossBreakdown {
        total: 0.0,
        decomp_background_term: decomp.background_term,
        decomp_detail_term: decomp.detail_term,
        recon_ir,
        recon_vis,
        gradient_term,
    };
    breakdown.total = breakdown.reassemble(weights);
    Ok(breakdown)
}

/// d msd(a, ·)/d b scaled by `scale`, i.e. scale·2·(b−a)/len.
fn msd_grad(a: &Tensor4, b: &Tensor4, scale: f64) -> Tensor4 {
    let len = a.len() as f64;
    let mut out = b.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(a.data()) {
        *o = (scale * 2.0 * (*o as f64 - x as f64) / len) as f32;
    }
    out
}

/// Total loss plus its gradients w.r.t. the six network outputs.
pub fn total_loss_with_grads(
    ir: &Tensor4,
    ir_recon: &Tensor4,
    vis: &Tensor4,
    vis_recon: &Tensor4,
    maps: &DecompositionMaps,
    weights: &LossWeights,
) -> Result<(LossBreakdown, TotalLossGrads)> {
    check_total_inputs(ir, ir_recon, vis, vis_recon, maps, weights)?;

    // Decomposition terms: d tanh(m)/d map = (1−tanh²(m)) · 2(diff)/len.
    let msd_b = msd(maps.background_vis, maps.background_ir)?;
    let msd_d = msd(maps.detail_vis, maps.detail_ir)?;
    let background_term = msd_b.tanh();
    let detail_term = msd_d.tanh();
    let sech2_b = 1.0 - background_term * background_term;
    let sech2_d = 1.0 - detail_term * detail_term;
    let background_vis_g = msd_grad(maps.background_ir, maps.background_vis, sech2_b);
    let background_ir_g = msd_grad(maps.background_vis, maps.background_ir, sech2_b);
    let detail_vis_g = msd_grad(maps.detail_ir, maps.detail_vis, -weights.alpha1 * sech2_d);
    let detail_ir_g = msd_grad(maps.detail_vis, maps.detail_ir, -weights.alpha1 * sech2_d);

    // Reconstruction terms: α·(msd + λ·(1−SSIM)/2).
    let (ssim_ir, ssim_ir_g) = ssim_with_grad(ir, ir_recon, 1.0)?;
    let (ssim_vis, ssim_vis_g) = ssim_with_grad(vis, vis_recon, 1.0)?;
    let msd_ir = msd(ir, ir_recon)?;
    let msd_vis = msd(vis, vis_recon)?;
    let recon_ir = msd_ir + weights.lambda * (1.0 - ssim_ir) / 2.0;
    let recon_vis = msd_vis + weights.lambda * (1.0 - ssim_vis) / 2.0;

    let mut ir_recon_g = msd_grad(ir, ir_recon, weights.alpha2);
    let ssim_scale_ir = (-weights.alpha2 * weights.lambda / 2.0) as f32;
    for (o, &g) in ir_recon_g.data_mut().iter_mut().zip(ssim_ir_g.data()) {
        *o += ssim_scale_ir * g;
    }

    let mut vis_recon_g = msd_grad(vis, vis_recon, weights.alpha3);
    let ssim_scale_vis = (-weights.alpha3 * weights.lambda / 2.0) as f32;
    for (o, &g) in vis_recon_g.data_mut().iter_mut().zip(ssim_vis_g.data()) {
        *o += ssim_scale_vis * g;
    }

    // Gradient term, visible pair only.
    let mut grad_term_g = Tensor4::zeros(vis.n(), vis.c(), vis.h(), vis.w());
    let gradient_term = gradient_l1_impl(vis, vis_recon, Some(&mut grad_term_g))?;
    let a4 = weights.alpha4 as f32;
    for (o, &g) in vis_recon_g.data_mut().iter_mut().zip(grad_term_g.data()) {
        *o += a4 * g;
    }

    let mut breakdown = LossBreakdown {
        total: 0.0,
        decomp_background_term: background_term,
        decomp_detail_term: detail_term,
        recon_ir,
        recon_vis,
        gradient_term,
    };
    breakdown.total = breakdown.reassemble(weights);
    Ok((
        breakdown,
        TotalLossGrads {
            background_ir: background_ir_g,
            background_vis: background_vis_g,
            detail_ir: detail_ir_g,
            detail_vis: detail_vis_g,
            ir_recon: ir_recon_g,
            vis_recon: vis_recon_g,
        },
    ))
}
