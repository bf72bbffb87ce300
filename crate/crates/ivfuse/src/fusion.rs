//! Test-time fusion: merge the two sources' feature maps, then decode.
//!
//! Three strategies: plain summation, a fixed convex combination, and
//! activity-weighted averaging where per-position weights come from the
//! channelwise L1 activity smoothed by a 3×3 box blur. The decoder's skip
//! inputs are fused with the same strategy as the background/detail maps —
//! the decoder cannot run without them.

use crate::error::{Error, Result};
use crate::net::{decompose, reconstruct, ModelParams};
use crate::tensor::{BnMode, Tensor4};

/// How two feature maps are merged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionStrategy {
    /// Element-wise sum.
    Summation,
    /// Fixed convex combination: (γ1,γ2) weight the infrared/visible
    /// background maps, (γ3,γ4) the detail maps. Skip maps use (γ1,γ2).
    WeightedAverage {
        gamma1: f64,
        gamma2: f64,
        gamma3: f64,
        gamma4: f64,
    },
    /// Per-position weights from box-blurred channelwise L1 activity.
    L1Norm,
}

impl FusionStrategy {
    /// The half-and-half weighted average.
    pub fn weighted_average_default() -> Self {
        FusionStrategy::WeightedAverage {
            gamma1: 0.5,
            gamma2: 0.5,
            gamma3: 0.5,
            gamma4: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FusionStrategy::WeightedAverage {
            gamma1,
            gamma2,
            gamma3,
            gamma4,
        } = *self
        {
            for (name, g) in [("gamma1", gamma1), ("gamma2", gamma2), ("gamma3", gamma3), ("gamma4", gamma4)] {
                if !g.is_finite() || g < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "{name} must be finite and nonnegative, got {g}"
                    )));
                }
            }
            if (gamma1 + gamma2 - 1.0).abs() > 1e-9 || (gamma3 + gamma4 - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "weighted-average gammas must pair to 1: γ1+γ2={}, γ3+γ4={}",
                    gamma1 + gamma2,
                    gamma3 + gamma4
                )));
            }
        }
        Ok(())
    }
}

/// Which decomposition product a map is, for weighted-average γ selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Background,
    Detail,
    Skip,
}

/// 3×3 box mean with replicate-edge sampling.
fn box_blur3_replicate(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in -1i64..=1 {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    sum += src[yy * w + xx];
                }
            }
            out[y * w + x] = sum / 9.0;
        }
    }
    out
}

/// Channelwise L1 norm per position, blurred: the "activity" of a map.
fn activity(t: &Tensor4, ni: usize) -> Vec<f64> {
    let (_, c, h, w) = t.shape();
    let mut l1 = vec![0.0f64; h * w];
    for ci in 0..c {
        let plane = t.plane(ni, ci);
        for (acc, &v) in l1.iter_mut().zip(plane) {
            *acc += (v as f64).abs();
        }
    }
    box_blur3_replicate(&l1, h, w)
}

/// Merge two equally-shaped feature maps. `kind` only matters for
/// [`FusionStrategy::WeightedAverage`], which applies (γ1,γ2) to background
/// and skip maps and (γ3,γ4) to detail maps.
pub fn fuse_maps(
    m_ir: &Tensor4,
    m_vis: &Tensor4,
    strategy: &FusionStrategy,
    kind: MapKind,
) -> Result<Tensor4> {
    m_ir.ensure_same_shape(m_vis, "fuse_maps")?;
    strategy.validate()?;
    let (n, c, h, w) = m_ir.shape();
    match *strategy {
        FusionStrategy::Summation => {
            let mut out = m_ir.clone();
            out.add_assign(m_vis, "fuse_maps summation")?;
            Ok(out)
        }
        FusionStrategy::WeightedAverage {
            gamma1,
            gamma2,
            gamma3,
            gamma4,
        } => {
            let (ga, gb) = match kind {
                MapKind::Background | MapKind::Skip => (gamma1, gamma2),
                MapKind::Detail => (gamma3, gamma4),
            };
            let mut out = Tensor4::zeros(n, c, h, w);
            for ((o, &a), &b) in out
                .data_mut()
                .iter_mut()
                .zip(m_ir.data())
                .zip(m_vis.data())
            {
                *o = (ga * a as f64 + gb * b as f64) as f32;
            }
            Ok(out)
        }
        FusionStrategy::L1Norm => {
            let mut out = Tensor4::zeros(n, c, h, w);
            for ni in 0..n {
                let a_ir = activity(m_ir, ni);
                let a_vis = activity(m_vis, ni);
                for ci in 0..c {
                    let pi = m_ir.plane(ni, ci);
                    let pv = m_vis.plane(ni, ci);
                    let po = out.plane_mut(ni, ci);
                    for k in 0..h * w {
                        let total = a_ir[k] + a_vis[k];
                        let eta_ir = if total > 0.0 { a_ir[k] / total } else { 0.5 };
                        let eta_vis = 1.0 - eta_ir;
                        po[k] = (eta_ir * pi[k] as f64 + eta_vis * pv[k] as f64) as f32;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Decompose both sources, fuse all four map pairs with `strategy`, decode.
/// Inputs must be (1,1,h,w) with identical sizes; output is (1,1,h,w) in (0,1).
pub fn fuse_images(
    ir: &Tensor4,
    vis: &Tensor4,
    params: &ModelParams,
    strategy: &FusionStrategy,
) -> Result<Tensor4> {
    if ir.shape() != vis.shape() {
        return Err(Error::ShapeMismatch {
            context: "fuse_images inputs",
            lhs: ir.shape_string(),
            rhs: vis.shape_string(),
        });
    }
    if ir.n() != 1 || ir.c() != 1 {
        return Err(Error::InvalidArgument(format!(
            "fuse_images expects one single-channel image per source, got {}",
            ir.shape_string()
        )));
    }
    strategy.validate()?;
    let di = decompose(ir, params, BnMode::Eval)?;
    let dv = decompose(vis, params, BnMode::Eval)?;
    let background = fuse_maps(&di.background, &dv.background, strategy, MapKind::Background)?;
    let detail = fuse_maps(&di.detail, &dv.detail, strategy, MapKind::Detail)?;
    let skip1 = fuse_maps(&di.skip1, &dv.skip1, strategy, MapKind::Skip)?;
    let skip2 = fuse_maps(&di.skip2, &dv.skip2, strategy, MapKind::Skip)?;
    reconstruct(&background, &detail, &skip1, &skip2, params, BnMode::Eval)
}
