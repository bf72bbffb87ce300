//! 3×3 stride-1 convolution (pad 1, spatial size preserved), forward and
//! backward.
//!
//! The inner loops are written so LLVM vectorizes them: inputs are padded
//! into f64 planes once per sample, all nine taps of a kernel are applied in
//! a single pass per row with `mul_add`, and every output element has a fixed
//! accumulation order (bias, then input channels in order, then taps 0..9).
//! That order is what makes training runs bit-reproducible.

use super::pad::{fold_padded_grad, pad_sample_f64, PaddingMode};
use super::Tensor4;
use crate::error::{Error, Result};

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub kernel: Tensor4,
    pub bias: Vec<f32>,
}

fn check_conv_args(input: &Tensor4, kernel: &Tensor4, bias: &[f32], padding: PaddingMode) -> Result<()> {
    if kernel.h() != 3 || kernel.w() != 3 {
        return Err(Error::InvalidArgument(format!(
            "convolution kernels must be 3x3, got {}",
            kernel.shape_string()
        )));
    }
    if kernel.c() != input.c() {
        return Err(Error::ShapeMismatch {
            context: "conv2d input channels vs kernel",
            lhs: input.shape_string(),
            rhs: kernel.shape_string(),
        });
    }
    if bias.len() != kernel.n() {
        return Err(Error::InvalidArgument(format!(
            "bias length {} does not match {} output channels",
            bias.len(),
            kernel.n()
        )));
    }
    if padding == PaddingMode::Reflection && (input.h() < 2 || input.w() < 2) {
        return Err(Error::InvalidArgument(format!(
            "reflection padding requires h,w >= 2, got {}",
            input.shape_string()
        )));
    }
    Ok(())
}

/// The nine kernel weights for one (out-channel, in-channel) pair, as f64 in
/// tap order (dy-major).
#[inline]
fn taps(kernel: &Tensor4, o: usize, i: usize) -> [f64; 9] {
    let base = kernel.idx(o, i, 0, 0);
    let k = &kernel.data()[base..base + 9];
    [
        k[0] as f64,
        k[1] as f64,
        k[2] as f64,
        k[3] as f64,
        k[4] as f64,
        k[5] as f64,
        k[6] as f64,
        k[7] as f64,
        k[8] as f64,
    ]
}

/// Same as [`taps`] but rotated 180°, for the input-gradient pass.
#[inline]
fn taps_flipped(kernel: &Tensor4, o: usize, i: usize) -> [f64; 9] {
    let t = taps(kernel, o, i);
    [t[8], t[7], t[6], t[5], t[4], t[3], t[2], t[1], t[0]]
}

/// `acc[y][x] += Σ_t k[t] · p[y + t/3][x + t%3]` over an `oh×ow` output grid;
/// `p` is an `(oh+2)×(ow+2)` padded plane. One pass per row applies all nine
/// taps, grouped into three row sums to keep the FMA chains short.
#[inline]
fn conv9_acc(acc: &mut [f64], p: &[f64], k: &[f64; 9], oh: usize, ow: usize) {
    let pw = ow + 2;
    for y in 0..oh {
        let arow = &mut acc[y * ow..y * ow + ow];
        let r0 = &p[y * pw..y * pw + ow + 2];
        let r1 = &p[(y + 1) * pw..(y + 1) * pw + ow + 2];
        let r2 = &p[(y + 2) * pw..(y + 2) * pw + ow + 2];
        for x in 0..ow {
            let s0 = k[2].mul_add(r0[x + 2], k[1].mul_add(r0[x + 1], k[0] * r0[x]));
            let s1 = k[5].mul_add(r1[x + 2], k[4].mul_add(r1[x + 1], k[3] * r1[x]));
            let s2 = k[8].mul_add(r2[x + 2], k[7].mul_add(r2[x + 1], k[6] * r2[x]));
            arow[x] += s0 + (s1 + s2);
        }
    }
}

const LANES: usize = 8;

/// Kernel-gradient micro-kernel: accumulates all nine tap correlations
/// `out[t] += Σ_{y,x} go[y][x] · p[y + t/3][x + t%3]` in one pass over `go`.
/// Each tap keeps `LANES` partial sums (folded at the end in lane order) so
/// the reduction vectorizes while staying order-fixed.
#[inline]
fn corr9_acc(out: &mut [f64; 9], go: &[f64], p: &[f64], h: usize, w: usize) {
    let pw = w + 2;
    let mut acc = [[0.0f64; LANES]; 9];
    for y in 0..h {
        let g = &go[y * w..y * w + w];
        let rows = [&p[y * pw..], &p[(y + 1) * pw..], &p[(y + 2) * pw..]];
        let chunks = w / LANES;
        for ci in 0..chunks {
            let base = ci * LANES;
            let gv: [f64; LANES] = g[base..base + LANES].try_into().unwrap();
            for t in 0..9 {
                let pv: [f64; LANES] = rows[t / 3][base + (t % 3)..base + (t % 3) + LANES]
                    .try_into()
                    .unwrap();
                let a = &mut acc[t];
                for l in 0..LANES {
                    a[l] = gv[l].mul_add(pv[l], a[l]);
                }
            }
        }
        for x in chunks * LANES..w {
            for t in 0..9 {
                acc[t][0] += g[x] * rows[t / 3][x + t % 3];
            }
        }
    }
    for t in 0..9 {
        out[t] += acc[t].iter().sum::<f64>();
    }
}

/// 3×3 convolution with padding 1 and stride 1.
///
/// `output[n,o,y,x] = bias[o] + Σ_{i,dy,dx} kernel[o,i,dy,dx] · padded[n,i,y+dy,x+dx]`
pub fn conv2d_forward(
    input: &Tensor4,
    kernel: &Tensor4,
    bias: &[f32],
    padding: PaddingMode,
) -> Result<Tensor4> {
    check_conv_args(input, kernel, bias, padding)?;
    input.ensure_finite("conv2d_forward input")?;
    kernel.ensure_finite("conv2d_forward kernel")?;
    let (n, ic, h, w) = input.shape();
    let oc = kernel.n();
    let mut out = Tensor4::zeros(n, oc, h, w);
    let plane = (h + 2) * (w + 2);
    let mut padded = Vec::new();
    let mut acc = vec![0.0f64; h * w];
    for ni in 0..n {
        pad_sample_f64(input, ni, padding, &mut padded);
        for o in 0..oc {
            acc.fill(bias[o] as f64);
            for i in 0..ic {
                conv9_acc(&mut acc, &padded[i * plane..(i + 1) * plane], &taps(kernel, o, i), h, w);
            }
            for (dst, &v) in out.plane_mut(ni, o).iter_mut().zip(&acc) {
                *dst = v as f32;
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv2d_forward`]: gradients w.r.t. input, kernel and
/// bias. Reflection padding's backward accumulates boundary gradients into
/// the reflected source pixels.
pub fn conv2d_backward(
    grad_out: &Tensor4,
    saved_input: &Tensor4,
    kernel: &Tensor4,
    padding: PaddingMode,
) -> Result<ConvGrads> {
    let (n, ic, h, w) = saved_input.shape();
    let oc = kernel.n();
    check_conv_args(saved_input, kernel, &vec![0.0; oc], padding)?;
    if grad_out.shape() != (n, oc, h, w) {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward grad_out",
            lhs: grad_out.shape_string(),
            rhs: format!("({n},{oc},{h},{w})"),
        });
    }
    grad_out.ensure_finite("conv2d_backward grad_out")?;

    let mut grad_bias64 = vec![0.0f64; oc];
    let mut grad_kernel64 = vec![[0.0f64; 9]; oc * ic];
    let mut grad_input = Tensor4::zeros(n, ic, h, w);

    let plane = (h + 2) * (w + 2);
    // grad_out planes zero-embedded with a 2-pixel margin: correlating them
    // with the 180°-rotated kernel yields the gradient w.r.t. the padded
    // input, which is then folded through the padding's transpose.
    let (zh, zw) = (h + 4, w + 4);
    let mut padded = Vec::new();
    let mut go64 = vec![0.0f64; oc * h * w];
    let mut gz = vec![0.0f64; oc * zh * zw];
    let mut gp = vec![0.0f64; plane];
    let mut gin = vec![0.0f64; h * w];

    for ni in 0..n {
        pad_sample_f64(saved_input, ni, padding, &mut padded);
        for o in 0..oc {
            let src = grad_out.plane(ni, o);
            let dst64 = &mut go64[o * h * w..(o + 1) * h * w];
            for (d, &s) in dst64.iter_mut().zip(src) {
                *d = s as f64;
            }
            grad_bias64[o] += dst64.iter().sum::<f64>();
            let z = &mut gz[o * zh * zw..(o + 1) * zh * zw];
            z.fill(0.0);
            for y in 0..h {
                z[(y + 2) * zw + 2..(y + 2) * zw + 2 + w].copy_from_slice(&dst64[y * w..y * w + w]);
            }
        }
        for o in 0..oc {
            let g = &go64[o * h * w..(o + 1) * h * w];
            for i in 0..ic {
                corr9_acc(
                    &mut grad_kernel64[o * ic + i],
                    g,
                    &padded[i * plane..(i + 1) * plane],
                    h,
                    w,
                );
            }
        }
        for i in 0..ic {
            gp.fill(0.0);
            for o in 0..oc {
                conv9_acc(
                    &mut gp,
                    &gz[o * zh * zw..(o + 1) * zh * zw],
                    &taps_flipped(kernel, o, i),
                    h + 2,
                    w + 2,
                );
            }
            gin.fill(0.0);
            fold_padded_grad(&gp, h, w, padding, &mut gin);
            for (dst, &v) in grad_input.plane_mut(ni, i).iter_mut().zip(&gin) {
                *dst = v as f32;
            }
        }
    }

    let mut gk = Tensor4::zeros(oc, ic, 3, 3);
    for o in 0..oc {
        for i in 0..ic {
            let src = &grad_kernel64[o * ic + i];
            let base = gk.idx(o, i, 0, 0);
            for t in 0..9 {
                gk.data_mut()[base + t] = src[t] as f32;
            }
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: gk,
        bias: grad_bias64.iter().map(|&v| v as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent nested-loop convolution: straight transcription of the
    /// defining sum, with its own padding arithmetic.
    pub(crate) fn conv_oracle(
        input: &Tensor4,
        kernel: &Tensor4,
        bias: &[f32],
        padding: PaddingMode,
    ) -> Tensor4 {
        let (n, ic, h, w) = input.shape();
        let oc = kernel.n();
        let fetch = |ni: usize, i: usize, y: isize, x: isize| -> f64 {
            let reflect = |v: isize, len: usize| -> Option<usize> {
                match padding {
                    PaddingMode::Zero => {
                        if v < 0 || v >= len as isize {
                            None
                        } else {
                            Some(v as usize)
                        }
                    }
                    PaddingMode::Reflection => Some(if v < 0 {
                        (-v) as usize
                    } else if v >= len as isize {
                        (2 * len as isize - 2 - v) as usize
                    } else {
                        v as usize
                    }),
                }
            };
            match (reflect(y, h), reflect(x, w)) {
                (Some(sy), Some(sx)) => input.at(ni, i, sy, sx) as f64,
                _ => 0.0,
            }
        };
        Tensor4::from_fn(n, oc, h, w, |ni, o, y, x| {
            let mut sum = bias[o] as f64;
            for i in 0..ic {
                for dy in 0..3isize {
                    for dx in 0..3isize {
                        sum += kernel.at(o, i, dy as usize, dx as usize) as f64
                            * fetch(ni, i, y as isize + dy - 1, x as isize + dx - 1);
                    }
                }
            }
            sum as f32
        })
    }

    pub(crate) fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn box_sum_counts_with_zero_padding() {
        let input = Tensor4::filled(1, 1, 3, 3, 1.0);
        let kernel = Tensor4::filled(1, 1, 3, 3, 1.0);
        let out = conv2d_forward(&input, &kernel, &[0.0], PaddingMode::Zero).unwrap();
        assert_eq!(out.at(0, 0, 1, 1), 9.0); // full neighborhood
        for &(y, x) in &[(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(out.at(0, 0, y, x), 4.0); // corners see a 2×2 patch
        }
        for &(y, x) in &[(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert_eq!(out.at(0, 0, y, x), 6.0);
        }
    }

    #[test]
    fn reflection_keeps_constant_images_constant() {
        let input = Tensor4::filled(1, 1, 3, 3, 1.0);
        let kernel = Tensor4::filled(1, 1, 3, 3, 1.0);
        let out = conv2d_forward(&input, &kernel, &[0.0], PaddingMode::Reflection).unwrap();
        assert!(out.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..6 {
            let (n, ic, oc) = (1 + case % 2, 1 + case % 3, 1 + (case + 1) % 4);
            let (h, w) = (2 + case % 5, 2 + (case * 3) % 6);
            let padding = if case % 2 == 0 { PaddingMode::Zero } else { PaddingMode::Reflection };
            let input = random_tensor(&mut rng, n, ic, h, w);
            let kernel = random_tensor(&mut rng, oc, ic, 3, 3);
            let bias: Vec<f32> = (0..oc).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let got = conv2d_forward(&input, &kernel, &bias, padding).unwrap();
            let want = conv_oracle(&input, &kernel, &bias, padding);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-5, "case {case}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let input = Tensor4::zeros(1, 2, 4, 4);
        let k5 = Tensor4::zeros(1, 2, 5, 5);
        assert!(conv2d_forward(&input, &k5, &[0.0], PaddingMode::Zero).is_err());
        let k_wrong_c = Tensor4::zeros(1, 3, 3, 3);
        assert!(conv2d_forward(&input, &k_wrong_c, &[0.0], PaddingMode::Zero).is_err());
        let k = Tensor4::zeros(2, 2, 3, 3);
        assert!(conv2d_forward(&input, &k, &[0.0], PaddingMode::Zero).is_err()); // bias len
        let tiny = Tensor4::zeros(1, 1, 1, 4);
        let k1 = Tensor4::zeros(1, 1, 3, 3);
        assert!(conv2d_forward(&tiny, &k1, &[0.0], PaddingMode::Reflection).is_err());
        assert!(conv2d_forward(&tiny, &k1, &[0.0], PaddingMode::Zero).is_ok());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, 2, 2, 4, 5);
        let kernel = random_tensor(&mut rng, 3, 2, 3, 3);
        let go = Tensor4::zeros(2, 3, 4, 5);
        let g = conv2d_backward(&go, &input, &kernel, PaddingMode::Reflection).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_input_is_transposed_convolution_by_hand() {
        // 1×1×2×2 input, zero padding, kernel with a single 1 at tap (0,0):
        // out[y][x] = in[y-1][x-1], so grad_in[y][x] = go[y+1][x+1].
        let input = Tensor4::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut kernel = Tensor4::zeros(1, 1, 3, 3);
        *kernel.at_mut(0, 0, 0, 0) = 1.0;
        let go = Tensor4::new(1, 1, 2, 2, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let g = conv2d_backward(&go, &input, &kernel, PaddingMode::Zero).unwrap();
        assert_eq!(g.input.data(), &[40.0, 0.0, 0.0, 0.0]);
        // and the kernel gradient at that tap is Σ go·shifted-input
        assert_eq!(g.kernel.at(0, 0, 0, 0), 40.0 * 1.0);
    }

    /// Finite-difference check of all three gradients on a random case.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &padding in &[PaddingMode::Zero, PaddingMode::Reflection] {
            let input = random_tensor(&mut rng, 2, 2, 4, 4);
            let kernel = random_tensor(&mut rng, 2, 2, 3, 3);
            let bias: Vec<f32> = (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect();
            // scalar probe: L = Σ r ⊙ conv(...)
            let r = random_tensor(&mut rng, 2, 2, 4, 4);
            let loss = |inp: &Tensor4, ker: &Tensor4, b: &[f32]| -> f64 {
                let out = conv2d_forward(inp, ker, b, padding).unwrap();
                out.data()
                    .iter()
                    .zip(r.data())
                    .map(|(&o, &rv)| o as f64 * rv as f64)
                    .sum()
            };
            let g = conv2d_backward(&r, &input, &kernel, padding).unwrap();
            let eps = 1e-3f32;
            // relative error < 1e-3, with an absolute floor covering the
            // f32-storage rounding noise the central difference picks up
            let check = |analytic: f32, plus: f64, minus: f64, what: &str| {
                let numeric = (plus - minus) / (2.0 * eps as f64);
                let a = analytic as f64;
                let tol = 1e-3 * a.abs().max(numeric.abs()) + 1e-3;
                assert!((a - numeric).abs() <= tol, "{what}: analytic {a} vs numeric {numeric}");
            };
            for idx in 0..input.len() {
                let mut ip = input.clone();
                ip.data_mut()[idx] += eps;
                let mut im = input.clone();
                im.data_mut()[idx] -= eps;
                check(g.input.data()[idx], loss(&ip, &kernel, &bias), loss(&im, &kernel, &bias), "grad_input");
            }
            for idx in 0..kernel.len() {
                let mut kp = kernel.clone();
                kp.data_mut()[idx] += eps;
                let mut km = kernel.clone();
                km.data_mut()[idx] -= eps;
                check(g.kernel.data()[idx], loss(&input, &kp, &bias), loss(&input, &km, &bias), "grad_kernel");
            }
            for idx in 0..bias.len() {
                let mut bp = bias.clone();
                bp[idx] += eps;
                let mut bm = bias.clone();
                bm[idx] -= eps;
                check(g.bias[idx], loss(&input, &kernel, &bp), loss(&input, &kernel, &bm), "grad_bias");
            }
        }
    }
}
