//! Width-1 spatial padding for the 3×3 convolutions, plus its backward fold.
//!
//! Padding is materialized straight into `f64` working buffers: the
//! convolution kernels accumulate in f64, so converting once at the border
//! keeps the hot loops free of per-tap conversions.

use super::Tensor4;

/// How the single-pixel border is filled before a 3×3 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingMode {
    /// Border filled with zeros.
    Zero,
    /// No-repeat edge reflection: the pixel at −1 mirrors index 1, the pixel
    /// at `h` mirrors `h−2`. Requires the padded dimension to be ≥ 2.
    Reflection,
}

/// Source row/column for padded index `t` (0-based over `len + 2`).
/// Returns `None` for border positions under zero padding.
#[inline]
fn source_index(t: usize, len: usize, mode: PaddingMode) -> Option<usize> {
    let s = t as isize - 1;
    match mode {
        PaddingMode::Zero => {
            if s < 0 || s >= len as isize {
                None
            } else {
                Some(s as usize)
            }
        }
        PaddingMode::Reflection => Some(if s < 0 {
            (-s) as usize
        } else if s >= len as isize {
            2 * len - 2 - s as usize
        } else {
            s as usize
        }),
    }
}

/// Pad every channel of sample `n` into `out` as f64, laid out as
/// `c` consecutive `(h+2)×(w+2)` planes. `out` is resized as needed.
pub(crate) fn pad_sample_f64(t: &Tensor4, n: usize, mode: PaddingMode, out: &mut Vec<f64>) {
    let (h, w) = (t.h(), t.w());
    let (ph, pw) = (h + 2, w + 2);
    out.clear();
    out.resize(t.c() * ph * pw, 0.0);
    for c in 0..t.c() {
        let src = t.plane(n, c);
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for py in 0..ph {
            let row = &mut dst[py * pw..py * pw + pw];
            match source_index(py, h, mode) {
                None => row.fill(0.0),
                Some(sy) => {
                    let srow = &src[sy * w..sy * w + w];
                    for (px, slot) in row.iter_mut().enumerate() {
                        *slot = match source_index(px, w, mode) {
                            None => 0.0,
                            Some(sx) => srow[sx] as f64,
                        };
                    }
                }
            }
        }
    }
}

/// Backward of the padding: fold a gradient w.r.t. the padded plane
/// (`(h+2)×(w+2)`) into a gradient w.r.t. the source plane (`h×w`),
/// accumulating border contributions into their source pixels under
/// reflection and dropping them under zero padding.
pub(crate) fn fold_padded_grad(gp: &[f64], h: usize, w: usize, mode: PaddingMode, gx: &mut [f64]) {
    let pw = w + 2;
    debug_assert_eq!(gp.len(), (h + 2) * pw);
    debug_assert_eq!(gx.len(), h * w);
    for py in 0..h + 2 {
        let Some(sy) = source_index(py, h, mode) else {
            continue;
        };
        let grow = &gp[py * pw..py * pw + pw];
        let xrow = &mut gx[sy * w..sy * w + w];
        for (px, &g) in grow.iter().enumerate() {
            if let Some(sx) = source_index(px, w, mode) {
                xrow[sx] += g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pad_plane(t: &Tensor4, mode: PaddingMode) -> Vec<f64> {
        let mut buf = Vec::new();
        pad_sample_f64(t, 0, mode, &mut buf);
        buf
    }

    #[test]
    fn reflection_of_constant_is_constant() {
        let t = Tensor4::filled(1, 1, 3, 4, 2.5);
        let p = pad_plane(&t, PaddingMode::Reflection);
        assert!(p.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn zero_padding_of_zero_is_zero() {
        let t = Tensor4::zeros(1, 1, 3, 4);
        let p = pad_plane(&t, PaddingMode::Zero);
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reflection_mirrors_without_repeating_the_edge() {
        // Row [10, 20, 30] pads to [20, 10, 20, 30, 20]: index −1 ↦ 1, 3 ↦ 1.
        let t = Tensor4::new(1, 1, 1, 3, vec![10.0, 20.0, 30.0]).unwrap();
        // h = 1 < 2 is invalid for reflection along y, so only check a 2-row case.
        let t2 = Tensor4::new(1, 1, 2, 3, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]).unwrap();
        let p = pad_plane(&t2, PaddingMode::Reflection);
        let pw = 5;
        // middle row 1 of padding corresponds to source row 0
        assert_eq!(&p[pw..2 * pw], &[20.0, 10.0, 20.0, 30.0, 20.0]);
        // padded row 0 reflects source row 1
        assert_eq!(&p[0..pw], &[50.0, 40.0, 50.0, 60.0, 50.0]);
        // padded row 3 reflects source row 0
        assert_eq!(&p[3 * pw..4 * pw], &[20.0, 10.0, 20.0, 30.0, 20.0]);
        drop(t);
    }

    #[test]
    fn zero_padding_keeps_interior_and_zeroes_border() {
        let t = Tensor4::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_plane(&t, PaddingMode::Zero);
        let pw = 4;
        assert_eq!(&p[0..pw], &[0.0; 4]);
        assert_eq!(&p[pw..2 * pw], &[0.0, 1.0, 2.0, 0.0]);
        assert_eq!(&p[2 * pw..3 * pw], &[0.0, 3.0, 4.0, 0.0]);
        assert_eq!(&p[3 * pw..4 * pw], &[0.0; 4]);
    }

    #[test]
    fn fold_is_the_transpose_of_padding() {
        // For any padding P seen as a linear map, <P(x), g> == <x, fold(g)>.
        let h = 3;
        let w = 4;
        for mode in [PaddingMode::Zero, PaddingMode::Reflection] {
            let x = Tensor4::from_fn(1, 1, h, w, |_, _, y, xx| (y * w + xx + 1) as f32 * 0.37);
            let g: Vec<f64> = (0..(h + 2) * (w + 2)).map(|i| (i as f64 * 0.11).sin()).collect();
            let px = pad_plane(&x, mode);
            let lhs: f64 = px.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut folded = vec![0.0; h * w];
            fold_padded_grad(&g, h, w, mode, &mut folded);
            let rhs: f64 = x
                .data()
                .iter()
                .zip(&folded)
                .map(|(&a, &b)| a as f64 * b)
                .sum();
            assert!((lhs - rhs).abs() < 1e-12, "mode {mode:?}: {lhs} vs {rhs}");
        }
    }
}
