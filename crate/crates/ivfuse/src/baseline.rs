//! Classical two-scale decomposition used as a comparison baseline: an
//! optimization-based background extractor (quadratic smoothing solved with
//! conjugate gradient), a box-filter variant, and a simple fuse-and-recombine
//! pipeline (averaged backgrounds, max-absolute detail selection).

use crate::error::{Error, Result};
use crate::image::FloatImage;

/// Iteration cap for the conjugate-gradient solver.
pub const CG_MAX_ITERATIONS: usize = 20_000;
/// Relative residual target (‖r‖ ≤ tol · max(1, ‖rhs‖)).
pub const CG_TOLERANCE: f64 = 1e-8;

/// Backgrounds are snapped onto this dyadic grid so that `input − background`
/// is exactly representable for 8-bit-derived pixel values, making
/// `background + detail` reproduce the input bit-for-bit. The snap moves the
/// solution by at most 2⁻⁴¹ ≈ 5e-13, far below the solver tolerance.
const LATTICE_SCALE: f64 = (1u64 << 40) as f64;

fn snap(v: f64) -> f64 {
    (v * LATTICE_SCALE).round() / LATTICE_SCALE
}

/// Background plus residual detail; `background + detail == original` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalDecomposition {
    pub background: FloatImage,
    pub detail: FloatImage,
    pub lambda: f64,
}

/// out = (I + λ(GxᵀGx + GyᵀGy)) p with g = [−1, 1] forward differences over
/// the valid region. Symmetric positive definite for λ ≥ 0.
fn apply_system(p: &[f64], h: usize, w: usize, lambda: f64, out: &mut [f64]) {
    out.copy_from_slice(p);
    for y in 0..h {
        let row = y * w;
        for x in 0..w - 1 {
            let d = lambda * (p[row + x + 1] - p[row + x]);
            out[row + x] -= d;
            out[row + x + 1] += d;
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let d = lambda * (p[(y + 1) * w + x] - p[y * w + x]);
            out[y * w + x] -= d;
            out[(y + 1) * w + x] += d;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smooth background as the exact minimizer of
/// ‖I − B‖² + λ(‖gx∗B‖² + ‖gy∗B‖²), solved by conjugate gradient.
pub fn background_optimize(img: &FloatImage, lambda: f64) -> Result<FloatImage> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing weight must be finite and non-negative, got {lambda}"
        )));
    }
    let (h, w) = (img.h(), img.w());
    let rhs = img.data();
    let n = rhs.len();
    let tol = CG_TOLERANCE * dot(rhs, rhs).sqrt().max(1.0);

    let mut x = vec![0.0f64; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0f64; n];
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= tol {
        return FloatImage::new(h, w, x);
    }
    for _ in 0..CG_MAX_ITERATIONS {
        apply_system(&p, h, w, lambda, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        for i in 0..n {
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= tol {
            return FloatImage::new(h, w, x.into_iter().map(snap).collect());
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Numeric(format!(
        "conjugate gradient stalled at residual {:e} (target {:e}) after {} iterations",
        rr.sqrt(),
        tol,
        CG_MAX_ITERATIONS
    )))
}

/// Mean filter over a (2·radius+1)² window with replicate-edge padding.
pub fn background_boxfilter(img: &FloatImage, radius: usize) -> Result<FloatImage> {
    if radius == 0 {
        return Err(Error::InvalidArgument(
            "box filter radius must be at least 1".into(),
        ));
    }
    let (h, w) = (img.h(), img.w());
    let d = img.data();
    let r = radius as i64;
    let count = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = vec![0.0f64; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut sum = 0.0;
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, h as i64 - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w as i64 - 1) as usize;
                    sum += d[yy * w + xx];
                }
            }
            out[y as usize * w + x as usize] = sum / count;
        }
    }
    FloatImage::new(h, w, out)
}

/// Optimization-based split; the detail is the residual `img − background`.
pub fn decompose_optimize(img: &FloatImage, lambda: f64) -> Result<ClassicalDecomposition> {
    let background = background_optimize(img, lambda)?;
    let detail: Vec<f64> = img
        .data()
        .iter()
        .zip(background.data())
        .map(|(&i, &b)| i - b)
        .collect();
    Ok(ClassicalDecomposition {
        detail: FloatImage::new(img.h(), img.w(), detail)?,
        background,
        lambda,
    })
}

/// Per-pixel max-absolute selection (the detail fusion rule). Ties keep the
/// first input's value.
pub fn max_abs_fuse(first: &FloatImage, second: &FloatImage) -> Result<FloatImage> {
    check_same_size(first, second, "max_abs_fuse")?;
    let data = first
        .data()
        .iter()
        .zip(second.data())
        .map(|(&a, &b)| if a.abs() >= b.abs() { a } else { b })
        .collect();
    FloatImage::new(first.h(), first.w(), data)
}

fn check_same_size(a: &FloatImage, b: &FloatImage, context: &'static str) -> Result<()> {
    if a.h() != b.h() || a.w() != b.w() {
        return Err(Error::ShapeMismatch {
            context,
            lhs: format!("{}x{}", a.h(), a.w()),
            rhs: format!("{}x{}", b.h(), b.w()),
        });
    }
    Ok(())
}

/// How `classical_fuse` splits each input into background and detail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassicalMethod {
    Optimize { lambda: f64 },
    BoxFilter { radius: usize },
}

/// Two-scale fusion: backgrounds averaged, details max-absolute-selected,
/// recombined and clamped to [0, 255].
pub fn classical_fuse(
    ir: &FloatImage,
    vis: &FloatImage,
    method: ClassicalMethod,
) -> Result<FloatImage> {
    check_same_size(ir, vis, "classical_fuse")?;
    let (b_ir, b_vis) = match method {
        ClassicalMethod::Optimize { lambda } => (
            background_optimize(ir, lambda)?,
            background_optimize(vis, lambda)?,
        ),
        ClassicalMethod::BoxFilter { radius } => (
            background_boxfilter(ir, radius)?,
            background_boxfilter(vis, radius)?,
        ),
    };
    let n = ir.data().len();
    let mut out = vec![0.0f64; n];
    for i in 0..n {
        let d_ir = ir.data()[i] - b_ir.data()[i];
        let d_vis = vis.data()[i] - b_vis.data()[i];
        let detail = if d_ir.abs() >= d_vis.abs() { d_ir } else { d_vis };
        let background = (b_ir.data()[i] + b_vis.data()[i]) / 2.0;
        out[i] = (background + detail).clamp(0.0, 255.0);
    }
    FloatImage::new(ir.h(), ir.w(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 8-bit-derived image: integer values in [0,255].
    fn random_u8_image(seed: u64, h: usize, w: usize) -> FloatImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FloatImage::new(h, w, (0..h * w).map(|_| rng.gen_range(0u32..=255) as f64).collect())
            .unwrap()
    }

    fn gradient_energy(img: &FloatImage) -> f64 {
        let (h, w) = (img.h(), img.w());
        let d = img.data();
        let mut e = 0.0;
        for y in 0..h {
            for x in 0..w - 1 {
                let g = d[y * w + x + 1] - d[y * w + x];
                e += g * g;
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                let g = d[(y + 1) * w + x] - d[y * w + x];
                e += g * g;
            }
        }
        e
    }

    #[test]
    fn zero_weight_returns_the_input_exactly() {
        let img = random_u8_image(1, 6, 5);
        let b = background_optimize(&img, 0.0).unwrap();
        assert_eq!(b.data(), img.data());
    }

    #[test]
    fn constant_image_is_its_own_background_for_any_weight() {
        let img = FloatImage::new(4, 4, vec![17.0; 16]).unwrap();
        for lambda in [0.5, 5.0, 500.0] {
            let b = background_optimize(&img, lambda).unwrap();
            assert_eq!(b.data(), img.data(), "lambda {lambda}");
        }
    }

    #[test]
    fn matches_a_dense_direct_solve_on_a_4x4_image() {
        let img = random_u8_image(2, 4, 4);
        let lambda = 5.0;
        let got = background_optimize(&img, lambda).unwrap();

        // Assemble the 16×16 system matrix explicitly from the difference
        // operators and solve by Gaussian elimination with partial pivoting.
        let (h, w) = (4usize, 4usize);
        let n = h * w;
        let mut gx = vec![vec![0.0f64; n]; h * (w - 1)];
        for y in 0..h {
            for x in 0..w - 1 {
                gx[y * (w - 1) + x][y * w + x] = -1.0;
                gx[y * (w - 1) + x][y * w + x + 1] = 1.0;
            }
        }
        let mut gy = vec![vec![0.0f64; n]; (h - 1) * w];
        for y in 0..h - 1 {
            for x in 0..w {
                gy[y * w + x][y * w + x] = -1.0;
                gy[y * w + x][(y + 1) * w + x] = 1.0;
            }
        }
        let mut a = vec![vec![0.0f64; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for g in gx.iter().chain(gy.iter()) {
            for i in 0..n {
                for j in 0..n {
                    a[i][j] += lambda * g[i] * g[j];
                }
            }
        }
        let mut rhs = img.data().to_vec();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            rhs.swap(col, pivot);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut expected = vec![0.0f64; n];
        for row in (0..n).rev() {
            let mut v = rhs[row];
            for k in row + 1..n {
                v -= a[row][k] * expected[k];
            }
            expected[row] = v / a[row][row];
        }

        for (g, e) in got.data().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-6, "{g} vs {e}");
        }
    }

    #[test]
    fn background_plus_detail_reproduces_the_input_bit_for_bit() {
        for (seed, h, w) in [(3, 8, 8), (4, 7, 9), (5, 16, 5)] {
            let img = random_u8_image(seed, h, w);
            let d = decompose_optimize(&img, 5.0).unwrap();
            for i in 0..img.data().len() {
                let back = d.background.data()[i] + d.detail.data()[i];
                assert_eq!(back, img.data()[i], "pixel {i}");
            }
        }
    }

    #[test]
    fn smoothing_reduces_gradient_energy() {
        let img = random_u8_image(6, 10, 10);
        for lambda in [0.5, 5.0, 50.0] {
            let b = background_optimize(&img, lambda).unwrap();
            assert!(gradient_energy(&b) < gradient_energy(&img), "lambda {lambda}");
        }
    }

    #[test]
    fn boxfilter_hand_cases_and_brute_force_oracle() {
        let c = FloatImage::new(3, 3, vec![7.0; 9]).unwrap();
        assert_eq!(background_boxfilter(&c, 1).unwrap().data(), c.data());

        let img = FloatImage::new(3, 3, (0..9).map(|i| i as f64).collect()).unwrap();
        let b = background_boxfilter(&img, 1).unwrap();
        assert_eq!(b.data()[4], 4.0); // center: mean of 0..=8

        let img = random_u8_image(7, 8, 8);
        let got = background_boxfilter(&img, 2).unwrap();
        for y in 0..8i64 {
            for x in 0..8i64 {
                let mut sum = 0.0;
                for dy in -2..=2i64 {
                    for dx in -2..=2i64 {
                        let yy = (y + dy).clamp(0, 7) as usize;
                        let xx = (x + dx).clamp(0, 7) as usize;
                        sum += img.data()[yy * 8 + xx];
                    }
                }
                assert_eq!(got.data()[(y * 8 + x) as usize], sum / 25.0);
            }
        }
        assert!(background_boxfilter(&img, 0).is_err());
    }

    #[test]
    fn fusing_an_image_with_itself_returns_it() {
        let img = random_u8_image(8, 8, 8);
        let fused = classical_fuse(&img, &img, ClassicalMethod::Optimize { lambda: 5.0 }).unwrap();
        assert_eq!(fused.data(), img.data());
        let fused = classical_fuse(&img, &img, ClassicalMethod::BoxFilter { radius: 1 }).unwrap();
        for (f, i) in fused.data().iter().zip(img.data()) {
            assert!((f - i).abs() < 1e-9);
        }
    }

    #[test]
    fn detail_selection_is_max_absolute_with_first_input_ties() {
        let d = FloatImage::new(2, 2, vec![3.0, -4.0, 0.0, 2.0]).unwrap();
        let neg = FloatImage::new(2, 2, vec![-3.0, 4.0, 0.0, -2.0]).unwrap();
        let fused = max_abs_fuse(&d, &neg).unwrap();
        // equal magnitudes everywhere → first input wins
        assert_eq!(fused.data(), d.data());
        let bigger = FloatImage::new(2, 2, vec![-5.0, 1.0, 1.0, -2.5]).unwrap();
        let fused = max_abs_fuse(&d, &bigger).unwrap();
        assert_eq!(fused.data(), &[-5.0, -4.0, 1.0, -2.5]);
    }

    #[test]
    fn full_pipeline_matches_a_composition_of_the_primitives() {
        let ir = random_u8_image(9, 16, 16);
        let vis = random_u8_image(10, 16, 16);
        let got = classical_fuse(&ir, &vis, ClassicalMethod::Optimize { lambda: 5.0 }).unwrap();

        let di = decompose_optimize(&ir, 5.0).unwrap();
        let dv = decompose_optimize(&vis, 5.0).unwrap();
        let detail = max_abs_fuse(&di.detail, &dv.detail).unwrap();
        for i in 0..256 {
            let expected = ((di.background.data()[i] + dv.background.data()[i]) / 2.0
                + detail.data()[i])
                .clamp(0.0, 255.0);
            assert_eq!(got.data()[i], expected, "pixel {i}");
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = random_u8_image(11, 8, 8);
        let b = random_u8_image(12, 8, 9);
        assert!(classical_fuse(&a, &b, ClassicalMethod::BoxFilter { radius: 1 }).is_err());
        assert!(max_abs_fuse(&a, &b).is_err());
    }

    #[test]
    fn negative_or_non_finite_weight_is_rejected() {
        let img = random_u8_image(13, 4, 4);
        assert!(background_optimize(&img, -1.0).is_err());
        assert!(background_optimize(&img, f64::NAN).is_err());
    }
}
