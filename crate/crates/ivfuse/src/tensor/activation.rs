//! Element-wise activations: PReLU (learned shared slope), tanh, sigmoid.

use super::Tensor4;
use crate::error::{Error, Result};

/// Which nonlinearity a layer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    /// `x ↦ x` for `x ≥ 0`, `slope·x` otherwise; the slope is a single
    /// learned scalar shared across the layer's channels.
    PReLU,
    Tanh,
    Sigmoid,
}

fn require_slope(kind: ActKind, slope: Option<f32>) -> Result<f64> {
    match (kind, slope) {
        (ActKind::PReLU, Some(s)) => Ok(s as f64),
        (ActKind::PReLU, None) => Err(Error::InvalidArgument(
            "PReLU needs a slope parameter".into(),
        )),
        _ => Ok(0.0),
    }
}

/// Largest f32 strictly below 1. tanh and sigmoid round to exactly ±1.0f32
/// for |x| ≳ 9 / 17; clamping one ulp inside keeps the advertised open
/// ranges (−1,1) and (0,1) true for every input.
const MAX_BELOW_ONE: f32 = f32::from_bits(0x3F7F_FFFF);

/// Apply the activation element-wise.
pub fn activation_forward(input: &Tensor4, kind: ActKind, slope: Option<f32>) -> Result<Tensor4> {
    let s = require_slope(kind, slope)?;
    input.ensure_finite("activation_forward input")?;
    Ok(match kind {
        ActKind::PReLU => input.map(|x| if x >= 0.0 { x } else { (s * x as f64) as f32 }),
        ActKind::Tanh => input.map(|x| {
            ((x as f64).tanh() as f32).clamp(-MAX_BELOW_ONE, MAX_BELOW_ONE)
        }),
        ActKind::Sigmoid => input.map(|x| {
            ((1.0 / (1.0 + (-x as f64).exp())) as f32).clamp(f32::MIN_POSITIVE, MAX_BELOW_ONE)
        }),
    })
}

/// Backward pass. `input` is the activation's input, `output` its forward
/// result (tanh/sigmoid differentiate most cheaply through their outputs).
/// Returns the input gradient and, for PReLU, the slope gradient.
pub fn activation_backward(
    grad_out: &Tensor4,
    kind: ActKind,
    slope: Option<f32>,
    input: &Tensor4,
    output: &Tensor4,
) -> Result<(Tensor4, Option<f32>)> {
    let s = require_slope(kind, slope)?;
    grad_out.ensure_same_shape(input, "activation_backward grad_out vs input")?;
    grad_out.ensure_same_shape(output, "activation_backward grad_out vs output")?;
    match kind {
        ActKind::PReLU => {
            let mut grad_slope = 0.0f64;
            let (n, c, h, w) = grad_out.shape();
            let mut gi = Tensor4::zeros(n, c, h, w);
            for ((g, &x), &go) in gi
                .data_mut()
                .iter_mut()
                .zip(input.data())
                .zip(grad_out.data())
            {
                if x >= 0.0 {
                    *g = go;
                } else {
                    grad_slope += go as f64 * x as f64;
                    *g = (go as f64 * s) as f32;
                }
            }
            Ok((gi, Some(grad_slope as f32)))
        }
        ActKind::Tanh => {
            let gi = grad_out.zip_map(output, "tanh backward", |go, y| {
                (go as f64 * (1.0 - y as f64 * y as f64)) as f32
            })?;
            Ok((gi, None))
        }
        ActKind::Sigmoid => {
            let gi = grad_out.zip_map(output, "sigmoid backward", |go, y| {
                (go as f64 * y as f64 * (1.0 - y as f64)) as f32
            })?;
            Ok((gi, None))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn definitional_values() {
        let x = Tensor4::new(1, 1, 1, 4, vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        let p = activation_forward(&x, ActKind::PReLU, Some(0.25)).unwrap();
        assert_eq!(p.data(), &[-0.5, -0.125, 0.0, 3.0]);
        let t = activation_forward(&x, ActKind::Tanh, None).unwrap();
        assert_eq!(t.at(0, 0, 0, 2), 0.0);
        let sg = activation_forward(&x, ActKind::Sigmoid, None).unwrap();
        assert_eq!(sg.at(0, 0, 0, 2), 0.5);
        assert!(activation_forward(&x, ActKind::PReLU, None).is_err());
    }

    #[test]
    fn prelu_slope_gradient_by_hand() {
        // input −2, grad_out 1 → slope gradient contribution −2
        let x = Tensor4::new(1, 1, 1, 1, vec![-2.0]).unwrap();
        let y = activation_forward(&x, ActKind::PReLU, Some(0.25)).unwrap();
        let go = Tensor4::filled(1, 1, 1, 1, 1.0);
        let (gi, gs) = activation_backward(&go, ActKind::PReLU, Some(0.25), &x, &y).unwrap();
        assert_eq!(gs, Some(-2.0));
        assert_eq!(gi.data(), &[0.25]);
    }

    #[test]
    fn ranges_stay_strictly_open_even_in_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = Tensor4::from_fn(1, 2, 8, 8, |_, _, _, _| rng.gen_range(-10.0..10.0));
        x.data_mut()[0] = 500.0;
        x.data_mut()[1] = -500.0;
        let t = activation_forward(&x, ActKind::Tanh, None).unwrap();
        assert!(t.data().iter().all(|&v| v > -1.0 && v < 1.0));
        let s = activation_forward(&x, ActKind::Sigmoid, None).unwrap();
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for kind in [ActKind::PReLU, ActKind::Tanh, ActKind::Sigmoid] {
            let slope = if kind == ActKind::PReLU { Some(0.25f32) } else { None };
            let x = Tensor4::from_fn(2, 2, 3, 3, |_, _, _, _| rng.gen_range(-2.0..2.0f32));
            let r = Tensor4::from_fn(2, 2, 3, 3, |_, _, _, _| rng.gen_range(-1.0..1.0f32));
            let loss = |xx: &Tensor4, sl: Option<f32>| -> f64 {
                let out = activation_forward(xx, kind, sl).unwrap();
                out.data()
                    .iter()
                    .zip(r.data())
                    .map(|(&o, &rv)| o as f64 * rv as f64)
                    .sum()
            };
            let y = activation_forward(&x, kind, slope).unwrap();
            let (gi, gs) = activation_backward(&r, kind, slope, &x, &y).unwrap();
            let eps = 1e-3f32;
            for idx in 0..x.len() {
                // PReLU is non-differentiable at 0; keep probes away from it.
                if kind == ActKind::PReLU && x.data()[idx].abs() < 2.0 * eps {
                    continue;
                }
                let mut xp = x.clone();
                xp.data_mut()[idx] += eps;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= eps;
                let numeric = (loss(&xp, slope) - loss(&xm, slope)) / (2.0 * eps as f64);
                let analytic = gi.data()[idx] as f64;
                let tol = 1e-3 * analytic.abs().max(numeric.abs()) + 1e-3;
                assert!(
                    (analytic - numeric).abs() <= tol,
                    "{kind:?} grad_input[{idx}]: {analytic} vs {numeric}"
                );
            }
            if let Some(gs) = gs {
                let numeric = (loss(&x, Some(0.25 + eps)) - loss(&x, Some(0.25 - eps))) / (2.0 * eps as f64);
                let tol = 1e-3 * (gs.abs() as f64).max(numeric.abs()) + 1e-3;
                assert!((gs as f64 - numeric).abs() <= tol, "slope grad");
            }
        }
    }
}
