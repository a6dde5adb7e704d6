//! Central finite differences. Verification oracle for every gradient path;
//! kept free of any dependency on the graph so the two routes are independent.

use crate::error::{GraphError, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Central-difference gradient of `scalar_fn` at `point`:
/// (f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h per coordinate.
pub fn finite_difference_gradient<F: Scalar>(
    mut scalar_fn: impl FnMut(&Tensor<F>) -> Result<F, GraphError>,
    point: &Tensor<F>,
    step: F,
) -> Result<Tensor<F>, GraphError> {
    assert!(step > F::zero(), "finite-difference step must be positive");
    let mut x = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let fp = scalar_fn(&x)?;
        x.data_mut()[i] = orig - step;
        let fm = scalar_fn(&x)?;
        x.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(GraphError::NonFinite {
                op: "finite_difference",
                node: i,
            });
        }
        grad.data_mut()[i] = (fp - fm) / (F::of(2.0) * step);
    }
    Ok(grad)
}

/// Central difference of `f(x + t·dir)` at t=0; one directional probe instead
/// of one per coordinate. Used where exhaustive coordinates are too slow.
pub fn directional_derivative<F: Scalar>(
    mut scalar_fn: impl FnMut(&Tensor<F>) -> Result<F, GraphError>,
    point: &Tensor<F>,
    dir: &Tensor<F>,
    step: F,
) -> Result<F, GraphError> {
    assert!(step > F::zero());
    let plus = point.zip_map(dir, |x, d| x + step * d)?;
    let minus = point.zip_map(dir, |x, d| x - step * d)?;
    let fp = scalar_fn(&plus)?;
    let fm = scalar_fn(&minus)?;
    if !fp.is_finite() || !fm.is_finite() {
        return Err(GraphError::NonFinite {
            op: "finite_difference",
            node: 0,
        });
    }
    Ok((fp - fm) / (F::of(2.0) * step))
}

/// ‖a − b‖₂ / max(‖b‖₂, floor): the relative-error metric used by the
/// gradient checks.
pub fn relative_error<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let scale = b.norm_l2().as_f64().max(1e-12);
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_to_rounding() {
        // f(x) = x², x = 3, h = 1e-5 → 6.0 within 1e-9: central differences
        // are exact for quadratics up to floating-point rounding.
        let point = Tensor::<f64>::new(vec![1], vec![3.0]).unwrap();
        let g = finite_difference_gradient(
            |x| Ok(x.data()[0] * x.data()[0]),
            &point,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-9, "got {}", g.data()[0]);
    }

    #[test]
    fn linear_function_has_all_ones_gradient() {
        let point = Tensor::<f64>::new(vec![4], vec![0.3, -1.0, 2.0, 5.5]).unwrap();
        let g = finite_difference_gradient(
            |x| Ok(x.data().iter().sum()),
            &point,
            1e-5,
        )
        .unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_entropy_in_label_weights_matches_analytic() {
        // f(w) = -Σ wₖ·log softmax(z)ₖ for fixed logits z: ∂f/∂wₖ = -log pₖ.
        let logits = [0.5f64, -0.2, 1.3];
        let lse = logits.iter().map(|z| z.exp()).sum::<f64>().ln();
        let logp: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let point = Tensor::<f64>::new(vec![3], vec![0.2, 0.3, 0.5]).unwrap();
        let g = finite_difference_gradient(
            |w| {
                Ok(-w
                    .data()
                    .iter()
                    .zip(&logp)
                    .map(|(wi, lp)| wi * lp)
                    .sum::<f64>())
            },
            &point,
            1e-5,
        )
        .unwrap();
        for (gv, lp) in g.data().iter().zip(&logp) {
            assert!((gv - (-lp)).abs() < 1e-9, "{gv} vs {}", -lp);
        }
    }
}
