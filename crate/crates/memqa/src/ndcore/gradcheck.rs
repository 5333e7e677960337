//! Finite-difference verification of analytic gradients.

use crate::ndcore::rng::RngStream;
use crate::ndcore::tensor::Tensor;
use crate::Result;

/// Compare analytic gradients against central differences on a sampled
/// coordinate subset.
///
/// `f` evaluates the scalar loss at a parameter point (it must be
/// deterministic — dropout off). `params` and `analytic` are aligned
/// slices. Up to `coords_per_param` coordinates of each tensor are probed,
/// chosen by `seed`. Returns the maximum over probed coordinates of
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut rng = RngStream::new(seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0_f64;
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        if n == 0 {
            continue;
        }
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            (0..coords_per_param).map(|_| rng.index(n)).collect()
        };
        for c in coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + h;
            let up = f(&work)?;
            work[pi].data_mut()[c] = orig - h;
            let down = f(&work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let exact = analytic[pi].data()[c];
            let err = (exact - numeric).abs() / (1e-8_f64).max(exact.abs() + numeric.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(θ) = θ² at θ = 3: central differences are exact for quadratics.
        let params = [Tensor::scalar(3.0)];
        let analytic = [Tensor::scalar(6.0)];
        let err = finite_diff_check(
            |p| Ok(p[0].item() * p[0].item()),
            &params,
            &analytic,
            1e-5,
            8,
            0,
        )
        .unwrap();
        assert!(err <= 1e-8, "relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        // analytic = 2g against numeric g → |2g−g|/(2g+g) = 1/3
        let params = [Tensor::scalar(3.0)];
        let analytic = [Tensor::scalar(12.0)];
        let err = finite_diff_check(
            |p| Ok(p[0].item() * p[0].item()),
            &params,
            &analytic,
            1e-5,
            8,
            0,
        )
        .unwrap();
        assert!((err - 1.0 / 3.0).abs() < 1e-6, "relative error {err}");
    }
}
