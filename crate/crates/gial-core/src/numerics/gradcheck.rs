//! Central finite-difference oracle for analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, TensorId};

/// Default perturbation used by [`grad_check`].
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of a gradient check: the worst coordinate and its error.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences with perturbation `step`.
///
/// `build` receives a fresh tape with the supplied parameters already bound
/// and must return a 1x1 output tensor. The reported error for a coordinate
/// is |analytic - numeric| / max(1, |analytic|, |numeric|); the maximum over
/// all coordinates is returned.
pub fn grad_check_with_step<F>(build: F, params: &[Matrix], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    for (i, p) in params.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::contract(format!(
                "grad check: parameter {i} has non-finite entries"
            )));
        }
    }

    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params.iter().map(|p| tape.param(p)).collect();
    let out = build(&mut tape, &ids)?;
    if tape.tensor(out).shape() != (1, 1) {
        let (r, c) = tape.tensor(out).shape();
        return Err(Error::contract(format!(
            "grad check: function output must be scalar, got {r}x{c}"
        )));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("params require grad").to_vec())
        .collect();

    let eval = |perturbed: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = perturbed.iter().map(|p| tape.constant(p)).collect();
        let out = build(&mut tape, &ids)?;
        Ok(tape.scalar(out))
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for pi in 0..params.len() {
        for (ci, &a) in analytic[pi].clone().iter().enumerate() {
            let original = work[pi].data()[ci];
            work[pi].data_mut()[ci] = original + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = original - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error {
                report = GradCheck {
                    max_rel_error: rel,
                    worst_param: pi,
                    worst_coord: ci,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

/// [`grad_check_with_step`] at the default perturbation of 1e-5.
pub fn grad_check<F>(build: F, params: &[Matrix]) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    grad_check_with_step(build, params, DEFAULT_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function_matches() {
        // f(x) = x^2 at x = 3: analytic gradient 6.
        let report = grad_check(
            |tape, ids| {
                let sq = tape.mul_elem(ids[0], ids[0])?;
                Ok(tape.sum(sq))
            },
            &[Matrix::scalar(3.0)],
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "error {}",
            report.max_rel_error
        );
        assert!((report.analytic - 6.0).abs() < 1e-9 || report.max_rel_error < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let report = grad_check(
            |tape, _ids| Ok(tape.constant_scalar(42.0)),
            &[Matrix::row(&[1.0, 2.0])],
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let err = grad_check(|_tape, ids| Ok(ids[0]), &[Matrix::row(&[1.0, 2.0])]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        use rand::SeedableRng;
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::uniform(3, 3, -1.0, 1.0, &mut rng);
            let b = Matrix::uniform(3, 3, -1.0, 1.0, &mut rng);
            let report = grad_check(
                |tape, ids| {
                    let prod = tape.matmul(ids[0], ids[1])?;
                    tape.mean(prod)
                },
                &[a, b],
            )
            .unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "seed {seed}: error {}",
                report.max_rel_error
            );
        }
    }
}
