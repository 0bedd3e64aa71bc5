//! Central finite-difference verification of the reverse sweep.

use rayon::prelude::*;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Maximum relative error over all checked coordinates, with
    /// denominator `max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Input index and flat coordinate where the maximum occurred.
    pub worst: Option<WorstCoord>,
}

#[derive(Debug, Clone, Copy)]
pub struct WorstCoord {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the reverse-sweep gradient of a tracked scalar function
/// against central differences, coordinate by coordinate.
///
/// `f` receives a fresh tape and one id per input tensor and must return a
/// scalar. All provided inputs are treated as differentiable; anything
/// held constant belongs in the closure's captures. Non-finite values on
/// any evaluation are reported as an error naming the offending
/// coordinate.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], epsilon: T) -> Result<GradCheck>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[TensorId]) -> Result<TensorId> + Sync,
{
    if epsilon <= T::zero() {
        return Err(Error::arg("grad_check epsilon must be > 0"));
    }
    for (i, t) in inputs.iter().enumerate() {
        if let Some(c) = t.first_non_finite() {
            return Err(Error::NonFinite(format!("input {i} coordinate {c}")));
        }
    }

    // Analytic gradients from one tracked pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &ids)?;
    if let Some((node, coord)) = tape.first_non_finite() {
        return Err(Error::NonFinite(format!(
            "forward produced a non-finite value at node {node:?} coordinate {coord}"
        )));
    }
    if tape.value(loss).numel() != 1 {
        return Err(Error::arg(format!(
            "grad_check function must return a scalar, got shape {:?}",
            tape.shape(loss)
        )));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.wrt_or_zeros(id, t.shape()))
        .collect();
    for (i, g) in analytic.iter().enumerate() {
        if let Some(c) = g.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "analytic gradient of input {i} at coordinate {c}"
            )));
        }
    }

    // One central difference per coordinate, evaluated untracked.
    let eval = |perturbed: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = perturbed
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.value(out).item())
    };
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |c| (i, c)))
        .collect();
    let results: Vec<Result<(f64, WorstCoord)>> = coords
        .par_iter()
        .map(|&(i, c)| {
            let base = inputs[i].data()[c];
            let plus = eval(&replace_coord(inputs, i, c, base + epsilon))?;
            let minus = eval(&replace_coord(inputs, i, c, base - epsilon))?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "finite-difference probe of input {i} coordinate {c}"
                )));
            }
            let numeric = (plus - minus).to_f64_lit() / (2.0 * epsilon.to_f64_lit());
            let a = analytic[i].data()[c].to_f64_lit();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            Ok((
                rel,
                WorstCoord {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                },
            ))
        })
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
    };
    for r in results {
        let (rel, at) = r?;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some(at);
        }
    }
    Ok(report)
}

fn replace_coord<T: Scalar>(
    inputs: &[Tensor<T>],
    input: usize,
    coord: usize,
    value: T,
) -> Vec<Tensor<T>> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == input {
                let mut data = t.to_vec();
                data[coord] = value;
                Tensor::from_vec(t.shape(), data).unwrap()
            } else {
                t.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_vec(&[4], vec![0.3f64, -1.2, 2.0, 0.7]).unwrap();
        let check = grad_check(
            |tape, ids| Ok(tape.sum(ids[0])),
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-9, "{}", check.max_rel_error);
    }

    #[test]
    fn quadratic_loss_matches() {
        // loss = sum(x .* x)  =>  grad = 2x
        let x = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let id = tape.leaf(x.clone(), true);
        let sq = tape.mul(id, id).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(id).unwrap();
        assert_eq!(g.data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let x = Tensor::from_vec(&[2], vec![1.0f64, 2.0]).unwrap();
        let err = grad_check(|tape, ids| tape.mul(ids[0], ids[0]), &[x], 1e-4);
        assert!(err.is_err());
    }

    #[test]
    fn injected_bug_is_caught() {
        let x = Tensor::from_vec(&[3], vec![0.4f64, -0.9, 1.3]).unwrap();
        let check = grad_check(
            |tape, ids| {
                let y = tape.bugged_scale(ids[0]);
                Ok(tape.sum(y))
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(check.max_rel_error > 1e-2, "{}", check.max_rel_error);
    }
}
