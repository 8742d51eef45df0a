use super::{Tape, Tensor, TensorError, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Magnitude below which errors are measured absolutely. Central
/// differences at step 1e-5 carry roughly 1e-11 of round-off on O(1)
/// losses, so relative error is meaningless for gradients near zero.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Relative error with a `max(|a|, |b|, RELATIVE_FLOOR)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(TensorError::NonScalar(value.shape().to_vec()));
    }
    Ok(value.item())
}

/// Checks `f` against central finite differences with respect to every
/// element of every input.
pub fn gradcheck_many<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradcheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_error = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval_scalar(&f, &work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval_scalar(&f, &work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > max_rel_error || err.is_nan() {
                max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                worst = Some((i, j));
            }
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        passed: max_rel_error <= tol,
        max_rel_error,
        worst,
        checked,
    })
}

/// Single-input convenience wrapper around [`gradcheck_many`].
pub fn gradcheck<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradcheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    gradcheck_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(shape: Vec<usize>, rng: &mut SplitMix64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares_passes_tightly() {
        let mut rng = SplitMix64::new(1);
        let x = random(vec![3, 5], &mut rng);
        let report = gradcheck(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                Ok(tape.sum(sq))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 15);
    }

    #[test]
    fn floor_only_affects_tiny_gradients() {
        assert!(relative_error(1e-10, 3e-11) < 1e-4);
        assert!((relative_error(1e-3, 1.1e-3) - 1.0 / 11.0).abs() < 1e-12);
        assert!(relative_error(2e-6, 1e-6) >= 0.5);
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        let mut rng = SplitMix64::new(2);
        let x = random(vec![4], &mut rng);
        let report = gradcheck(
            |tape, x| {
                // forward x^2, backward claims 3x
                let y = tape.custom_unary(
                    x,
                    |v| v * v,
                    Box::new(|x, g| x.iter().zip(g).map(|(x, g)| 3.0 * x * g).collect()),
                );
                Ok(tape.sum(y))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.3);
    }

    #[test]
    fn correct_custom_rule_passes() {
        let mut rng = SplitMix64::new(3);
        let x = random(vec![4], &mut rng);
        let report = gradcheck(
            |tape, x| {
                let y = tape.custom_unary(
                    x,
                    |v| v * v,
                    Box::new(|x, g| x.iter().zip(g).map(|(x, g)| 2.0 * x * g).collect()),
                );
                Ok(tape.sum(y))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
