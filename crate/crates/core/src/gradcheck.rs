//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely: the relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, REL_ERR_FLOOR)`.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// The single worst coordinate found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tol, None)
}

/// Checks the gradient of a scalar function of several tensors. Every
/// coordinate of every input is perturbed.
///
/// `corrupt` builds the analytic tape with a perturbed rule for that op,
/// which must make the check fail whenever the op is on the gradient path.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    tol: f64,
    corrupt: Option<OpKind>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut tape = match corrupt {
        Some(k) => Tape::with_corrupted_rule(k),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::contract("grad_check needs a scalar-valued function"));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut worst: Option<Mismatch> = None;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        for (c, &a) in analytic[i].iter().enumerate().take(input.len()) {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel_err = relative_error(a, numeric);
            checked += 1;
            if worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                worst = Some(Mismatch {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    let max_rel_err = worst.as_ref().map_or(0.0, |w| w.rel_err);
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        checked,
        tol,
        passed: max_rel_err <= tol,
    })
}
