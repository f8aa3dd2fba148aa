//! Central finite-difference gradient checks.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst coordinate found by [`grad_check_many`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Checks a scalar function of one tensor. Returns the maximum over
/// coordinates of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        h,
    )?;
    Ok(report.max_rel_error)
}

/// Checks a scalar function of several tensors, perturbing every coordinate
/// of every input in turn.
pub fn grad_check_many<F>(f: F, points: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).all_finite() {
        return Err(Error::NonFiniteCheck { input: 0, coord: 0 });
    }
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor> = points.to_vec();
    for (input, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for coord in 0..points[input].numel() {
            let orig = points[input].data()[coord];
            work[input].data_mut()[coord] = orig + h;
            let plus = eval(&work)?;
            work[input].data_mut()[coord] = orig - h;
            let minus = eval(&work)?;
            work[input].data_mut()[coord] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteCheck { input, coord });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[coord];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst_input: input,
                    worst_coord: coord,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
