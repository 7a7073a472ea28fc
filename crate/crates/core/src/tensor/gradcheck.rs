use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(input, coordinate)` where the maximum was attained.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Checks `f` with respect to a single input. Returns the maximum relative
/// error over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h, None)?;
    Ok(report.max_rel_error)
}

/// Checks `f` with respect to several inputs at once. When `max_coords` is
/// set, at most that many evenly strided coordinates are probed per input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64, max_coords: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("grad_check step must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("trainable leaf").to_vec())
        .collect();
    drop(tape);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = match max_coords {
            Some(limit) if limit > 0 && n > limit => n.div_ceil(limit),
            _ => 1,
        };
        for coord in (0..n).step_by(stride) {
            let base = input.data()[coord];
            work[which].data_mut()[coord] = base + h;
            let plus = eval(&work)?;
            work[which].data_mut()[coord] = base - h;
            let minus = eval(&work)?;
            work[which].data_mut()[coord] = base;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[which][coord];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (which, coord);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
