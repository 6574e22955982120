//! Central finite-difference gradient checks against the tape.

use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::Result;

/// Outcome of a gradient check over all coordinates of all inputs.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare tape gradients of `f` at `inputs` with central differences.
///
/// `f` builds a scalar on a fresh tape from leaf variables holding the inputs.
/// A coordinate passes when its relative error (with `floor` guarding tiny
/// gradients) is at most `tol`. `select` may skip coordinates, e.g. those near
/// a kink.
pub fn check_gradients<F>(
    inputs: &[Array2<f64>],
    h: f64,
    tol: f64,
    floor: f64,
    select: impl Fn(usize, usize) -> bool,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let grads: Vec<Array2<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(x.raw_dim())))
        .collect();

    let mut report = GradCheck { checked: 0, passed: 0, max_rel_err: 0.0 };
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        for (idx, &orig) in x.indexed_iter() {
            if !select(i, idx.0 * x.ncols() + idx.1) {
                continue;
            }
            work[i][idx] = orig + h;
            let plus = eval(&work)?;
            work[i][idx] = orig - h;
            let minus = eval(&work)?;
            work[i][idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_err(grads[i][idx], numeric, floor);
            report.checked += 1;
            if err <= tol {
                report.passed += 1;
            }
            report.max_rel_err = report.max_rel_err.max(err);
        }
    }
    Ok(report)
}
