//! Central finite-difference gradient checking at 64-bit precision.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Norm-wise relative error `|a - n| / max(|a|, |n|, floor)`, or zero when
/// `|a - n|` is below the round-off level of the differences.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-7;
    const ABSOLUTE: f64 = 1e-8;
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    if diff < ABSOLUTE {
        return 0.0;
    }
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(FLOOR)
}

/// Analytic and numeric gradients of a scalar function for every input.
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradReport {
    pub fn errors(&self) -> Vec<f64> {
        self.analytic.iter().zip(&self.numeric).map(|(a, n)| relative_error(a, n)).collect()
    }

    pub fn max_error(&self) -> f64 {
        self.errors().into_iter().fold(0.0, f64::max)
    }
}

/// Compares the tape's gradient of `f` against central differences with step `eps`.
///
/// `f` must be deterministic: it is re-evaluated twice per input element.
pub fn check<G>(inputs: &[Tensor<f64>], eps: f64, f: G) -> Result<GradReport>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::shape("gradcheck", tape.value(loss).shape(), &[]));
    }
    let grads = tape.backward(loss)?;
    let analytic = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map(|g| g.to_f64()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].len());
        for e in 0..inputs[k].len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[e] = orig;
            g.push((plus - minus) / (2.0 * eps));
        }
        numeric.push(g);
    }
    Ok(GradReport { analytic, numeric })
}
