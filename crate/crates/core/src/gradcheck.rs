//! Central finite-difference checks of tape gradients.

use crate::error::{CgmError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so entries that are
/// zero on both sides do not divide by zero.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const REL_FLOOR: f64 = 1e-6;

/// Compare reverse-mode gradients of `build` against central differences
/// with step `eps` for every element of every input.
///
/// `build` receives a fresh tape and one parameter leaf per input and
/// must return a scalar loss.
pub fn check<F>(inputs: &[Tensor], eps: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };
    let (tape, vars, loss) = eval(inputs)?;
    let grads = tape.backward(loss)?;
    let mut report = GradReport {
        max_rel_err: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + eps;
            let up = scalar(&eval(&probe)?)?;
            probe[i].data_mut()[j] = x0 - eps;
            let down = scalar(&eval(&probe)?)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(analytic.data()[j], numeric, REL_FLOOR);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

fn scalar((tape, _, loss): &(Tape, Vec<Var>, Var)) -> Result<f64> {
    let v = tape.value(*loss).item()?;
    if !v.is_finite() {
        return Err(CgmError::NonFinite("finite-difference probe".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient_matches() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check(&[x], 1e-5, |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let cube = t.mul(sq, v[0])?;
            Ok(t.sum(cube))
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }
}
