//! Central finite-difference verification of analytic gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Floor for the relative-error denominator, so comparisons stay meaningful
/// when both gradients vanish.
const DENOM_FLOOR: f64 = 1e-8;

/// Compare analytic gradients against central finite differences.
///
/// `f` rebuilds the scalar objective on a fresh tape from bound parameter
/// vars; the same closure supplies both the analytic path (one backward
/// pass at the base point) and the numeric path (two forward evaluations
/// per coordinate). Returns the worst relative error over all coordinates,
/// with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if !tape.value(out).is_scalar() {
            return Err(Error::contract(
                "finite_diff_check expects a scalar objective",
            ));
        }
        Ok(tape.value(out).item())
    };

    // Determinism guard: two base evaluations must agree bitwise.
    let base_a = eval(params)?;
    let base_b = eval(params)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::contract(format!(
            "objective is not deterministic: {base_a} vs {base_b}"
        )));
    }

    // Analytic gradients at the base point.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let mut worst = 0.0f64;
    let mut scratch: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for k in 0..param.numel() {
            let orig = param.data()[k];
            scratch[pi].data_mut()[k] = orig + eps;
            let plus = eval(&scratch)?;
            scratch[pi].data_mut()[k] = orig - eps;
            let minus = eval(&scratch)?;
            scratch[pi].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[k];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
