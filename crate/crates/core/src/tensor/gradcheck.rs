//! Finite-difference gradient checking.

use super::{Binding, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against five-point
/// central differences over every parameter in `params`.
///
/// Returns the largest elementwise `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// `f` must be deterministic; two evaluations at the same point that disagree
/// yield [`Error::Unreliable`].
pub fn gradient_check_params<F>(f: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let out = f(&mut tape, &b)?;
        scalar(&tape, out)
    };

    let mut tape = Tape::new();
    let binding = params.bind(&mut tape, true);
    let loss = f(&mut tape, &binding)?;
    let base = scalar(&tape, loss)?;
    tape.backward(loss)?;
    let analytic = binding.grads(&tape, params);

    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Unreliable(format!(
            "function is not deterministic: {base} vs {again}"
        )));
    }

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (pi, grad) in analytic.iter().enumerate() {
        for (ei, &a) in grad.iter().enumerate() {
            let original = probe.tensors_mut()[pi].data()[ei];
            let mut at = |offset: f64| -> Result<f64> {
                probe.tensors_mut()[pi].data_mut()[ei] = original + offset;
                eval(&probe)
            };
            let (p2, p1, m1, m2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
            probe.tensors_mut()[pi].data_mut()[ei] = original;
            // pairing the symmetric points first keeps an input the function ignores at exactly zero
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Single-input form of [`gradient_check_params`].
pub fn gradient_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let id = store.insert("x", x.clone());
    gradient_check_params(|tape, b| f(tape, b.var(id)), &store, eps)
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}
