use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(param, element, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares backward-pass gradients of `f` against central differences.
///
/// `f` records a scalar on a fresh tape given one parameter leaf per entry of
/// `params`; it is called `1 + 2 * (number of elements)` times and must be
/// deterministic (reseed any RNG inside it). Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn check_gradients<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = ps.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(params)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], p);
        for j in 0..p.len() {
            let orig = p.data()[j];
            probe[pi].data_mut()[j] = orig + h;
            let (t1, _, o1) = eval(&probe)?;
            probe[pi].data_mut()[j] = orig - h;
            let (t2, _, o2) = eval(&probe)?;
            probe[pi].data_mut()[j] = orig;
            let numeric = (t1.value(o1).item() - t2.value(o2).item()) / (2.0 * h);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if !rel.is_finite() {
                return Err(Error::NonFinite(format!("gradient check at param {pi}[{j}]")));
            }
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, j, a, numeric));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
