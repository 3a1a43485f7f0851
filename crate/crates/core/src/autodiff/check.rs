use super::{Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode partials of `f` against central differences.
///
/// `f` records a scalar expression over the supplied leaves. Returns the
/// largest `|analytic - numeric| / max(1, |analytic|)` over all leaves.
pub fn finite_difference_check<F>(f: F, leaves: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|&v| tape.var(v)).collect();
    let out = f(&mut tape, &vars);
    let analytic = tape.backward(out)?;

    let eval_at = |point: &[f64], leaf: usize, offset: f64| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = point.iter().map(|&v| t.var(v)).collect();
        let o = f(&mut t, &vs);
        let value = t.value(o);
        if t.check().is_err() || !value.is_finite() {
            return Err(Error::NonFiniteProbe { leaf, offset });
        }
        Ok(value)
    };

    let mut worst = 0.0f64;
    let mut point = leaves.to_vec();
    for (i, &a) in analytic.partials.iter().enumerate() {
        let x = leaves[i];
        point[i] = x + step;
        let hi = eval_at(&point, i, step)?;
        point[i] = x - step;
        let lo = eval_at(&point, i, -step)?;
        point[i] = x;
        let numeric = (hi - lo) / (2.0 * step);
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_nearly_exact() {
        let err = finite_difference_check(|t, v| t.square(v[0]), &[1.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function() {
        let err = finite_difference_check(|t, _| t.constant(3.0), &[1.0, -2.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn log_softplus_at_one() {
        let err = finite_difference_check(
            |t, v| {
                let s = t.softplus(v[0]);
                t.ln(s)
            },
            &[1.0],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite_probe() {
        assert!(finite_difference_check(|t, v| t.square(v[0]), &[1.0], 0.0).is_err());
        // ln(x) near 0 with a step that crosses zero
        let r = finite_difference_check(|t, v| t.ln(v[0]), &[1e-6], 1e-5);
        assert!(matches!(r, Err(Error::NonFiniteProbe { leaf: 0, .. })));
    }
}
