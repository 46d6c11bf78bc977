use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Magnitude below which gradient entries are compared absolutely. Central
/// differences at `h = 1e-6` carry roughly `1e-10 · |f|` of rounding noise,
/// which would swamp a purely relative comparison of near-zero entries.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, REL_ERR_FLOOR)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst: usize,
    pub coords: usize,
    pub passed: bool,
}

/// Relative error used by [`grad_check`].
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of a scalar function `f` at `x` against
/// central differences `(f(x + h·e) − f(x − h·e)) / 2h` per coordinate.
///
/// `f` receives a fresh tape and the leaf holding its input, and returns
/// the `1 × 1` output node.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t.clone());
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    let analytic = tape.backward(out)?.get_or_zeros(&tape, v);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: 0,
        coords: x.len(),
        passed: true,
    };
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = rel_err(a, numeric);
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = i;
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]).unwrap();
        let rep = grad_check(
            |tape, x| {
                let s = tape.scale(x, 3.0);
                let r = tape.row_mean(s);
                tape.col_mean(r)
            },
            &x,
            1e-6,
            1e-8,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.max_abs_err < 1e-9);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::full(3, 2, 1.5);
        let rep = grad_check(|tape, _| Ok(tape.leaf(Tensor::scalar(4.0))), &x, 1e-6, 1e-12).unwrap();
        assert_eq!(rep.max_abs_err, 0.0);
        assert!(rep.passed);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // max routes its gradient to one entry; at an exact tie the central
        // difference splits it, so the check must flag the kink.
        let x = Tensor::full(1, 2, 1.0);
        let rep = grad_check(
            |tape, x| {
                let m = tape.row_max(x);
                tape.col_mean(m)
            },
            &x,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(!rep.passed);
    }
}
