//! Bounded one-dimensional maximization (Brent: golden section with
//! parabolic interpolation).

use crate::error::{Error, Result};

const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 − √5)/2
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    pub argmax: f64,
    pub value: f64,
    pub iterations: usize,
    /// Width of the final bracket.
    pub bracket: f64,
}

/// Maximizes `f` on `[lower, upper]`, shrinking the bracket below `tol`.
///
/// `f` may return an error (for instance an infeasible coefficient); the
/// error aborts the search.
pub fn maximize_scalar<F>(mut f: F, lower: f64, upper: f64, tol: f64) -> Result<ScalarOptimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::InvalidArgument(format!("empty search interval [{lower}, {upper}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be > 0")));
    }
    // Minimize the negated objective.
    let mut g = |x: f64| -> Result<f64> {
        let v = f(x)?;
        if v.is_nan() {
            return Err(Error::NonConvergence(format!("objective is NaN at {x}")));
        }
        Ok(-v)
    };

    // Stopping rule |x − m| ≤ 2·tol1 − (b − a)/2 leaves b − a ≤ 4·tol1.
    let abs_tol = tol / 4.2;
    let rel_tol = tol * 1e-3;

    let (mut a, mut b) = (lower, upper);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);

    for iteration in 0..MAX_ITERATIONS {
        let m = 0.5 * (a + b);
        let tol1 = rel_tol * x.abs() + abs_tol;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(ScalarOptimum {
                argmax: x,
                value: -fx,
                iterations: iteration,
                bracket: b - a,
            });
        }

        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = g(u)?;

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Err(Error::NonConvergence(format!(
        "no convergence after {MAX_ITERATIONS} iterations on [{lower}, {upper}]"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum_to_tolerance() {
        let opt = maximize_scalar(|x| Ok(-(x - 0.3).powi(2) + 1.0), -1.0, 1.0, 1e-8).unwrap();
        assert!((opt.argmax - 0.3).abs() < 1e-8, "{opt:?}");
        assert!(opt.bracket < 1e-8);
        assert!((opt.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn handles_non_quadratic_objectives() {
        // max of ln(x) − x at x = 1
        let opt = maximize_scalar(|x| Ok(x.ln() - x), 0.01, 5.0, 1e-8).unwrap();
        assert!((opt.argmax - 1.0).abs() < 1e-7, "{opt:?}");
    }

    #[test]
    fn monotone_objective_ends_at_boundary() {
        let opt = maximize_scalar(|x| Ok(x), 0.0, 1.0, 1e-8).unwrap();
        assert!(1.0 - opt.argmax < 1e-7);
    }

    #[test]
    fn rejects_bad_intervals_and_propagates_errors() {
        assert!(maximize_scalar(|x| Ok(x), 1.0, 0.0, 1e-8).is_err());
        let err = maximize_scalar(|_| Err(Error::Empty("boom".into())), 0.0, 1.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }
}
