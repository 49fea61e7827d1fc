//! Bracketed bisection for monotone scalar equations.

use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum RootError {
    #[error("function does not change sign on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("function value is not finite at x = {x}")]
    NotFinite { x: f64 },
    #[error("bracket did not shrink below tolerance within {0} iterations")]
    MaxIter(usize),
}

/// Finds `x` in `[lo, hi]` with `f(x) = 0`, given a sign change on the
/// bracket. Stops when the bracket is narrower than `tol` and returns its
/// midpoint.
pub fn bisect<F, G>(f: G, mut lo: F, mut hi: F, tol: F, max_iter: usize) -> Result<F, RootError>
where
    F: Float,
    G: Fn(F) -> F,
{
    let eval = |x: F| {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(RootError::NotFinite { x: x.to_f64().unwrap_or(f64::NAN) })
        }
    };
    let mut f_lo = eval(lo)?;
    let f_hi = eval(hi)?;
    if f_lo == F::zero() {
        return Ok(lo);
    }
    if f_hi == F::zero() {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(RootError::NoSignChange {
            lo: lo.to_f64().unwrap_or(f64::NAN),
            hi: hi.to_f64().unwrap_or(f64::NAN),
            f_lo: f_lo.to_f64().unwrap_or(f64::NAN),
            f_hi: f_hi.to_f64().unwrap_or(f64::NAN),
        });
    }
    let two = F::one() + F::one();
    for _ in 0..max_iter {
        if hi - lo <= tol {
            return Ok((lo + hi) / two);
        }
        let mid = lo + (hi - lo) / two;
        if mid <= lo || mid >= hi {
            // bracket cannot be split further in this precision
            return Ok(mid);
        }
        let f_mid = eval(mid)?;
        if f_mid == F::zero() {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(RootError::MaxIter(max_iter))
}
