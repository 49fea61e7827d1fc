//! Constant-relative-risk-aversion utilities traced through the simplex,
//! and the `r` interval implied by each Holt–Laury safe-choice count.

use serde::Serialize;

use crate::geometry::{GeometryError, NormalizedUtilityPoint};
use crate::root::{bisect, RootError};
use crate::scalar::Real;

/// Bisection bracket for the indifference equation.
pub const R_BRACKET: (f64, f64) = (-20.0, 20.0);
/// Absolute tolerance on the returned `r` bounds.
pub const R_TOLERANCE: f64 = 1e-9;

const PRIZE_MID_LOW: f64 = 16.0;
const PRIZE_MID_HIGH: f64 = 21.0;
const PRIZE_HIGH: f64 = 38.5;

fn c<F: Real>(x: f64) -> F {
    F::from(x).expect("constant representable")
}

/// `(x^a - 1) / (h^a - 1)` for `x <= h`, evaluated without overflow.
///
/// For `a > 0` the ratio is rewritten as
/// `exp(a (ln x - ln h)) * expm1(-a ln x) / expm1(-a ln h)`, for `a < 0`
/// both powers are below one and `expm1` is used directly. `a = 0` is the
/// logarithmic limit `ln x / ln h`.
fn power_ratio<F: Real>(x: F, h: F, a: F) -> F {
    let (lx, lh) = (x.ln(), h.ln());
    if a == F::zero() {
        return lx / lh;
    }
    if a > F::zero() {
        (a * (lx - lh)).exp() * ((-a * lx).exp_m1() / (-a * lh).exp_m1())
    } else {
        (a * lx).exp_m1() / (a * lh).exp_m1()
    }
}

/// Normalized CRRA utility pair for coefficient `r`, with
/// `u(x) = x^(1-r) / (1-r)` and its logarithmic limit at `r = 1`.
///
/// Evaluated in double precision and rounded once, so narrower types keep
/// the curve monotone in `r`.
pub fn crra_point<F: Real>(r: F) -> Result<NormalizedUtilityPoint<F>, GeometryError> {
    let r = r.to_f64().ok_or(GeometryError::NonFinite)?;
    if !r.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let a = 1.0 - r;
    // the lowest prize is $1, so its power term is 1 for every r
    let u1 = power_ratio(PRIZE_MID_LOW, PRIZE_HIGH, a);
    let u2 = power_ratio(PRIZE_MID_HIGH, PRIZE_HIGH, a);
    NormalizedUtilityPoint::new(c::<F>(u1), c::<F>(u2))
}

/// Safe lottery minus risky lottery expected utility at row probability
/// `p`, for a CRRA agent with coefficient `r` (normalized units).
pub fn safe_minus_risky<F: Real>(r: F, p: F) -> F {
    let pt = crra_point(r).expect("finite r stays in the simplex");
    (F::one() - p) * *pt.u1() + p * *pt.u2() - p
}

/// CRRA coefficients consistent with a given number of safe choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrraInterval<F> {
    pub safe_choices: u32,
    /// `-inf` for zero safe choices.
    pub r_lo: F,
    /// `+inf` for nine safe choices.
    pub r_hi: F,
}

impl<F: Real> CrraInterval<F> {
    /// Whether `r` lies strictly inside the interval.
    pub fn contains_strictly(&self, r: F) -> bool {
        self.r_lo < r && r < self.r_hi
    }

    /// Bounds rounded to two decimals, as shown on plots.
    pub fn labels(&self) -> (String, String) {
        (label(self.r_lo), label(self.r_hi))
    }
}

fn label<F: Real>(x: F) -> String {
    if x.is_infinite() {
        if x > F::zero() { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{:.2}", x.to_f64().unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CrraError {
    #[error("safe-choice count {0} has no CRRA interval; ten safe choices violate the switching protocol")]
    SafeCountOutOfRange(u32),
    #[error(transparent)]
    Root(#[from] RootError),
}

/// The `r` at which a CRRA agent is indifferent between the safe and the
/// risky lottery when the high prize has probability `p`.
pub fn indifference_r<F: Real>(p: F) -> Result<F, RootError> {
    bisect(
        |r| safe_minus_risky(r, p),
        c(R_BRACKET.0),
        c(R_BRACKET.1),
        c(R_TOLERANCE),
        200,
    )
}

/// Interval of CRRA coefficients implied by `s` safe choices then a switch.
pub fn crra_interval<F: Real>(s: u32) -> Result<CrraInterval<F>, CrraError> {
    if s > 9 {
        return Err(CrraError::SafeCountOutOfRange(s));
    }
    let r_lo = if s == 0 {
        F::neg_infinity()
    } else {
        indifference_r(c::<F>(s as f64 / 10.0))?
    };
    let r_hi = if s == 9 {
        F::infinity()
    } else {
        indifference_r(c::<F>((s + 1) as f64 / 10.0))?
    };
    Ok(CrraInterval {
        safe_choices: s,
        r_lo,
        r_hi,
    })
}

/// Samples of the CRRA curve on `[from, to]` with the given step.
pub fn crra_curve<F: Real>(from: F, to: F, step: F) -> Vec<(F, NormalizedUtilityPoint<F>)> {
    let mut out = Vec::new();
    if !(step > F::zero()) {
        return out;
    }
    let mut i = 0u64;
    loop {
        let r = from + step * F::from(i).expect("index representable");
        if r > to + step / c(2.0) {
            break;
        }
        if let Ok(pt) = crra_point(r) {
            out.push((r, pt));
        }
        i += 1;
    }
    out
}
