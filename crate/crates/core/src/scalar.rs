//! Scalar abstraction shared by the lottery algebra and the geometry code.
//!
//! Probabilities and prizes are always exact rationals. Utility levels and
//! polygon coordinates are generic: `f64` for everyday use, `f32` where
//! memory matters, and [`Rational`] when a computation must be exact.
//!
//! Every *comparison* that decides a preference, a concavity check or a
//! region membership goes through [`Scalar::to_exact`], so a tie between two
//! float utilities is detected as a tie rather than lost in rounding.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, Num, One, Signed, ToPrimitive, Zero};

/// Arbitrary-precision rational number.
pub type Rational = BigRational;

/// Numeric type usable for utility values and polygon coordinates.
pub trait Scalar: Clone + Debug + PartialOrd + Num + Signed + Send + Sync + 'static {
    /// Converts an exact rational into this scalar (rounding for floats).
    fn from_rational(q: &Rational) -> Self;

    /// Exact rational value of this scalar. Floats convert without rounding;
    /// non-finite values have no rational value.
    fn to_exact(&self) -> Option<Rational>;

    fn approx_f64(&self) -> f64;
}

/// Floating-point scalar, for code that needs transcendental functions.
pub trait Real: Scalar + Float {}

impl<T: Scalar + Float> Real for T {}

macro_rules! impl_float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_rational(q: &Rational) -> Self {
                ToPrimitive::to_f64(q).unwrap_or(f64::NAN) as $t
            }

            fn to_exact(&self) -> Option<Rational> {
                Rational::from_float(*self)
            }

            fn approx_f64(&self) -> f64 {
                *self as f64
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

impl Scalar for Rational {
    fn from_rational(q: &Rational) -> Self {
        q.clone()
    }

    fn to_exact(&self) -> Option<Rational> {
        Some(self.clone())
    }

    fn approx_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// `n / d` as a rational. Panics on `d == 0`.
pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Integer percentage as a rational over 100.
pub fn percent(p: i64) -> Rational {
    ratio(p, 100)
}

/// Exact rational from a decimal float literal that is known to be a short
/// decimal (e.g. `38.5`). Goes through the shortest decimal representation
/// so `0.1` becomes `1/10`, not its binary expansion.
pub fn from_decimal(x: f64) -> Option<Rational> {
    parse_rational(&format!("{x}")).ok()
}

/// Error raised while parsing a rational from text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rational `{0}`: expected an integer, `num/den` or a decimal")]
pub struct ParseRationalError(pub String);

/// Parses `"7"`, `"-3/4"`, `"77/2"` or `"38.5"`.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let err = || ParseRationalError(s.to_string());
    let t = s.trim();
    if let Some((n, d)) = t.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err())?;
        let d: BigInt = d.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((whole, frac)) = t.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let negative = whole.starts_with('-');
        let whole_abs = whole.trim_start_matches(['-', '+']);
        let w: BigInt = if whole_abs.is_empty() {
            BigInt::zero()
        } else {
            whole_abs.parse().map_err(|_| err())?
        };
        let f: BigInt = frac.parse().map_err(|_| err())?;
        let scale = num_traits::pow(BigInt::from(10), frac.len());
        let mag = Rational::new(w * &scale + f, scale);
        return Ok(if negative { -mag } else { mag });
    }
    let n: BigInt = t.parse().map_err(|_| err())?;
    Ok(Rational::from_integer(n))
}

/// Canonical text form: integers as `"16"`, everything else as `"num/den"`.
pub fn format_rational(q: &Rational) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Serde adapters writing rationals in their canonical text form.
pub mod serde_rational {
    use super::*;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(q))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let raw = String::deserialize(d)?;
        parse_rational(&raw).map_err(D::Error::custom)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for q in v {
                seq.serialize_element(&format_rational(q))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
            let raw = Vec::<String>::deserialize(d)?;
            raw.iter()
                .map(|r| parse_rational(r).map_err(D::Error::custom))
                .collect()
        }
    }
}

/// `Σ weights[i] * values[i]` computed exactly; `None` if a value is not finite.
pub(crate) fn exact_dot<S: Scalar>(weights: &[Rational], values: &[S]) -> Option<Rational> {
    let mut acc = Rational::zero();
    for (w, v) in weights.iter().zip(values) {
        if w.is_zero() {
            continue;
        }
        acc += w * v.to_exact()?;
    }
    Some(acc)
}
