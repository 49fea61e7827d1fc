//! Exact lottery algebra and the mean-preserving-spread construction.
//!
//! Prize positions are referred to by 1-based rank `k` in the public API
//! (`k = 2` is the second-lowest prize), so that "interior" means
//! `1 < k < K`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::scalar::{exact_dot, format_rational, percent, serde_rational, Rational, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LotteryError {
    #[error("a prize vector needs at least two prizes, got {0}")]
    TooFewPrizes(usize),
    #[error("prizes must be strictly ascending (prize {index} is not above prize {prev})", prev = .index - 1)]
    NotAscending { index: usize },
    #[error("{prizes} prizes but {probs} probabilities")]
    LengthMismatch { prizes: usize, probs: usize },
    #[error("probability of prize {index} is negative")]
    NegativeProbability { index: usize },
    #[error("probabilities sum to {0}, not 1")]
    BadTotal(String),
    #[error("prize rank {k} is not interior (1 < k < {len})")]
    NotInterior { k: usize, len: usize },
    #[error("prize rank {k} carries no probability; the spread is undefined")]
    EmptyInterior { k: usize },
    #[error("utility table has {found} entries for {expected} prizes")]
    UtilityLength { expected: usize, found: usize },
    #[error("utility decreases between prize {index} and prize {next}", next = .index + 1)]
    DecreasingUtility { index: usize },
    #[error("utility value at prize {index} is not a finite number")]
    NonFiniteUtility { index: usize },
    #[error("lotteries are defined over different prize vectors")]
    PrizeMismatch,
    #[error("lottery has no interior prize with positive probability; the concavity test is vacuous")]
    EmptyFamily,
    #[error("spread at rank {k} does not preserve the mean or leaves mass at rank {k}")]
    NotMeanPreserving { k: usize },
    #[error("mixing weight must lie in [0, 1]")]
    BadMixWeight,
}

pub type Result<T, E = LotteryError> = std::result::Result<T, E>;

/// Strictly ascending money prizes, at least two of them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PrizeRepr", into = "PrizeRepr")]
pub struct PrizeVector(Vec<Rational>);

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct PrizeRepr(#[serde(with = "serde_rational::vec")] Vec<Rational>);

impl TryFrom<PrizeRepr> for PrizeVector {
    type Error = LotteryError;
    fn try_from(r: PrizeRepr) -> Result<Self> {
        PrizeVector::new(r.0)
    }
}

impl From<PrizeVector> for PrizeRepr {
    fn from(p: PrizeVector) -> Self {
        PrizeRepr(p.0)
    }
}

impl PrizeVector {
    pub fn new(prizes: Vec<Rational>) -> Result<Self> {
        if prizes.len() < 2 {
            return Err(LotteryError::TooFewPrizes(prizes.len()));
        }
        if let Some(i) = (1..prizes.len()).find(|&i| prizes[i] <= prizes[i - 1]) {
            return Err(LotteryError::NotAscending { index: i + 1 });
        }
        Ok(PrizeVector(prizes))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[Rational] {
        &self.0
    }

    /// Prize at 1-based rank `k`.
    pub fn rank(&self, k: usize) -> &Rational {
        &self.0[k - 1]
    }

    /// Interior ranks `2..K`, 1-based.
    pub fn interior_ranks(&self) -> std::ops::Range<usize> {
        2..self.len()
    }
}

/// A discrete lottery: a prize vector with exact probabilities summing to one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LotteryRepr", into = "LotteryRepr")]
pub struct Lottery {
    prizes: PrizeVector,
    probs: Vec<Rational>,
}

/// Wire form: `{"prizes":["1","16","21","77/2"],"probs":["21/100",...]}`.
#[derive(Serialize, Deserialize)]
struct LotteryRepr {
    #[serde(with = "serde_rational::vec")]
    prizes: Vec<Rational>,
    #[serde(with = "serde_rational::vec")]
    probs: Vec<Rational>,
}

impl TryFrom<LotteryRepr> for Lottery {
    type Error = LotteryError;
    fn try_from(r: LotteryRepr) -> Result<Self> {
        Lottery::new(PrizeVector::new(r.prizes)?, r.probs)
    }
}

impl From<Lottery> for LotteryRepr {
    fn from(l: Lottery) -> Self {
        LotteryRepr {
            prizes: l.prizes.0,
            probs: l.probs,
        }
    }
}

impl Lottery {
    pub fn new(prizes: PrizeVector, probs: Vec<Rational>) -> Result<Self> {
        if probs.len() != prizes.len() {
            return Err(LotteryError::LengthMismatch {
                prizes: prizes.len(),
                probs: probs.len(),
            });
        }
        if let Some(i) = probs.iter().position(|p| p.is_negative()) {
            return Err(LotteryError::NegativeProbability { index: i + 1 });
        }
        let total: Rational = probs.iter().sum();
        if !total.is_one() {
            return Err(LotteryError::BadTotal(format_rational(&total)));
        }
        Ok(Lottery { prizes, probs })
    }

    /// Lottery with integer-percent probabilities.
    pub fn from_percents(prizes: PrizeVector, percents: &[i64]) -> Result<Self> {
        Lottery::new(prizes, percents.iter().map(|&p| percent(p)).collect())
    }

    /// Point mass on 1-based rank `k`.
    pub fn degenerate(prizes: PrizeVector, k: usize) -> Self {
        let mut probs = vec![Rational::zero(); prizes.len()];
        probs[k - 1] = Rational::one();
        Lottery { prizes, probs }
    }

    pub fn prizes(&self) -> &PrizeVector {
        &self.prizes
    }

    pub fn probs(&self) -> &[Rational] {
        &self.probs
    }

    /// Probability of 1-based rank `k`.
    pub fn prob(&self, k: usize) -> &Rational {
        &self.probs[k - 1]
    }

    /// Probabilities as integer percentages, if they all are.
    pub fn percents(&self) -> Option<Vec<i64>> {
        use num_traits::ToPrimitive;
        self.probs
            .iter()
            .map(|p| {
                let scaled = p * Rational::from_integer(100.into());
                if scaled.is_integer() {
                    scaled.to_integer().to_i64()
                } else {
                    None
                }
            })
            .collect()
    }

    /// Prize ranks (1-based) with positive probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_positive())
            .map(|(i, _)| i + 1)
    }

    pub fn expected_value(&self) -> Rational {
        // one reduction at the end instead of one per term
        let (mut num, mut den) = (BigInt::zero(), BigInt::one());
        for (p, x) in self.probs.iter().zip(self.prizes.as_slice()) {
            if p.is_zero() {
                continue;
            }
            let (n, d) = (p.numer() * x.numer(), p.denom() * x.denom());
            num = num * &d + n * &den;
            den *= d;
        }
        Rational::new(num, den)
    }

    pub fn expected_utility<S: Scalar>(&self, u: &TabulatedUtility<S>) -> Result<S> {
        u.check_len(self.prizes.len())?;
        Ok(self
            .probs
            .iter()
            .zip(u.values())
            .fold(S::zero(), |acc, (p, v)| {
                if p.is_zero() {
                    acc
                } else {
                    acc + S::from_rational(p) * v.clone()
                }
            }))
    }

    /// Exact comparison of `EU(self)` against `EU(other)`.
    ///
    /// Float utilities are lifted to rationals before summing, so equal
    /// expected utilities compare `Equal` even when the float sums would not.
    pub fn compare_expected_utility<S: Scalar>(
        &self,
        other: &Lottery,
        u: &TabulatedUtility<S>,
    ) -> Result<Ordering> {
        if self.prizes != other.prizes {
            return Err(LotteryError::PrizeMismatch);
        }
        u.check_len(self.prizes.len())?;
        let diff: Vec<Rational> = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| p - q)
            .collect();
        let d = exact_dot(&diff, u.values()).ok_or(LotteryError::NonFiniteUtility { index: 0 })?;
        Ok(d.cmp(&Rational::zero()))
    }

    /// Moves all mass at interior rank `k` to ranks `k-1` and `k+1`,
    /// keeping the mean unchanged.
    ///
    /// The share sent down is `(x[k+1]-x[k]) / (x[k+1]-x[k-1])`, the share
    /// sent up is `(x[k]-x[k-1]) / (x[k+1]-x[k-1])`.
    pub fn mps_spread(&self, k: usize) -> Result<Lottery> {
        let len = self.prizes.len();
        if k <= 1 || k >= len {
            return Err(LotteryError::NotInterior { k, len });
        }
        let mass = self.prob(k).clone();
        if mass.is_zero() {
            return Err(LotteryError::EmptyInterior { k });
        }
        let (down, up) = spread_weights(&self.prizes, k);
        let mut probs = self.probs.clone();
        probs[k - 2] += &mass * down;
        probs[k] += &mass * up;
        probs[k - 1] = Rational::zero();
        Ok(Lottery {
            prizes: self.prizes.clone(),
            probs,
        })
    }

    /// All one-step spreads of this lottery, keyed by interior rank.
    pub fn mps_family(&self) -> MpsFamily {
        let spreads = self
            .prizes
            .interior_ranks()
            .filter(|&k| self.prob(k).is_positive())
            .map(|k| (k, self.mps_spread(k).expect("interior rank with positive mass")))
            .collect();
        MpsFamily {
            base: self.clone(),
            spreads,
        }
    }

    /// Componentwise mixture `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &Lottery, alpha: &Rational) -> Result<Lottery> {
        if self.prizes != other.prizes {
            return Err(LotteryError::PrizeMismatch);
        }
        if alpha.is_negative() || *alpha > Rational::one() {
            return Err(LotteryError::BadMixWeight);
        }
        let beta = Rational::one() - alpha;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| alpha * p + &beta * q)
            .collect();
        Lottery::new(self.prizes.clone(), probs)
    }
}

/// Down and up shares for spreading rank `k`.
pub fn spread_weights(prizes: &PrizeVector, k: usize) -> (Rational, Rational) {
    let lo = prizes.rank(k - 1);
    let mid = prizes.rank(k);
    let hi = prizes.rank(k + 1);
    let width = hi - lo;
    ((hi - mid) / &width, (mid - lo) / width)
}

/// A base lottery together with its one-step mean-preserving spreads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpsFamily {
    base: Lottery,
    spreads: BTreeMap<usize, Lottery>,
}

impl MpsFamily {
    pub fn base(&self) -> &Lottery {
        &self.base
    }

    /// Spreads keyed by the 1-based interior rank whose mass was moved.
    pub fn spreads(&self) -> &BTreeMap<usize, Lottery> {
        &self.spreads
    }

    pub fn spread(&self, k: usize) -> Option<&Lottery> {
        self.spreads.get(&k)
    }

    /// True when every interior rank has a spread, i.e. the family is a
    /// complete concavity test.
    pub fn is_complete(&self) -> bool {
        self.spreads.len() == self.base.prizes().interior_ranks().len()
    }

    /// Checks the structural invariants of a spread family.
    pub fn validate(&self) -> Result<()> {
        let mean = self.base.expected_value();
        for k in self.base.prizes().interior_ranks() {
            let has_mass = self.base.prob(k).is_positive();
            match self.spreads.get(&k) {
                Some(s) => {
                    if !has_mass {
                        return Err(LotteryError::EmptyInterior { k });
                    }
                    if s.prizes() != self.base.prizes() {
                        return Err(LotteryError::PrizeMismatch);
                    }
                    if !s.prob(k).is_zero() || s.expected_value() != mean {
                        return Err(LotteryError::NotMeanPreserving { k });
                    }
                }
                None if has_mass => return Err(LotteryError::EmptyInterior { k }),
                None => {}
            }
        }
        Ok(())
    }
}

/// Utility levels, one per prize, non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct TabulatedUtility<S> {
    values: Vec<S>,
}

impl<S: Scalar> TabulatedUtility<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| v.to_exact().is_none()) {
            return Err(LotteryError::NonFiniteUtility { index: i + 1 });
        }
        if let Some(i) = (1..values.len()).find(|&i| values[i] < values[i - 1]) {
            return Err(LotteryError::DecreasingUtility { index: i });
        }
        Ok(TabulatedUtility { values })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_len(&self, expected: usize) -> Result<()> {
        if self.values.len() != expected {
            return Err(LotteryError::UtilityLength {
                expected,
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Weak concavity of `u` on the prize grid: the slope between consecutive
/// prizes never increases. Evaluated exactly.
pub fn is_concave_on_grid<S: Scalar>(u: &TabulatedUtility<S>, prizes: &PrizeVector) -> Result<bool> {
    u.check_len(prizes.len())?;
    let exact: Vec<Rational> = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v.to_exact().ok_or(LotteryError::NonFiniteUtility { index: i + 1 }))
        .collect::<Result<_>>()?;
    let x = prizes.as_slice();
    // (u[k]-u[k-1])/(x[k]-x[k-1]) >= (u[k+1]-u[k])/(x[k+1]-x[k]), cross-multiplied
    Ok((1..x.len() - 1).all(|k| {
        let left = (&exact[k] - &exact[k - 1]) * (&x[k + 1] - &x[k]);
        let right = (&exact[k + 1] - &exact[k]) * (&x[k] - &x[k - 1]);
        left >= right
    }))
}

/// Whether the base lottery is weakly preferred to every spread in the family.
pub fn prefers_base_to_all_spreads<S: Scalar>(u: &TabulatedUtility<S>, family: &MpsFamily) -> Result<bool> {
    if family.spreads().is_empty() {
        return Err(LotteryError::EmptyFamily);
    }
    for spread in family.spreads().values() {
        if family.base().compare_expected_utility(spread, u)? == Ordering::Less {
            return Ok(false);
        }
    }
    Ok(true)
}
