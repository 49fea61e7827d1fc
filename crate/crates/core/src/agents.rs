//! Synthetic expected-utility agents.

use std::cmp::Ordering;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{ChoicePattern, PairTag, Pick};
use crate::lottery::{Lottery, LotteryError, PrizeVector, TabulatedUtility};
use crate::records::ChoiceRecord;
use crate::scalar::Real;
use crate::tasks::{derive_u64, HlRow, MpsCase};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("tremble probability must lie in [0, 1), got {0}")]
    BadTremble(f64),
    #[error("power-expo utility needs r < 1 and alpha >= 0, got r = {r}, alpha = {alpha}")]
    BadPowerExpo { r: f64, alpha: f64 },
    #[error("utility parameter is not finite")]
    NonFinite,
    #[error("cannot parse agent `{0}`: expected crra:R, cara:A, powerexpo:R,ALPHA or table:U1,U2,...")]
    Parse(String),
    #[error("case {0} lacks one of the two spreads")]
    IncompleteCase(String),
    #[error(transparent)]
    Lottery(#[from] LotteryError),
}

/// Bernoulli utility families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilityFamily<F> {
    /// `x^(1-r) / (1-r)`, `ln x` at `r = 1`.
    Crra { r: F },
    /// `(1 - exp(-a x)) / a`, linear at `a = 0`.
    Cara { a: F },
    /// `(1 - exp(-alpha x^(1-r))) / alpha`, `x^(1-r)` at `alpha = 0`.
    PowerExpo { r: F, alpha: F },
    /// Utility levels given prize by prize.
    Tabulated { values: Vec<F> },
}

impl<F: Real> UtilityFamily<F> {
    fn check(&self) -> Result<(), AgentError> {
        let finite = |x: &F| x.is_finite();
        match self {
            UtilityFamily::Crra { r } if !finite(r) => Err(AgentError::NonFinite),
            UtilityFamily::Cara { a } if !finite(a) => Err(AgentError::NonFinite),
            UtilityFamily::PowerExpo { r, alpha } => {
                if !finite(r) || !finite(alpha) {
                    Err(AgentError::NonFinite)
                } else if *r >= F::one() || *alpha < F::zero() {
                    Err(AgentError::BadPowerExpo {
                        r: r.approx_f64(),
                        alpha: alpha.approx_f64(),
                    })
                } else {
                    Ok(())
                }
            }
            UtilityFamily::Tabulated { values } if !values.iter().all(finite) => Err(AgentError::NonFinite),
            _ => Ok(()),
        }
    }

    /// Utility of a positive money amount; `None` for tabulated utilities.
    pub fn eval(&self, x: F) -> Option<F> {
        match self {
            UtilityFamily::Crra { r } => {
                let a = F::one() - *r;
                Some(if a == F::zero() { x.ln() } else { x.powf(a) / a })
            }
            UtilityFamily::Cara { a } => Some(if *a == F::zero() {
                x
            } else {
                -(-*a * x).exp_m1() / *a
            }),
            UtilityFamily::PowerExpo { r, alpha } => {
                let y = x.powf(F::one() - *r);
                Some(if *alpha == F::zero() {
                    y
                } else {
                    -(-*alpha * y).exp_m1() / *alpha
                })
            }
            UtilityFamily::Tabulated { .. } => None,
        }
    }

    /// Utility levels at each prize.
    pub fn tabulate(&self, prizes: &PrizeVector) -> Result<TabulatedUtility<F>, AgentError> {
        self.check()?;
        let values = match self {
            UtilityFamily::Tabulated { values } if values.len() != prizes.len() => {
                return Err(LotteryError::UtilityLength {
                    expected: prizes.len(),
                    found: values.len(),
                }
                .into())
            }
            UtilityFamily::Tabulated { values } => values.clone(),
            _ => prizes
                .as_slice()
                .iter()
                .map(|x| self.eval(F::from_rational(x)).expect("parametric family"))
                .collect(),
        };
        Ok(TabulatedUtility::new(values)?)
    }
}

impl FromStr for UtilityFamily<f64> {
    type Err = AgentError;

    /// `crra:0.5`, `cara:0.1`, `powerexpo:0.3,0.03`, `table:0,0.3,0.35,1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AgentError::Parse(s.to_string());
        let (kind, args) = s.split_once(':').ok_or_else(err)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err())?;
        let family = match (kind.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("crra", [r]) => UtilityFamily::Crra { r: *r },
            ("cara", [a]) => UtilityFamily::Cara { a: *a },
            ("powerexpo" | "power-expo", [r, alpha]) => UtilityFamily::PowerExpo { r: *r, alpha: *alpha },
            ("table", values) if values.len() >= 2 => UtilityFamily::Tabulated { values: values.to_vec() },
            _ => return Err(err()),
        };
        family.check()?;
        Ok(family)
    }
}

/// A synthetic subject: a utility, a tremble rate and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec<F = f64> {
    pub utility: UtilityFamily<F>,
    /// Probability of replacing a decision by a fair coin flip.
    pub tremble: f64,
    pub rng_seed: u64,
}

impl<F: Real> AgentSpec<F> {
    pub fn new(utility: UtilityFamily<F>, tremble: f64, rng_seed: u64) -> Result<Self, AgentError> {
        if !(0.0..1.0).contains(&tremble) {
            return Err(AgentError::BadTremble(tremble));
        }
        utility.check()?;
        Ok(AgentSpec {
            utility,
            tremble,
            rng_seed,
        })
    }
}

/// Seed of agent `index` in a population drawn from `master`.
pub fn agent_seed(master: u64, index: usize) -> u64 {
    derive_u64(&[b"agent", &master.to_le_bytes(), &(index as u64).to_le_bytes()])
}

/// A running agent: its spec plus its random stream.
#[derive(Debug, Clone)]
pub struct Agent<F = f64> {
    spec: AgentSpec<F>,
    rng: ChaCha8Rng,
}

impl<F: Real> Agent<F> {
    pub fn new(spec: AgentSpec<F>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        Agent { spec, rng }
    }

    pub fn spec(&self) -> &AgentSpec<F> {
        &self.spec
    }

    /// Index (0 or 1) of the lottery picked from the pair. Expected
    /// utilities are compared exactly and ties go to the first lottery;
    /// with probability `tremble` the pick is a fair coin flip instead.
    pub fn choose(&mut self, first: &Lottery, second: &Lottery) -> Result<usize, AgentError> {
        if first.prizes() != second.prizes() {
            return Err(LotteryError::PrizeMismatch.into());
        }
        let u = self.spec.utility.tabulate(first.prizes())?;
        let preferred = match first.compare_expected_utility(second, &u)? {
            Ordering::Less => 1,
            Ordering::Equal | Ordering::Greater => 0,
        };
        if self.spec.tremble > 0.0 && self.rng.random_bool(self.spec.tremble) {
            return Ok(usize::from(self.rng.random_bool(0.5)));
        }
        Ok(preferred)
    }

    /// Pattern on one spread case: base vs. rank-2 spread, then base vs.
    /// rank-3 spread.
    pub fn choose_case(&mut self, case: &MpsCase) -> Result<ChoicePattern, AgentError> {
        let mut picks = [Pick::A; 2];
        for (slot, tag) in picks.iter_mut().zip(PairTag::BOTH) {
            let alt = case
                .lottery(tag.alternative())
                .ok_or_else(|| AgentError::IncompleteCase(case.id.clone()))?;
            if self.choose(case.base(), alt)? == 1 {
                *slot = tag.alternative();
            }
        }
        Ok(ChoicePattern::from_picks(picks[0], picks[1]).expect("A/B then A/C"))
    }

    /// Walks the price list top to bottom under the single-switch rule and
    /// returns the number of safe choices before the first risky one.
    pub fn play_hl(&mut self, rows: &[HlRow]) -> Result<u32, AgentError> {
        for (i, row) in rows.iter().enumerate() {
            if self.choose(&row.safe, &row.risky)? == 1 {
                return Ok(i as u32);
            }
        }
        Ok(rows.len() as u32)
    }
}

/// One pattern per case for a fresh agent.
pub fn simulate_mps<F: Real>(spec: &AgentSpec<F>, battery: &[MpsCase]) -> Result<Vec<ChoicePattern>, AgentError> {
    let mut agent = Agent::new(spec.clone());
    battery.iter().map(|c| agent.choose_case(c)).collect()
}

/// Safe-choice count on the price list for a fresh agent.
pub fn simulate_hl<F: Real>(spec: &AgentSpec<F>, rows: &[HlRow]) -> Result<u32, AgentError> {
    Agent::new(spec.clone()).play_hl(rows)
}

/// Subject id used for simulated agent `index`.
pub fn agent_subject_id(index: usize) -> String {
    format!("agent-{index:05}")
}

/// Runs every agent through the price list and then the spread battery and
/// emits the same records a live session would. Agents are simulated in
/// parallel; output order is by agent index.
pub fn simulate_population<F: Real>(
    session_id: &str,
    specs: &[AgentSpec<F>],
    battery: &[MpsCase],
    rows: &[HlRow],
) -> Result<Vec<ChoiceRecord>, AgentError> {
    let per_agent: Vec<Vec<ChoiceRecord>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| simulate_subject(session_id, &agent_subject_id(i), spec, battery, rows))
        .collect::<Result<_, _>>()?;
    Ok(per_agent.into_iter().flatten().collect())
}

fn simulate_subject<F: Real>(
    session_id: &str,
    subject_id: &str,
    spec: &AgentSpec<F>,
    battery: &[MpsCase],
    rows: &[HlRow],
) -> Result<Vec<ChoiceRecord>, AgentError> {
    let mut agent = Agent::new(spec.clone());
    let mut out = Vec::with_capacity(rows.len() + 2 * battery.len());
    let mut clock = 0u64;
    let mut record = |part: u8, screen: String, pair: Option<PairTag>, chosen: Pick| {
        clock += 1;
        ChoiceRecord {
            session_id: session_id.to_string(),
            subject_id: subject_id.to_string(),
            part,
            screen,
            pair,
            chosen,
            display_seed: spec.rng_seed,
            timestamp: clock,
        }
    };

    let s = agent.play_hl(rows)? as usize;
    for (i, row) in rows.iter().enumerate() {
        let chosen = if i < s { Pick::Safe } else { Pick::Risky };
        out.push(record(1, row.index.to_string(), None, chosen));
    }
    for case in battery {
        let (ab, ac) = agent.choose_case(case)?.picks();
        out.push(record(2, case.id.clone(), Some(PairTag::AB), ab));
        out.push(record(2, case.id.clone(), Some(PairTag::AC), ac));
    }
    Ok(out)
}
