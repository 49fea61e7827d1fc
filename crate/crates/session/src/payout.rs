//! Random-incentive payment: one price-list row and one spread decision are
//! drawn uniformly, and the lottery chosen at each is played out.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use riskprobe_core::choice::{PairTag, Pick};
use riskprobe_core::lottery::Lottery;
use riskprobe_core::scalar::serde_rational;
use riskprobe_core::Rational;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PayoutError {
    #[error("probability denominators of the lottery exceed 64 bits")]
    DenominatorTooLarge,
    #[error("no decisions to draw from")]
    Empty,
}

/// One uniform integer draw in `[0, modulus)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub label: String,
    pub modulus: u64,
    pub value: u64,
}

/// The decision selected for payment and the prize it paid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedPick {
    pub screen: String,
    pub pair: Option<PairTag>,
    pub chosen: Pick,
    pub lottery: Lottery,
    /// 1-based prize rank.
    pub prize_rank: usize,
    #[serde(with = "serde_rational")]
    pub prize: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutDraw {
    pub subject_id: String,
    pub rng_seed: u64,
    pub part1: RealizedPick,
    pub part2: RealizedPick,
    #[serde(with = "serde_rational")]
    pub total: Rational,
    pub transcript: Vec<TranscriptStep>,
}

/// A decision a subject made, with the lottery they picked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub screen: String,
    pub pair: Option<PairTag>,
    pub chosen: Pick,
    pub lottery: Lottery,
}

/// Least common denominator of the lottery's probabilities.
pub fn common_denominator(lottery: &Lottery) -> Result<u64, PayoutError> {
    lottery
        .probs()
        .iter()
        .fold(BigInt::one(), |acc, p| acc.lcm(p.denom()))
        .to_u64()
        .ok_or(PayoutError::DenominatorTooLarge)
}

/// Prize rank selected by `value` in `[0, modulus)`, where `modulus` is a
/// multiple of every probability denominator: the first rank whose
/// cumulative mass exceeds `value / modulus`.
pub fn rank_for_value(lottery: &Lottery, value: u64, modulus: u64) -> usize {
    let target = Rational::new(BigInt::from(value), BigInt::from(modulus));
    let mut cumulative = Rational::from_integer(BigInt::from(0));
    for (i, p) in lottery.probs().iter().enumerate() {
        cumulative += p;
        if target < cumulative {
            return i + 1;
        }
    }
    lottery.probs().len()
}

fn draw(rng: &mut impl Rng, label: &str, modulus: u64) -> TranscriptStep {
    TranscriptStep {
        label: label.to_string(),
        modulus,
        value: rng.random_range(0..modulus),
    }
}

/// Plays out a lottery by exact inverse-CDF sampling.
pub fn realize(lottery: &Lottery, rng: &mut impl Rng, label: &str) -> Result<(usize, TranscriptStep), PayoutError> {
    let modulus = common_denominator(lottery)?;
    let step = draw(rng, label, modulus);
    Ok((rank_for_value(lottery, step.value, modulus), step))
}

fn realized(d: &Decision, rank: usize) -> RealizedPick {
    RealizedPick {
        screen: d.screen.clone(),
        pair: d.pair,
        chosen: d.chosen,
        lottery: d.lottery.clone(),
        prize_rank: rank,
        prize: d.lottery.prizes().rank(rank).clone(),
    }
}

/// Draws the paid decisions and prizes for one subject.
///
/// Consumes the stream in a fixed order: price-list row, its prize, spread
/// decision, its prize.
pub fn draw_payout(
    subject_id: &str,
    rng_seed: u64,
    part1: &[Decision],
    part2: &[Decision],
) -> Result<PayoutDraw, PayoutError> {
    if part1.is_empty() || part2.is_empty() {
        return Err(PayoutError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let row = draw(&mut rng, "part1_decision", part1.len() as u64);
    let d1 = &part1[row.value as usize];
    let (rank1, prize1) = realize(&d1.lottery, &mut rng, "part1_prize")?;
    let decision = draw(&mut rng, "part2_decision", part2.len() as u64);
    let d2 = &part2[decision.value as usize];
    let (rank2, prize2) = realize(&d2.lottery, &mut rng, "part2_prize")?;

    let part1 = realized(d1, rank1);
    let part2 = realized(d2, rank2);
    Ok(PayoutDraw {
        subject_id: subject_id.to_string(),
        rng_seed,
        total: &part1.prize + &part2.prize,
        part1,
        part2,
        transcript: vec![row, prize1, decision, prize2],
    })
}

impl PayoutDraw {
    /// Whether the recorded picks and prizes follow from the transcript and
    /// the transcript from the seed.
    pub fn verify(&self, part1: &[Decision], part2: &[Decision]) -> bool {
        match draw_payout(&self.subject_id, self.rng_seed, part1, part2) {
            Ok(again) => again == *self && self.consistent_with_transcript(),
            Err(_) => false,
        }
    }

    fn consistent_with_transcript(&self) -> bool {
        let [_, p1, _, p2] = self.transcript.as_slice() else {
            return false;
        };
        rank_for_value(&self.part1.lottery, p1.value, p1.modulus) == self.part1.prize_rank
            && rank_for_value(&self.part2.lottery, p2.value, p2.modulus) == self.part2.prize_rank
            && self.part1.lottery.prob(self.part1.prize_rank) > &Rational::from_integer(BigInt::from(0))
            && self.part2.lottery.prob(self.part2.prize_rank) > &Rational::from_integer(BigInt::from(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use riskprobe_core::tasks::{hl_row, paper_battery};

    fn case_c6_c() -> Lottery {
        paper_battery()[5].lottery(Pick::C).unwrap().clone()
    }

    #[test]
    fn denominators() {
        assert_eq!(common_denominator(&case_c6_c()).unwrap(), 100);
        assert_eq!(common_denominator(&hl_row(10).risky).unwrap(), 1);
        assert_eq!(common_denominator(&hl_row(5).safe).unwrap(), 2);
    }

    #[test]
    fn inverse_cdf_boundaries() {
        // (0, 37, 0, 63)% over $1, $16, $21, $38.5
        let l = case_c6_c();
        assert_eq!(rank_for_value(&l, 0, 100), 2);
        assert_eq!(rank_for_value(&l, 36, 100), 2);
        assert_eq!(rank_for_value(&l, 37, 100), 4);
        assert_eq!(rank_for_value(&l, 99, 100), 4);
    }

    #[test]
    fn realized_prizes_stay_in_support() {
        let l = case_c6_c();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1_000 {
            let (k, step) = realize(&l, &mut rng, "x").unwrap();
            assert!(k == 2 || k == 4);
            assert!(step.value < step.modulus);
        }
        let (k, _) = realize(&hl_row(10).risky, &mut rng, "x").unwrap();
        assert_eq!(k, 4);
    }

    #[test]
    fn draws_are_reproducible() {
        let p1: Vec<Decision> = (1..=10)
            .map(|i| Decision {
                screen: i.to_string(),
                pair: None,
                chosen: Pick::Risky,
                lottery: hl_row(i).risky,
            })
            .collect();
        let p2 = vec![Decision {
            screen: "C6".into(),
            pair: Some(PairTag::AC),
            chosen: Pick::C,
            lottery: case_c6_c(),
        }];
        let a = draw_payout("s1", 99, &p1, &p2).unwrap();
        assert_eq!(a, draw_payout("s1", 99, &p1, &p2).unwrap());
        assert!(a.verify(&p1, &p2));
        assert_eq!(a.transcript.len(), 4);
        assert!(a.part2.prize_rank == 2 || a.part2.prize_rank == 4);

        let mut forged = a.clone();
        forged.part2.prize_rank = if a.part2.prize_rank == 2 { 4 } else { 2 };
        assert!(!forged.verify(&p1, &p2));
        assert_eq!(draw_payout("s1", 1, &[], &p2), Err(PayoutError::Empty));
    }
}
