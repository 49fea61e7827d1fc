//! Task batteries: the six spread cases, the ten-row price list, custom
//! batteries, and per-subject display randomization.

use num_traits::One;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::choice::{PairTag, Pick};
use crate::lottery::{Lottery, LotteryError, MpsFamily, PrizeVector};
use crate::scalar::{int, ratio, serde_rational, Rational};

/// `(id, L_A, L_B, L_C)` in integer percent over ($1, $16, $21, $38.5).
const PAPER_TABLE: [(&str, [i64; 4], [i64; 4], [i64; 4]); 6] = [
    ("C1", [21, 16, 63, 0], [25, 0, 75, 0], [21, 65, 0, 14]),
    ("C2", [27, 64, 9, 0], [43, 0, 57, 0], [27, 71, 0, 2]),
    ("C3", [57, 16, 27, 0], [61, 0, 39, 0], [57, 37, 0, 6]),
    ("C4", [0, 16, 63, 21], [4, 0, 75, 21], [0, 65, 0, 35]),
    ("C5", [0, 64, 27, 9], [16, 0, 75, 9], [0, 85, 0, 15]),
    ("C6", [0, 16, 27, 57], [4, 0, 39, 57], [0, 37, 0, 63]),
];

pub const HL_ROWS: u32 = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BatteryError {
    #[error(transparent)]
    Lottery(#[from] LotteryError),
    #[error("case {case}: stored spread at rank {k} differs from the regenerated one")]
    TableDrift { case: String, k: usize },
}

/// The four prizes $1, $16, $21, $38.5.
pub fn paper_prizes() -> PrizeVector {
    PrizeVector::new(vec![int(1), int(16), int(21), ratio(77, 2)]).expect("ascending")
}

/// One spread screen: a base lottery and its spreads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpsCase {
    pub id: String,
    pub family: MpsFamily,
    /// Set when some interior prize of the base has no mass, so the screen
    /// tests concavity only partially.
    #[serde(default)]
    pub partial: bool,
}

impl MpsCase {
    pub fn base(&self) -> &Lottery {
        self.family.base()
    }

    /// Lottery shown under a label: A is the base, B spreads rank 2, C rank 3.
    pub fn lottery(&self, pick: Pick) -> Option<&Lottery> {
        match pick {
            Pick::A => Some(self.family.base()),
            Pick::B => self.family.spread(2),
            Pick::C => self.family.spread(3),
            Pick::Safe | Pick::Risky => None,
        }
    }

    /// The decisions this screen asks for.
    pub fn pairs(&self) -> Vec<PairTag> {
        PairTag::BOTH
            .into_iter()
            .filter(|t| self.family.spread(t.spread_rank()).is_some())
            .collect()
    }

    fn from_base(id: String, base: Lottery) -> Result<Self, LotteryError> {
        let family = base.mps_family();
        if family.spreads().is_empty() {
            return Err(LotteryError::EmptyFamily);
        }
        family.validate()?;
        let partial = !family.is_complete();
        Ok(MpsCase { id, family, partial })
    }
}

/// Regenerates every spread of the stored table from its base lottery and
/// compares against the stored percentages.
pub fn verify_paper_table() -> Result<(), BatteryError> {
    let prizes = paper_prizes();
    for (id, a, b, c) in PAPER_TABLE {
        let base = Lottery::from_percents(prizes.clone(), &a)?;
        for (k, stored) in [(2, b), (3, c)] {
            let stored = Lottery::from_percents(prizes.clone(), &stored)?;
            if base.mps_spread(k)? != stored {
                return Err(BatteryError::TableDrift { case: id.to_string(), k });
            }
        }
    }
    Ok(())
}

/// The six cases C1..C6 with base probabilities in integer percent.
pub fn paper_battery() -> Vec<MpsCase> {
    verify_paper_table().expect("embedded table is a fixed point of the spread constructor");
    let prizes = paper_prizes();
    PAPER_TABLE
        .iter()
        .map(|(id, a, _, _)| {
            let base = Lottery::from_percents(prizes.clone(), a).expect("valid percentages");
            MpsCase::from_base(id.to_string(), base).expect("complete family")
        })
        .collect()
}

/// Raw stored percentages `(L_A, L_B, L_C)` for a paper case.
pub fn paper_table_entry(id: &str) -> Option<([i64; 4], [i64; 4], [i64; 4])> {
    PAPER_TABLE
        .iter()
        .find(|(i, ..)| *i == id)
        .map(|(_, a, b, c)| (*a, *b, *c))
}

/// Cases built from arbitrary base lotteries, named C1, C2, ...
pub fn custom_battery(bases: Vec<Lottery>) -> Result<Vec<MpsCase>, LotteryError> {
    bases
        .into_iter()
        .enumerate()
        .map(|(i, base)| MpsCase::from_base(format!("C{}", i + 1), base))
        .collect()
}

/// One row of the price list. Both lotteries live on the four paper prizes:
/// safe pays $16 or $21, risky pays $1 or $38.5, the better prize with
/// probability `p = index / 10`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlRow {
    pub index: u32,
    #[serde(with = "serde_rational")]
    pub p: Rational,
    pub safe: Lottery,
    pub risky: Lottery,
}

impl HlRow {
    pub fn lottery(&self, pick: Pick) -> Option<&Lottery> {
        match pick {
            Pick::Safe => Some(&self.safe),
            Pick::Risky => Some(&self.risky),
            _ => None,
        }
    }
}

pub fn hl_row(index: u32) -> HlRow {
    let prizes = paper_prizes();
    let p = ratio(index as i64, HL_ROWS as i64);
    let q = Rational::one() - &p;
    let zero = || int(0);
    HlRow {
        index,
        safe: Lottery::new(prizes.clone(), vec![zero(), q.clone(), p.clone(), zero()]).expect("valid"),
        risky: Lottery::new(prizes, vec![q, zero(), zero(), p.clone()]).expect("valid"),
        p,
    }
}

pub fn hl_battery() -> Vec<HlRow> {
    (1..=HL_ROWS).map(hl_row).collect()
}

/// Layout of the price-list screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlLayout {
    /// Column order of the two options.
    pub columns: [Pick; 2],
}

/// Layout of one spread screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpsLayout {
    pub case_id: String,
    /// Left-to-right order of the three lotteries.
    pub lotteries: Vec<Pick>,
    /// Top-to-bottom order of the decisions.
    pub decisions: Vec<PairTag>,
    /// Button order for each decision, aligned with `decisions`.
    pub buttons: Vec<[Pick; 2]>,
}

/// Per-subject randomization of screens, lotteries, decisions and buttons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayPlan {
    pub subject_id: String,
    /// Seed every screen layout is derived from; recorded with each choice.
    pub display_seed: u64,
    pub hl: HlLayout,
    /// Case ids in presentation order.
    pub case_order: Vec<String>,
    /// Layouts in presentation order.
    pub screens: Vec<MpsLayout>,
}

impl DisplayPlan {
    pub fn screen(&self, case_id: &str) -> Option<&MpsLayout> {
        self.screens.iter().find(|s| s.case_id == case_id)
    }
}

pub(crate) fn derive_seed(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// 64-bit seed derived from length-prefixed parts with SHA-256.
pub fn derive_u64(parts: &[&[u8]]) -> u64 {
    let bytes = derive_seed(parts);
    u64::from_le_bytes(bytes[..8].try_into().expect("eight bytes"))
}

/// Per-subject display seed derived from the session seed.
pub fn subject_display_seed(session_seed: u64, subject_id: &str) -> u64 {
    derive_u64(&[&session_seed.to_le_bytes(), subject_id.as_bytes()])
}

/// Independent random stream for a named screen of a subject.
pub fn screen_rng(display_seed: u64, screen: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(&[&display_seed.to_le_bytes(), screen.as_bytes()]))
}

fn coin_order<T: Copy>(rng: &mut impl Rng, pair: [T; 2]) -> [T; 2] {
    if rng.random_bool(0.5) {
        [pair[1], pair[0]]
    } else {
        pair
    }
}

/// Display plan for one subject. Each screen draws from its own stream, so
/// a layout depends only on `(session_seed, subject_id, screen)`.
pub fn display_plan(session_seed: u64, subject_id: &str, cases: &[MpsCase]) -> DisplayPlan {
    let display_seed = subject_display_seed(session_seed, subject_id);

    let mut rng = screen_rng(display_seed, "hl");
    let hl = HlLayout {
        columns: coin_order(&mut rng, [Pick::Safe, Pick::Risky]),
    };

    let mut case_order: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    case_order.shuffle(&mut screen_rng(display_seed, "order"));

    let screens = case_order
        .iter()
        .map(|id| {
            let case = cases.iter().find(|c| &c.id == id).expect("id from battery");
            let mut rng = screen_rng(display_seed, id);
            let mut lotteries: Vec<Pick> = [Pick::A, Pick::B, Pick::C]
                .into_iter()
                .filter(|p| case.lottery(*p).is_some())
                .collect();
            lotteries.shuffle(&mut rng);
            let mut decisions = case.pairs();
            decisions.shuffle(&mut rng);
            let buttons = decisions
                .iter()
                .map(|t| coin_order(&mut rng, [Pick::A, t.alternative()]))
                .collect();
            MpsLayout {
                case_id: id.clone(),
                lotteries,
                decisions,
                buttons,
            }
        })
        .collect();

    DisplayPlan {
        subject_id: subject_id.to_string(),
        display_seed,
        hl,
        case_order,
        screens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case<'a>(b: &'a [MpsCase], id: &str) -> &'a MpsCase {
        b.iter().find(|c| c.id == id).unwrap()
    }

    #[test]
    fn stored_table_regenerates() {
        verify_paper_table().unwrap();
    }

    #[test]
    fn paper_cases() {
        let b = paper_battery();
        assert_eq!(b.len(), 6);
        let c3 = case(&b, "C3");
        assert_eq!(c3.base().percents().unwrap(), vec![57, 16, 27, 0]);
        assert_eq!(c3.lottery(Pick::B).unwrap().percents().unwrap(), vec![61, 0, 39, 0]);
        assert_eq!(c3.lottery(Pick::C).unwrap().percents().unwrap(), vec![57, 37, 0, 6]);
        let c6 = case(&b, "C6");
        assert_eq!(c6.base().percents().unwrap(), vec![0, 16, 27, 57]);
        assert_eq!(c6.lottery(Pick::B).unwrap().percents().unwrap(), vec![4, 0, 39, 57]);
        assert_eq!(c6.lottery(Pick::C).unwrap().percents().unwrap(), vec![0, 37, 0, 63]);
        for c in &b {
            let m = c.base().expected_value();
            assert_eq!(c.lottery(Pick::B).unwrap().expected_value(), m);
            assert_eq!(c.lottery(Pick::C).unwrap().expected_value(), m);
            assert!(!c.partial);
            assert_eq!(c.pairs(), vec![PairTag::AB, PairTag::AC]);
        }
    }

    #[test]
    fn price_list() {
        let rows = hl_battery();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[0].safe.percents().unwrap(), vec![0, 90, 10, 0]);
        assert_eq!(rows[0].risky.percents().unwrap(), vec![90, 0, 0, 10]);
        assert_eq!(rows[9].safe, Lottery::degenerate(paper_prizes(), 3));
        assert_eq!(rows[9].risky, Lottery::degenerate(paper_prizes(), 4));
        let gap = rows[4].risky.expected_value() - rows[4].safe.expected_value();
        assert_eq!(gap, ratio(5, 4));
        assert!(rows.windows(2).all(|w| w[0].p < w[1].p));
        let dominated = rows
            .iter()
            .filter(|r| r.risky.support().min() > r.safe.support().max())
            .count();
        assert_eq!(dominated, 1);
    }

    #[test]
    fn custom_batteries() {
        let c1a = Lottery::from_percents(paper_prizes(), &[21, 16, 63, 0]).unwrap();
        let b = custom_battery(vec![c1a]).unwrap();
        assert_eq!(b[0].family, paper_battery()[0].family);

        let five = PrizeVector::new((1..=5).map(int).collect()).unwrap();
        let l = Lottery::from_percents(five, &[20, 20, 20, 20, 20]).unwrap();
        assert_eq!(custom_battery(vec![l]).unwrap()[0].family.spreads().len(), 3);

        let gap = Lottery::from_percents(paper_prizes(), &[30, 40, 0, 30]).unwrap();
        let b = custom_battery(vec![gap]).unwrap();
        assert!(b[0].partial);
        assert_eq!(b[0].family.spreads().keys().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(b[0].pairs(), vec![PairTag::AB]);

        let no_interior = Lottery::from_percents(paper_prizes(), &[50, 0, 0, 50]).unwrap();
        assert_eq!(custom_battery(vec![no_interior]), Err(LotteryError::EmptyFamily));
    }

    #[test]
    fn display_plans_are_deterministic_and_independent() {
        let b = paper_battery();
        let p1 = display_plan(7, "s1", &b);
        assert_eq!(p1, display_plan(7, "s1", &b));
        let others: Vec<DisplayPlan> = (0..20).map(|i| display_plan(7, &format!("t{i}"), &b)).collect();
        assert!(others.iter().any(|p| p.case_order != p1.case_order));
        assert_ne!(display_plan(8, "s1", &b).display_seed, p1.display_seed);

        let mut ids = p1.case_order.clone();
        ids.sort();
        assert_eq!(ids, vec!["C1", "C2", "C3", "C4", "C5", "C6"]);
        for s in &p1.screens {
            assert_eq!(s.lotteries.len(), 3);
            assert_eq!(s.decisions.len(), 2);
            for (t, buttons) in s.decisions.iter().zip(&s.buttons) {
                assert!(buttons.contains(&Pick::A) && buttons.contains(&t.alternative()));
            }
        }
    }

    #[test]
    fn screen_layout_depends_only_on_its_key() {
        let b = paper_battery();
        let full = display_plan(3, "x", &b);
        let fewer = display_plan(3, "x", &b[..3]);
        for s in &fewer.screens {
            assert_eq!(Some(s), full.screen(&s.case_id));
        }
        assert_eq!(full.hl, fewer.hl);
    }

    #[test]
    fn plan_json_round_trip() {
        let p = display_plan(11, "subject-9", &paper_battery());
        let back: DisplayPlan = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
