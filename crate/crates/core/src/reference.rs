//! Bundled aggregate reference data: per-case pattern counts, the
//! price-list histogram and (A,A) counts per price-list group.
//!
//! Only aggregates are stored. Subject-level figures (consistency counts)
//! are kept as published constants and never recomputed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{DfConvention, ChiSquareResult, HlCrossTab, HlGroup, PatternTable, StatsError};
use crate::choice::ChoicePattern;
use crate::scalar::{ratio, serde_rational, Rational};

const REFERENCE_JSON: &[u8] = include_bytes!("../data/reference.json");
/// SHA-256 of the bundled file.
pub const REFERENCE_SHA256: &str = "bbde7feff60ea11e122c90709bd00fd76f99248a0851052b0508d7e65d50a43c";

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error("reference data checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },
    #[error("reference data is malformed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("reference data is inconsistent: {0}")]
    Inconsistent(String),
}

/// (A,A) choices of subjects whose price-list group is not reported separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnassignedChoices {
    pub safe_choices: Vec<u32>,
    pub aa_choices: u64,
}

/// Published figures that cannot be derived from the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedValues {
    pub pooled_percent: [f64; 4],
    pub uniform_p_below: f64,
    pub homogeneity_p: f64,
    pub hl_share_p: f64,
    /// Pooled (A,A) share used as the null of the price-list test.
    pub hl_share_rate: f64,
    pub share_s_at_least_5_percent: f64,
    pub perfectly_consistent: u64,
    pub majority_consistent: u64,
    pub most_consistent_subjects: u64,
    pub most_consistent_red_percent: f64,
    pub most_consistent_yellow_green_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDataset {
    pub subjects: u64,
    pub cases: Vec<String>,
    pub patterns: Vec<ChoicePattern>,
    pub case_counts: BTreeMap<String, [u64; 4]>,
    /// Subjects per safe-choice count 0..=9.
    pub hl_histogram: Vec<u64>,
    /// (A,A) choices per safe-choice count, where reported.
    pub hl_aa_choices: BTreeMap<u32, u64>,
    pub hl_aa_unassigned: UnassignedChoices,
    pub published: PublishedValues,
}

/// Loads and validates the bundled reference data.
pub fn load_reference_dataset() -> Result<ReferenceDataset, ReferenceError> {
    load_reference_bytes(REFERENCE_JSON, REFERENCE_SHA256)
}

/// Loads reference data from `bytes`, which must hash to `sha256_hex`.
pub fn load_reference_bytes(bytes: &[u8], sha256_hex: &str) -> Result<ReferenceDataset, ReferenceError> {
    let found = hex::encode(Sha256::digest(bytes));
    if !found.eq_ignore_ascii_case(sha256_hex) {
        return Err(ReferenceError::Checksum {
            expected: sha256_hex.to_string(),
            found,
        });
    }
    let data: ReferenceDataset = serde_json::from_slice(bytes)?;
    data.validate()?;
    Ok(data)
}

/// Raw bundled bytes.
pub fn reference_bytes() -> &'static [u8] {
    REFERENCE_JSON
}

impl ReferenceDataset {
    fn validate(&self) -> Result<(), ReferenceError> {
        let bad = |m: String| Err(ReferenceError::Inconsistent(m));
        if self.patterns != ChoicePattern::ALL {
            return bad("pattern order must be (A,A), (B,A), (A,C), (B,C)".into());
        }
        for case in &self.cases {
            let Some(row) = self.case_counts.get(case) else {
                return bad(format!("no counts for case {case}"));
            };
            let n: u64 = row.iter().sum();
            if n != self.subjects {
                return bad(format!("case {case} counts sum to {n}, not {}", self.subjects));
            }
        }
        if self.case_counts.len() != self.cases.len() {
            return bad("counts for unlisted cases".into());
        }
        let hist: u64 = self.hl_histogram.iter().sum();
        if hist != self.subjects {
            return bad(format!("price-list histogram sums to {hist}"));
        }
        let per_subject = self.cases.len() as u64;
        let mut assigned = 0;
        for (&s, &aa) in &self.hl_aa_choices {
            let n = self.hl_histogram.get(s as usize).copied().unwrap_or(0);
            if aa > n * per_subject {
                return bad(format!("group s={s} has {aa} (A,A) choices from {n} subjects"));
            }
            assigned += aa;
        }
        let rest = &self.hl_aa_unassigned;
        let rest_capacity: u64 = rest
            .safe_choices
            .iter()
            .map(|&s| self.hl_histogram.get(s as usize).copied().unwrap_or(0) * per_subject)
            .sum();
        if rest.aa_choices > rest_capacity || rest.safe_choices.iter().any(|s| self.hl_aa_choices.contains_key(s)) {
            return bad("unassigned (A,A) choices do not fit their groups".into());
        }
        let pooled_aa = self.pattern_table().pooled()[0];
        if assigned + rest.aa_choices != pooled_aa {
            return bad(format!(
                "(A,A) choices by group total {} but the case table has {pooled_aa}",
                assigned + rest.aa_choices
            ));
        }
        Ok(())
    }

    pub fn total_choices(&self) -> u64 {
        self.subjects * self.cases.len() as u64
    }

    pub fn pattern_table(&self) -> PatternTable {
        PatternTable::from_counts(
            self.cases.clone(),
            self.cases.iter().map(|c| self.case_counts[c]).collect(),
        )
    }

    /// Groups whose (A,A) counts are reported.
    pub fn hl_cross_tab(&self) -> HlCrossTab {
        let per_subject = self.cases.len() as u64;
        HlCrossTab {
            groups: self
                .hl_aa_choices
                .iter()
                .map(|(&s, &aa)| {
                    let n = self.hl_histogram[s as usize];
                    HlGroup::new(s, n, aa, n * per_subject)
                })
                .collect(),
            excluded_never_switched: 0,
        }
    }

    /// Fraction of subjects with at least `s` safe choices.
    pub fn share_with_at_least(&self, s: u32) -> Rational {
        let n: u64 = self.hl_histogram.iter().skip(s as usize).sum();
        ratio(n as i64, self.subjects as i64)
    }
}

/// The reference aggregates run through the pattern, homogeneity and
/// price-list tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceReport {
    pub pattern_table: PatternTable,
    pub pooled_counts: [u64; 4],
    pub pooled_shares: [f64; 4],
    pub uniform_test: ChiSquareResult,
    pub homogeneity_test: ChiSquareResult,
    pub hl_histogram: Vec<u64>,
    #[serde(with = "serde_rational")]
    pub share_at_least_5: Rational,
    pub hl_cross_tab: HlCrossTab,
    /// Against the published pooled rate, `cells - 1` degrees of freedom.
    pub hl_share_test: ChiSquareResult,
    /// Same statistic with `cells` degrees of freedom.
    pub hl_share_test_known_rate: ChiSquareResult,
    pub published: PublishedValues,
}

pub fn reference_report(data: &ReferenceDataset) -> Result<ReferenceReport, StatsError> {
    let table = data.pattern_table();
    let cross = data.hl_cross_tab();
    let rate = data.published.hl_share_rate;
    Ok(ReferenceReport {
        pooled_counts: table.pooled(),
        pooled_shares: table.pooled_shares(),
        uniform_test: table.uniform_test()?,
        homogeneity_test: table.homogeneity_test()?,
        hl_histogram: data.hl_histogram.clone(),
        share_at_least_5: data.share_with_at_least(5),
        hl_share_test: cross.constant_share_test(rate, DfConvention::CellsMinusOne)?,
        hl_share_test_known_rate: cross.constant_share_test(rate, DfConvention::Cells)?,
        hl_cross_tab: cross,
        pattern_table: table,
        published: data.published.clone(),
    })
}
