//! Subject summaries, pattern tables, chi-square tests and the price-list
//! cross-tabulation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{ChoicePattern, PairTag, Pick};
use crate::records::ChoiceRecord;
use crate::scalar::{ratio, serde_rational, Rational};
use crate::stats::chi2_sf;
use crate::tasks::HL_ROWS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("expected count in cell {0} is not positive")]
    ZeroExpected(usize),
    #[error("observed has {observed} cells, expected has {expected}")]
    LengthMismatch { observed: usize, expected: usize },
    #[error("expected proportions must be positive and sum to 1")]
    BadProportions,
    #[error("table has an empty row or column")]
    DegenerateMargins,
    #[error("a test needs at least two cells")]
    TooFewCells,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

impl ChiSquareResult {
    fn new(statistic: f64, df: u32) -> Self {
        ChiSquareResult {
            statistic,
            df,
            p_value: chi2_sf(statistic, df),
        }
    }
}

/// Expected frequencies for a goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    /// Used as given.
    Counts(Vec<f64>),
    /// Scaled by the observed total.
    Proportions(Vec<f64>),
}

/// Degrees of freedom of a goodness-of-fit test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfConvention {
    /// `cells - 1`, also when the expected values are supplied externally.
    #[default]
    CellsMinusOne,
    /// `cells`, treating the expected values as fully known.
    Cells,
}

/// Pearson goodness-of-fit statistic `Σ (O - E)² / E`.
pub fn chisq_goodness_of_fit(
    observed: &[u64],
    expected: &Expected,
    df: DfConvention,
) -> Result<ChiSquareResult, StatsError> {
    if observed.len() < 2 {
        return Err(StatsError::TooFewCells);
    }
    let total: f64 = observed.iter().map(|&o| o as f64).sum();
    let exp: Vec<f64> = match expected {
        Expected::Counts(e) => e.clone(),
        Expected::Proportions(p) => {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(x > 0.0)) {
                return Err(StatsError::BadProportions);
            }
            p.iter().map(|x| x * total).collect()
        }
    };
    if exp.len() != observed.len() {
        return Err(StatsError::LengthMismatch {
            observed: observed.len(),
            expected: exp.len(),
        });
    }
    if let Some(i) = exp.iter().position(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(StatsError::ZeroExpected(i));
    }
    let statistic = observed
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let cells = observed.len() as u32;
    let df = match df {
        DfConvention::CellsMinusOne => cells - 1,
        DfConvention::Cells => cells,
    };
    Ok(ChiSquareResult::new(statistic, df))
}

/// Pearson test of independence on an `r x c` table given row by row.
pub fn chisq_homogeneity(table: &[Vec<u64>]) -> Result<ChiSquareResult, StatsError> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(StatsError::TooFewCells);
    }
    if let Some(bad) = table.iter().find(|r| r.len() != cols) {
        return Err(StatsError::LengthMismatch {
            observed: bad.len(),
            expected: cols,
        });
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    if row_sums.iter().chain(&col_sums).any(|&s| s == 0.0) {
        return Err(StatsError::DegenerateMargins);
    }
    let n: f64 = row_sums.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / n;
            statistic += (o as f64 - e).powi(2) / e;
        }
    }
    Ok(ChiSquareResult::new(statistic, ((rows - 1) * (cols - 1)) as u32))
}

/// One subject's data after validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub session_id: String,
    pub subject_id: String,
    /// Pattern per case; empty when the spread part was excluded.
    pub patterns: BTreeMap<String, ChoicePattern>,
    /// Most frequent pattern and how many cases show it (ties resolved in
    /// the order (A,A), (B,A), (A,C), (B,C)).
    pub modal: Option<(ChoicePattern, usize)>,
    /// Number of safe choices; `None` when the price list was excluded.
    pub hl_safe_count: Option<u32>,
    /// Set for ten safe choices (never switching).
    pub hl_never_switched: bool,
}

impl SubjectSummary {
    pub fn has_patterns(&self) -> bool {
        !self.patterns.is_empty()
    }

    pub fn count(&self, pattern: ChoicePattern) -> usize {
        self.patterns.values().filter(|&&p| p == pattern).count()
    }
}

/// Why part of a subject's data was left out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditNote {
    pub session_id: String,
    pub subject_id: String,
    pub part: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summaries {
    /// Case ids every complete subject answered, in first-seen order.
    pub cases: Vec<String>,
    pub subjects: Vec<SubjectSummary>,
    pub notes: Vec<AuditNote>,
}

/// Groups records by subject and validates both parts. A part with missing,
/// duplicated or inconsistent decisions is dropped for that subject and an
/// audit note explains why.
pub fn summarize(records: &[ChoiceRecord]) -> Summaries {
    let mut cases: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<(&str, &str), Vec<&ChoiceRecord>> = BTreeMap::new();
    for r in records {
        if r.part == 2 && !cases.contains(&r.screen) {
            cases.push(r.screen.clone());
        }
        grouped.entry((&r.session_id, &r.subject_id)).or_default().push(r);
    }
    sort_cases(&mut cases);

    let results: Vec<(SubjectSummary, Vec<AuditNote>)> = grouped
        .into_par_iter()
        .map(|((session, subject), recs)| summarize_subject(session, subject, &recs, &cases))
        .collect();
    let mut subjects = Vec::with_capacity(results.len());
    let mut notes = Vec::new();
    for (s, n) in results {
        subjects.push(s);
        notes.extend(n);
    }
    Summaries { cases, subjects, notes }
}

// C1, C2, ..., C10 in numeric order; anything else keeps first-seen order.
fn sort_cases(cases: &mut [String]) {
    let key = |c: &String| c.strip_prefix('C').and_then(|n| n.parse::<u64>().ok());
    if cases.iter().all(|c| key(c).is_some()) {
        cases.sort_by_key(key);
    }
}

fn summarize_subject(
    session: &str,
    subject: &str,
    recs: &[&ChoiceRecord],
    cases: &[String],
) -> (SubjectSummary, Vec<AuditNote>) {
    let mut notes = Vec::new();
    let mut note = |part: u8, reason: String| {
        notes.push(AuditNote {
            session_id: session.to_string(),
            subject_id: subject.to_string(),
            part,
            reason,
        })
    };

    let part1: Vec<&ChoiceRecord> = recs.iter().copied().filter(|r| r.part == 1).collect();
    let part2: Vec<&ChoiceRecord> = recs.iter().copied().filter(|r| r.part == 2).collect();

    let hl = if part1.is_empty() {
        note(1, "no price-list decisions".into());
        None
    } else {
        match hl_safe_count(&part1) {
            Ok(s) => Some(s),
            Err(reason) => {
                note(1, reason);
                None
            }
        }
    };

    let patterns = if part2.is_empty() {
        note(2, "no spread decisions".into());
        BTreeMap::new()
    } else {
        match case_patterns(&part2, cases) {
            Ok(p) => p,
            Err(reason) => {
                note(2, reason);
                BTreeMap::new()
            }
        }
    };

    let modal = ChoicePattern::ALL
        .into_iter()
        .map(|p| (p, patterns.values().filter(|&&q| q == p).count()))
        .filter(|(_, n)| *n > 0)
        .fold(None, |best: Option<(ChoicePattern, usize)>, (p, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((p, n)),
        });

    let summary = SubjectSummary {
        session_id: session.to_string(),
        subject_id: subject.to_string(),
        patterns,
        modal,
        hl_safe_count: hl,
        hl_never_switched: hl == Some(HL_ROWS),
    };
    (summary, notes)
}

fn hl_safe_count(recs: &[&ChoiceRecord]) -> Result<u32, String> {
    let mut rows: BTreeMap<u32, Pick> = BTreeMap::new();
    for r in recs {
        let row: u32 = r.screen.parse().map_err(|_| format!("bad price-list row `{}`", r.screen))?;
        if rows.insert(row, r.chosen).is_some() {
            return Err(format!("row {row} answered twice"));
        }
    }
    if rows.len() != HL_ROWS as usize || rows.keys().copied().ne(1..=HL_ROWS) {
        return Err(format!("{} of {HL_ROWS} rows answered", rows.len()));
    }
    let picks: Vec<Pick> = rows.into_values().collect();
    let s = picks.iter().take_while(|&&p| p == Pick::Safe).count();
    if picks[s..].iter().any(|&p| p != Pick::Risky) {
        return Err("more than one switch on the price list".into());
    }
    Ok(s as u32)
}

fn case_patterns(recs: &[&ChoiceRecord], cases: &[String]) -> Result<BTreeMap<String, ChoicePattern>, String> {
    let mut picks: BTreeMap<&str, [Option<Pick>; 2]> = BTreeMap::new();
    for r in recs {
        let tag = r.pair.ok_or_else(|| format!("case {} decision without a pair tag", r.screen))?;
        let idx = match tag {
            PairTag::AB => 0,
            PairTag::AC => 1,
        };
        let slot = &mut picks.entry(&r.screen).or_default()[idx];
        if slot.replace(r.chosen).is_some() {
            return Err(format!("case {} pair {tag} answered twice", r.screen));
        }
    }
    let mut out = BTreeMap::new();
    for case in cases {
        let pattern = match picks.get(case.as_str()) {
            Some([Some(ab), Some(ac)]) => ChoicePattern::from_picks(*ab, *ac)
                .ok_or_else(|| format!("case {case}: invalid picks {ab}/{ac}"))?,
            Some(_) => return Err(format!("case {case} has only one of its two decisions")),
            None => return Err(format!("case {case} not answered")),
        };
        out.insert(case.clone(), pattern);
    }
    Ok(out)
}

/// Pattern counts per case plus the pooled row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTable {
    pub cases: Vec<String>,
    /// `counts[i][j]`: subjects showing pattern `ChoicePattern::ALL[j]` in case `i`.
    pub counts: Vec<[u64; 4]>,
    pub subjects: u64,
}

impl PatternTable {
    pub fn from_counts(cases: Vec<String>, counts: Vec<[u64; 4]>) -> Self {
        let subjects = counts.first().map_or(0, |c| c.iter().sum());
        PatternTable { cases, counts, subjects }
    }

    pub fn pooled(&self) -> [u64; 4] {
        let mut out = [0; 4];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn total_choices(&self) -> u64 {
        self.pooled().iter().sum()
    }

    /// Pooled shares in the order (A,A), (B,A), (A,C), (B,C).
    pub fn pooled_shares(&self) -> [f64; 4] {
        let total = self.total_choices() as f64;
        self.pooled().map(|c| if total > 0.0 { c as f64 / total } else { 0.0 })
    }

    pub fn case_shares(&self, case: &str) -> Option<[f64; 4]> {
        let i = self.cases.iter().position(|c| c == case)?;
        let row = self.counts[i];
        let n: u64 = row.iter().sum();
        Some(row.map(|c| if n > 0 { c as f64 / n as f64 } else { 0.0 }))
    }

    /// Patterns by cases, the orientation of the homogeneity test.
    pub fn pattern_by_case(&self) -> Vec<Vec<u64>> {
        (0..4).map(|j| self.counts.iter().map(|row| row[j]).collect()).collect()
    }

    /// Goodness of fit of the pooled counts against equal shares.
    pub fn uniform_test(&self) -> Result<ChiSquareResult, StatsError> {
        chisq_goodness_of_fit(&self.pooled(), &Expected::Proportions(vec![0.25; 4]), DfConvention::CellsMinusOne)
    }

    /// Homogeneity of the pattern distribution across cases.
    pub fn homogeneity_test(&self) -> Result<ChiSquareResult, StatsError> {
        chisq_homogeneity(&self.pattern_by_case())
    }
}

/// Counts subjects per case and pattern, using subjects whose spread part
/// is complete.
pub fn pattern_table(summaries: &Summaries) -> PatternTable {
    let mut counts = vec![[0u64; 4]; summaries.cases.len()];
    let mut subjects = 0;
    for s in summaries.subjects.iter().filter(|s| s.has_patterns()) {
        subjects += 1;
        for (i, case) in summaries.cases.iter().enumerate() {
            counts[i][s.patterns[case].index()] += 1;
        }
    }
    PatternTable {
        cases: summaries.cases.clone(),
        counts,
        subjects,
    }
}

/// How often each subject repeats their modal pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub subjects: usize,
    pub cases: usize,
    /// `histogram[k]`: subjects whose modal pattern appears in exactly `k` cases.
    pub histogram: BTreeMap<usize, usize>,
    /// Same pattern in every case.
    pub perfectly_consistent: usize,
    /// Modal pattern in more than half of the cases.
    pub majority_consistent: usize,
}

pub fn consistency_report(summaries: &Summaries) -> ConsistencyReport {
    let n_cases = summaries.cases.len();
    let mut histogram: BTreeMap<usize, usize> = (1..=n_cases).map(|k| (k, 0)).collect();
    let mut subjects = 0;
    for (_, k) in summaries.subjects.iter().filter_map(|s| s.modal) {
        subjects += 1;
        *histogram.entry(k).or_default() += 1;
    }
    let perfectly_consistent = histogram.get(&n_cases).copied().unwrap_or(0);
    let majority_consistent = histogram.iter().filter(|(k, _)| *k * 2 > n_cases).map(|(_, v)| v).sum();
    ConsistencyReport {
        subjects,
        cases: n_cases,
        histogram,
        perfectly_consistent,
        majority_consistent,
    }
}

/// Subjects per safe-choice count 0..=10.
pub fn hl_histogram(summaries: &Summaries) -> [u64; 11] {
    let mut h = [0; 11];
    for s in summaries.subjects.iter().filter_map(|s| s.hl_safe_count) {
        h[s as usize] += 1;
    }
    h
}

/// One price-list group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlGroup {
    pub safe_choices: u32,
    pub subjects: u64,
    /// (A,A) choices over all spread cases.
    pub aa_choices: u64,
    /// Spread decisions made by the group (cases per subject times subjects).
    pub choices: u64,
    #[serde(with = "serde_rational")]
    pub aa_share: Rational,
}

impl HlGroup {
    pub fn new(safe_choices: u32, subjects: u64, aa_choices: u64, choices: u64) -> Self {
        let aa_share = if choices == 0 {
            ratio(0, 1)
        } else {
            ratio(aa_choices as i64, choices as i64)
        };
        HlGroup {
            safe_choices,
            subjects,
            aa_choices,
            choices,
            aa_share,
        }
    }
}

/// Share of (A,A) choices per safe-choice count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlCrossTab {
    pub groups: Vec<HlGroup>,
    /// Subjects left out for never switching.
    pub excluded_never_switched: u64,
}

impl HlCrossTab {
    pub fn group(&self, s: u32) -> Option<&HlGroup> {
        self.groups.iter().find(|g| g.safe_choices == s)
    }

    /// Tests the (A,A) counts per group against a common share `rate`.
    pub fn constant_share_test(&self, rate: f64, df: DfConvention) -> Result<ChiSquareResult, StatsError> {
        let groups: Vec<&HlGroup> = self.groups.iter().filter(|g| g.choices > 0).collect();
        let observed: Vec<u64> = groups.iter().map(|g| g.aa_choices).collect();
        let expected: Vec<f64> = groups.iter().map(|g| rate * g.choices as f64).collect();
        chisq_goodness_of_fit(&observed, &Expected::Counts(expected), df)
    }
}

/// Cross-tabulates the price-list count against (A,A) choices over subjects
/// with both parts complete.
pub fn hl_cross_tab(summaries: &Summaries) -> HlCrossTab {
    let mut groups: BTreeMap<u32, (u64, u64, u64)> = BTreeMap::new();
    let mut excluded = 0;
    for s in summaries.subjects.iter().filter(|s| s.has_patterns()) {
        let Some(k) = s.hl_safe_count else { continue };
        if s.hl_never_switched {
            excluded += 1;
            continue;
        }
        let g = groups.entry(k).or_default();
        g.0 += 1;
        g.1 += s.count(ChoicePattern::AA) as u64;
        g.2 += s.patterns.len() as u64;
    }
    HlCrossTab {
        groups: groups
            .into_iter()
            .map(|(k, (n, aa, total))| HlGroup::new(k, n, aa, total))
            .collect(),
        excluded_never_switched: excluded,
    }
}

/// Distinct subjects (session, subject) present in a record set.
pub fn subject_count(records: &[ChoiceRecord]) -> usize {
    records
        .iter()
        .map(|r| (&r.session_id, &r.subject_id))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Everything computed from a record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub records: usize,
    pub subjects: usize,
    pub pattern_table: PatternTable,
    pub pooled_counts: [u64; 4],
    pub pooled_shares: [f64; 4],
    pub uniform_test: Option<ChiSquareResult>,
    pub homogeneity_test: Option<ChiSquareResult>,
    pub consistency: ConsistencyReport,
    pub hl_histogram: [u64; 11],
    pub hl_cross_tab: HlCrossTab,
    /// (A,A) counts per group against the pooled (A,A) share.
    pub hl_share_test: Option<ChiSquareResult>,
    pub notes: Vec<AuditNote>,
}

pub fn analyze(records: &[ChoiceRecord]) -> AnalysisReport {
    let summaries = summarize(records);
    let table = pattern_table(&summaries);
    let cross = hl_cross_tab(&summaries);
    let pooled_aa = table.pooled_shares()[0];
    AnalysisReport {
        records: records.len(),
        subjects: subject_count(records),
        pooled_counts: table.pooled(),
        pooled_shares: table.pooled_shares(),
        uniform_test: table.uniform_test().ok(),
        homogeneity_test: table.homogeneity_test().ok(),
        consistency: consistency_report(&summaries),
        hl_histogram: hl_histogram(&summaries),
        hl_share_test: cross.constant_share_test(pooled_aa, DfConvention::default()).ok(),
        hl_cross_tab: cross,
        pattern_table: table,
        notes: summaries.notes,
    }
}
