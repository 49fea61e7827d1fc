//! Session events and the state they fold into.
//!
//! Every check lives in [`SessionState::validate`], so a replayed log goes
//! through exactly the rules a live submission did.

use serde::{Deserialize, Serialize};

use riskprobe_core::choice::{PairTag, Pick};
use riskprobe_core::lottery::Lottery;
use riskprobe_core::records::ChoiceRecord;
use riskprobe_core::tasks::{custom_battery, display_plan, hl_row, paper_battery, DisplayPlan, MpsCase, HL_ROWS};

use crate::payout::{Decision, PayoutDraw};

/// Spread cases offered in a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatterySpec {
    /// The six standard cases.
    #[default]
    Standard,
    /// Cases built from these base lotteries, named C1, C2, ...
    Custom { bases: Vec<Lottery> },
}

impl BatterySpec {
    /// Builds the cases. Custom bases must put mass on both interior prizes
    /// of a four-prize vector, so every screen asks the A/B and A/C pair.
    pub fn build(&self) -> Result<Vec<MpsCase>, ProtocolError> {
        match self {
            BatterySpec::Standard => Ok(paper_battery()),
            BatterySpec::Custom { bases } => {
                if bases.is_empty() {
                    return Err(ProtocolError::BadConfig("custom battery has no cases".into()));
                }
                if let Some(i) = bases.iter().position(|b| b.prizes().len() != 4) {
                    return Err(ProtocolError::BadConfig(format!("case {} must use four prizes", i + 1)));
                }
                let cases = custom_battery(bases.clone()).map_err(|e| ProtocolError::BadConfig(e.to_string()))?;
                if let Some(c) = cases.iter().find(|c| c.partial) {
                    return Err(ProtocolError::BadConfig(format!(
                        "case {} needs mass on both middle prizes",
                        c.id
                    )));
                }
                Ok(cases)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        seed: u64,
        experimenter_token: String,
        battery: BatterySpec,
        at: u64,
    },
    SubjectRegistered {
        subject_id: String,
        token: String,
        at: u64,
    },
    ChoiceSubmitted {
        record: ChoiceRecord,
    },
    SubjectFinalized {
        draw: PayoutDraw,
        at: u64,
    },
    SessionClosed {
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("the log must start with a session-created event")]
    NotCreated,
    #[error("session already created")]
    AlreadyCreated,
    #[error("session is closed")]
    Closed,
    #[error("subject {0} already registered")]
    DuplicateSubject(String),
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("record belongs to session {0}")]
    WrongSession(String),
    #[error("expected screen {expected}, got {got}")]
    OutOfOrder { expected: String, got: String },
    #[error("screen {0} was already answered")]
    AlreadyAnswered(String),
    #[error("row {row}: choosing safe after risky would switch twice; the price list allows a single switch")]
    SingleSwitch { row: u32 },
    #[error("{0}")]
    BadChoice(String),
    #[error("part 2 opens after all ten price-list rows are answered")]
    PartNotOpen,
    #[error("subject has not completed both parts")]
    Incomplete,
    #[error("subject already finalized")]
    AlreadyFinalized,
    #[error("payout draw does not match the subject's decisions")]
    BadDraw,
    #[error("subject has completed all screens")]
    NothingLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Closed,
}

/// Where a subject stands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    PriceList { row: u32 },
    Spread { case_id: String, remaining: Vec<PairTag> },
    Complete,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubjectState {
    pub subject_id: String,
    #[serde(skip)]
    pub token: String,
    pub registered_at: u64,
    pub plan: DisplayPlan,
    /// Price-list answers, row 1 first.
    pub hl: Vec<Pick>,
    /// Spread answers per case in plan order: `[AB, AC]`.
    pub spread: Vec<[Option<Pick>; 2]>,
    pub records: Vec<ChoiceRecord>,
    pub payout: Option<PayoutDraw>,
}

fn slot(tag: PairTag) -> usize {
    match tag {
        PairTag::AB => 0,
        PairTag::AC => 1,
    }
}

impl SubjectState {
    pub fn stage(&self) -> Stage {
        if self.payout.is_some() {
            return Stage::Finalized;
        }
        if self.hl.len() < HL_ROWS as usize {
            return Stage::PriceList {
                row: self.hl.len() as u32 + 1,
            };
        }
        for (layout, answers) in self.plan.screens.iter().zip(&self.spread) {
            let remaining: Vec<PairTag> = layout
                .decisions
                .iter()
                .copied()
                .filter(|t| answers[slot(*t)].is_none())
                .collect();
            if !remaining.is_empty() {
                return Stage::Spread {
                    case_id: layout.case_id.clone(),
                    remaining,
                };
            }
        }
        Stage::Complete
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.stage(), Stage::Complete | Stage::Finalized)
    }

    fn has_switched(&self) -> bool {
        self.hl.contains(&Pick::Risky)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionState {
    pub session_id: String,
    pub seed: u64,
    #[serde(skip)]
    pub experimenter_token: String,
    pub battery: BatterySpec,
    pub cases: Vec<MpsCase>,
    pub status: SessionStatus,
    pub created_at: u64,
    /// In registration order.
    pub subjects: Vec<SubjectState>,
}

impl SessionState {
    /// Folds a full event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, ProtocolError> {
        let mut events = events.into_iter();
        let mut state = match events.next() {
            Some(e) => Self::from_created(e)?,
            None => return Err(ProtocolError::NotCreated),
        };
        for e in events {
            state.apply(e.clone())?;
        }
        Ok(state)
    }

    /// State right after a session-created event.
    pub fn from_created(event: &Event) -> Result<Self, ProtocolError> {
        let Event::SessionCreated {
            session_id,
            seed,
            experimenter_token,
            battery,
            at,
        } = event
        else {
            return Err(ProtocolError::NotCreated);
        };
        Ok(SessionState {
            session_id: session_id.clone(),
            seed: *seed,
            experimenter_token: experimenter_token.clone(),
            cases: battery.build()?,
            battery: battery.clone(),
            status: SessionStatus::Open,
            created_at: *at,
            subjects: Vec::new(),
        })
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectState> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    fn subject_index(&self, id: &str) -> Result<usize, ProtocolError> {
        self.subjects
            .iter()
            .position(|s| s.subject_id == id)
            .ok_or_else(|| ProtocolError::UnknownSubject(id.to_string()))
    }

    pub fn case(&self, id: &str) -> Option<&MpsCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// Checks an event against the current state without applying it.
    pub fn validate(&self, event: &Event) -> Result<(), ProtocolError> {
        match event {
            Event::SessionCreated { .. } => Err(ProtocolError::AlreadyCreated),
            Event::SubjectRegistered { subject_id, .. } => {
                if self.status == SessionStatus::Closed {
                    return Err(ProtocolError::Closed);
                }
                if self.subject(subject_id).is_some() {
                    return Err(ProtocolError::DuplicateSubject(subject_id.clone()));
                }
                Ok(())
            }
            Event::ChoiceSubmitted { record } => self.validate_choice(record),
            Event::SubjectFinalized { draw, .. } => {
                let s = &self.subjects[self.subject_index(&draw.subject_id)?];
                match s.stage() {
                    Stage::Finalized => Err(ProtocolError::AlreadyFinalized),
                    Stage::Complete => {
                        let (p1, p2) = self.decisions(s);
                        if draw.verify(&p1, &p2) {
                            Ok(())
                        } else {
                            Err(ProtocolError::BadDraw)
                        }
                    }
                    _ => Err(ProtocolError::Incomplete),
                }
            }
            Event::SessionClosed { .. } => match self.status {
                SessionStatus::Closed => Err(ProtocolError::Closed),
                SessionStatus::Open => Ok(()),
            },
        }
    }

    fn validate_choice(&self, r: &ChoiceRecord) -> Result<(), ProtocolError> {
        if self.status == SessionStatus::Closed {
            return Err(ProtocolError::Closed);
        }
        if r.session_id != self.session_id {
            return Err(ProtocolError::WrongSession(r.session_id.clone()));
        }
        let s = &self.subjects[self.subject_index(&r.subject_id)?];
        if r.display_seed != s.plan.display_seed {
            return Err(ProtocolError::BadChoice("display seed does not match the subject's plan".into()));
        }
        r.validate().map_err(ProtocolError::BadChoice)?;
        match (s.stage(), r.part) {
            (Stage::Finalized | Stage::Complete, _) => Err(ProtocolError::AlreadyAnswered(r.screen.clone())),
            (Stage::PriceList { row }, 1) => {
                let got: u32 = r.screen.parse().unwrap_or(0);
                if got < row {
                    return Err(ProtocolError::AlreadyAnswered(r.screen.clone()));
                }
                if got != row {
                    return Err(ProtocolError::OutOfOrder {
                        expected: row.to_string(),
                        got: r.screen.clone(),
                    });
                }
                if r.chosen == Pick::Safe && s.has_switched() {
                    return Err(ProtocolError::SingleSwitch { row });
                }
                Ok(())
            }
            (Stage::PriceList { .. }, _) => Err(ProtocolError::PartNotOpen),
            (Stage::Spread { .. }, 1) => Err(ProtocolError::AlreadyAnswered(r.screen.clone())),
            (Stage::Spread { case_id, remaining }, _) => {
                let tag = r.pair.expect("validated record");
                if r.screen == case_id {
                    if remaining.contains(&tag) {
                        Ok(())
                    } else {
                        Err(ProtocolError::AlreadyAnswered(format!("{} {tag}", r.screen)))
                    }
                } else {
                    let pos = s.plan.case_order.iter().position(|c| *c == r.screen);
                    let current = s.plan.case_order.iter().position(|c| *c == case_id);
                    match (pos, current) {
                        (Some(p), Some(c)) if p < c => Err(ProtocolError::AlreadyAnswered(r.screen.clone())),
                        (Some(_), _) => Err(ProtocolError::OutOfOrder {
                            expected: case_id,
                            got: r.screen.clone(),
                        }),
                        (None, _) => Err(ProtocolError::BadChoice(format!("unknown case {}", r.screen))),
                    }
                }
            }
        }
    }

    /// Validates and applies one event.
    pub fn apply(&mut self, event: Event) -> Result<(), ProtocolError> {
        self.validate(&event)?;
        match event {
            Event::SessionCreated { .. } => unreachable!("rejected by validate"),
            Event::SubjectRegistered { subject_id, token, at } => {
                let plan = display_plan(self.seed, &subject_id, &self.cases);
                let spread = vec![[None, None]; plan.screens.len()];
                self.subjects.push(SubjectState {
                    subject_id,
                    token,
                    registered_at: at,
                    plan,
                    hl: Vec::new(),
                    spread,
                    records: Vec::new(),
                    payout: None,
                });
            }
            Event::ChoiceSubmitted { record } => {
                let i = self.subject_index(&record.subject_id)?;
                let s = &mut self.subjects[i];
                match record.pair {
                    None => s.hl.push(record.chosen),
                    Some(tag) => {
                        let pos = s
                            .plan
                            .case_order
                            .iter()
                            .position(|c| *c == record.screen)
                            .expect("validated case");
                        s.spread[pos][slot(tag)] = Some(record.chosen);
                    }
                }
                s.records.push(record);
            }
            Event::SubjectFinalized { draw, .. } => {
                let i = self.subject_index(&draw.subject_id)?;
                self.subjects[i].payout = Some(draw);
            }
            Event::SessionClosed { .. } => self.status = SessionStatus::Closed,
        }
        Ok(())
    }

    /// The chosen lotteries of a complete subject: price-list rows in order,
    /// then spread decisions in battery order, A/B before A/C.
    pub fn decisions(&self, s: &SubjectState) -> (Vec<Decision>, Vec<Decision>) {
        let part1 = s
            .hl
            .iter()
            .enumerate()
            .map(|(i, &chosen)| {
                let row = hl_row(i as u32 + 1);
                Decision {
                    screen: row.index.to_string(),
                    pair: None,
                    chosen,
                    lottery: row.lottery(chosen).expect("safe or risky").clone(),
                }
            })
            .collect();
        let mut part2 = Vec::new();
        for case in &self.cases {
            let Some(pos) = s.plan.case_order.iter().position(|c| *c == case.id) else {
                continue;
            };
            for tag in PairTag::BOTH {
                if let Some(chosen) = s.spread[pos][slot(tag)] {
                    part2.push(Decision {
                        screen: case.id.clone(),
                        pair: Some(tag),
                        chosen,
                        lottery: case.lottery(chosen).expect("offered lottery").clone(),
                    });
                }
            }
        }
        (part1, part2)
    }

    /// All records, subjects in registration order, each in submission order.
    pub fn records(&self) -> Vec<ChoiceRecord> {
        self.subjects.iter().flat_map(|s| s.records.iter().cloned()).collect()
    }

    /// Checks the invariants every reachable state must satisfy.
    pub fn check_invariants(&self) -> Result<(), String> {
        for s in &self.subjects {
            if s.hl.len() > HL_ROWS as usize {
                return Err(format!("{}: too many price-list answers", s.subject_id));
            }
            if let Some(first_risky) = s.hl.iter().position(|&p| p == Pick::Risky) {
                if s.hl[first_risky..].contains(&Pick::Safe) {
                    return Err(format!("{}: switches twice", s.subject_id));
                }
            }
            let answered_spread = s.spread.iter().flatten().filter(|a| a.is_some()).count();
            if answered_spread > 0 && s.hl.len() < HL_ROWS as usize {
                return Err(format!("{}: part 2 before part 1", s.subject_id));
            }
            if s.records.len() != s.hl.len() + answered_spread {
                return Err(format!("{}: record count mismatch", s.subject_id));
            }
            let mut seen = std::collections::BTreeSet::new();
            for r in &s.records {
                if !seen.insert((r.screen.clone(), r.pair)) {
                    return Err(format!("{}: screen {} answered twice", s.subject_id, r.screen));
                }
            }
            if s.payout.is_some() && (s.hl.len() < HL_ROWS as usize || answered_spread < 2 * self.cases.len()) {
                return Err(format!("{}: paid before completing", s.subject_id));
            }
        }
        Ok(())
    }
}
