//! Sessions backed by one append-only JSONL log each.
//!
//! Every accepted operation is written and flushed to the log before the
//! in-memory state changes and before the caller sees an acknowledgment.
//! Opening a data directory replays every log found there.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use riskprobe_core::analysis::{hl_histogram, pattern_table, summarize, PatternTable};
use riskprobe_core::choice::{PairTag, Pick};
use riskprobe_core::geometry::{pattern_to_region, region_polygon, Region};
use riskprobe_core::lottery::Lottery;
use riskprobe_core::records::{write_records, ChoiceRecord, RecordFormat};
use riskprobe_core::tasks::{derive_u64, hl_row, DisplayPlan, HL_ROWS};
use riskprobe_core::ExactPolygon;

use crate::payout::{draw_payout, PayoutDraw, PayoutError};
use crate::state::{BatterySpec, Event, ProtocolError, SessionState, SessionStatus, Stage};

const LOG_SUFFIX: &str = ".events.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("invalid identifier `{0}`: use 1-64 letters, digits, `-` or `_`")]
    BadId(String),
    #[error("missing or invalid token")]
    Unauthorized,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Payout(#[from] PayoutError),
    #[error("log {path}: line {line}: {reason}")]
    CorruptLog { path: String, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// Source of event timestamps in milliseconds.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Also force each append to stable storage, not just to the OS.
    pub fsync: bool,
    /// Seed for sessions created without one; random when unset.
    pub default_seed: Option<u64>,
    pub clock: Clock,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            fsync: true,
            default_seed: None,
            clock: system_clock(),
        }
    }
}

/// Append-only JSONL file of events.
pub struct EventLog {
    file: File,
    fsync: bool,
}

impl EventLog {
    fn create(path: &Path, fsync: bool) -> Result<Self> {
        let file = OpenOptions::new().append(true).create_new(true).open(path)?;
        Ok(EventLog { file, fsync })
    }

    fn open(path: &Path, fsync: bool) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(EventLog { file, fsync })
    }

    fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Reads every complete event. A final line without its newline is a
    /// write interrupted before acknowledgment and is cut off.
    pub fn read(path: &Path) -> Result<Vec<Event>> {
        let bytes = fs::read(path)?;
        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < bytes.len() {
            OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
        }
        let mut events = Vec::new();
        for (i, line) in BufReader::new(&bytes[..complete]).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|e| ServiceError::CorruptLog {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(events)
    }
}

struct Session {
    state: SessionState,
    log: EventLog,
}

impl Session {
    /// Validates, persists, then applies.
    fn commit(&mut self, event: Event) -> Result<()> {
        self.state.validate(&event)?;
        self.log.append(&event)?;
        self.state.apply(event).expect("validated event applies");
        Ok(())
    }
}

/// Request body of `POST /sessions`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub battery: BatterySpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub experimenter_token: String,
    pub seed: u64,
    pub cases: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterSubject {
    #[serde(default)]
    pub subject_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub subject_id: String,
    pub token: String,
    pub display_seed: u64,
}

/// Request body of the choices endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    /// Price-list row (`"1"`..`"10"`) or case id.
    pub screen: String,
    #[serde(default)]
    pub pair: Option<PairTag>,
    pub chosen: Pick,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub record: ChoiceRecord,
    pub next: Stage,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalizeRequest {
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledLottery {
    pub label: Pick,
    pub lottery: Lottery,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionView {
    pub pair: PairTag,
    /// Buttons in display order.
    pub buttons: [Pick; 2],
    pub answered: Option<Pick>,
}

/// Everything the subject's current screen shows.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum NextScreen {
    PriceList {
        part: u8,
        row: u32,
        rows: u32,
        /// The two options in column order.
        options: Vec<LabeledLottery>,
        answered: Vec<Pick>,
        /// Once a risky option is taken, only risky remains allowed.
        allowed: Vec<Pick>,
    },
    Spread {
        part: u8,
        case_id: String,
        screen: usize,
        screens: usize,
        /// Lotteries in display order.
        lotteries: Vec<LabeledLottery>,
        decisions: Vec<DecisionView>,
    },
    Complete,
    Finalized {
        payout: PayoutDraw,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionView {
    pub region: Region,
    pub pattern: String,
    pub polygon: ExactPolygon,
    /// Spread decisions showing this region's pattern, over all cases.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectProgress {
    pub subject_id: String,
    pub stage: Stage,
    pub answered: usize,
}

/// Aggregate snapshot for the experimenter view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dashboard {
    pub session_id: String,
    pub status: SessionStatus,
    pub subjects: usize,
    pub complete: usize,
    pub finalized: usize,
    pub pattern_table: PatternTable,
    pub regions: Vec<RegionView>,
    pub hl_histogram: [u64; 11],
    pub progress: Vec<SubjectProgress>,
}

pub struct Service {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn check_id(id: &str) -> Result<()> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(ServiceError::BadId(id.to_string()))
    }
}

fn new_token() -> String {
    hex::encode(rand::rng().random::<[u8; 16]>())
}

impl Service {
    /// Opens the data directory, replaying every session log in it.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        fs::create_dir_all(&config.data_dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&config.data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_str().is_some_and(|s| s.ends_with(LOG_SUFFIX)))
            .collect();
        paths.sort();
        for path in paths {
            let events = EventLog::read(&path)?;
            if events.is_empty() {
                continue;
            }
            let state = SessionState::replay(&events).map_err(|e| ServiceError::CorruptLog {
                path: path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })?;
            let log = EventLog::open(&path, config.fsync)?;
            sessions.insert(state.session_id.clone(), Arc::new(Mutex::new(Session { state, log })));
        }
        Ok(Service {
            config,
            sessions: RwLock::new(sessions),
        })
    }

    fn now(&self) -> u64 {
        (self.config.clock)()
    }

    fn log_path(&self, session_id: &str) -> PathBuf {
        self.config.data_dir.join(format!("{session_id}{LOG_SUFFIX}"))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let handle = self.session(id)?;
        let mut guard = handle.lock().expect("session lock");
        f(&mut guard)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Snapshot of a session's state.
    pub fn state(&self, id: &str) -> Result<SessionState> {
        self.with_session(id, |s| Ok(s.state.clone()))
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionInfo> {
        let session_id = match req.session_id {
            Some(id) => id,
            None => format!("session-{}", &new_token()[..12]),
        };
        check_id(&session_id)?;
        let seed = req
            .seed
            .or(self.config.default_seed)
            .unwrap_or_else(|| rand::rng().random());
        let created = Event::SessionCreated {
            session_id: session_id.clone(),
            seed,
            experimenter_token: new_token(),
            battery: req.battery,
            at: self.now(),
        };
        let state = SessionState::from_created(&created)?;

        let mut map = self.sessions.write().expect("session map lock");
        if map.contains_key(&session_id) {
            return Err(ServiceError::DuplicateSession(session_id));
        }
        let mut log = match EventLog::create(&self.log_path(&session_id), self.config.fsync) {
            Err(ServiceError::Io(e)) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(ServiceError::DuplicateSession(session_id))
            }
            other => other?,
        };
        log.append(&created)?;
        let info = SessionInfo {
            session_id: session_id.clone(),
            experimenter_token: state.experimenter_token.clone(),
            seed,
            cases: state.cases.iter().map(|c| c.id.clone()).collect(),
        };
        map.insert(session_id, Arc::new(Mutex::new(Session { state, log })));
        Ok(info)
    }

    fn check_experimenter(state: &SessionState, token: &str) -> Result<()> {
        if !token.is_empty() && token == state.experimenter_token {
            Ok(())
        } else {
            Err(ServiceError::Unauthorized)
        }
    }

    fn check_subject(state: &SessionState, subject_id: &str, token: &str) -> Result<()> {
        let s = state
            .subject(subject_id)
            .ok_or_else(|| ProtocolError::UnknownSubject(subject_id.to_string()))?;
        if !token.is_empty() && token == s.token {
            Ok(())
        } else {
            Err(ServiceError::Unauthorized)
        }
    }

    pub fn register_subject(&self, session_id: &str, token: &str, req: RegisterSubject) -> Result<Registration> {
        let at = self.now();
        self.with_session(session_id, |s| {
            Self::check_experimenter(&s.state, token)?;
            let subject_id = match req.subject_id {
                Some(id) => id,
                None => format!("S{:03}", s.state.subjects.len() + 1),
            };
            check_id(&subject_id)?;
            let token = new_token();
            s.commit(Event::SubjectRegistered {
                subject_id: subject_id.clone(),
                token: token.clone(),
                at,
            })?;
            let plan = &s.state.subject(&subject_id).expect("just registered").plan;
            Ok(Registration {
                subject_id,
                token,
                display_seed: plan.display_seed,
            })
        })
    }

    pub fn plan(&self, session_id: &str, subject_id: &str, token: &str) -> Result<DisplayPlan> {
        self.with_session(session_id, |s| {
            Self::check_subject(&s.state, subject_id, token)?;
            Ok(s.state.subject(subject_id).expect("checked").plan.clone())
        })
    }

    pub fn next(&self, session_id: &str, subject_id: &str, token: &str) -> Result<NextScreen> {
        self.with_session(session_id, |s| {
            Self::check_subject(&s.state, subject_id, token)?;
            Ok(next_screen(&s.state, subject_id))
        })
    }

    pub fn submit(&self, session_id: &str, subject_id: &str, token: &str, sub: Submission) -> Result<Ack> {
        let at = self.now();
        self.with_session(session_id, |s| {
            Self::check_subject(&s.state, subject_id, token)?;
            let subject = s.state.subject(subject_id).expect("checked");
            let record = ChoiceRecord {
                session_id: session_id.to_string(),
                subject_id: subject_id.to_string(),
                part: if sub.pair.is_some() { 2 } else { 1 },
                screen: sub.screen,
                pair: sub.pair,
                chosen: sub.chosen,
                display_seed: subject.plan.display_seed,
                timestamp: at,
            };
            s.commit(Event::ChoiceSubmitted { record: record.clone() })?;
            let next = s.state.subject(subject_id).expect("checked").stage();
            Ok(Ack { record, next })
        })
    }

    /// Draws the payment for a complete subject. Either the subject's or the
    /// experimenter's token is accepted. Asking again returns the stored
    /// draw.
    pub fn finalize(&self, session_id: &str, subject_id: &str, token: &str, req: FinalizeRequest) -> Result<PayoutDraw> {
        let at = self.now();
        self.with_session(session_id, |s| {
            if Self::check_experimenter(&s.state, token).is_err() {
                Self::check_subject(&s.state, subject_id, token)?;
            }
            let subject = s
                .state
                .subject(subject_id)
                .ok_or_else(|| ProtocolError::UnknownSubject(subject_id.to_string()))?;
            if let Some(done) = &subject.payout {
                return match req.rng_seed {
                    Some(seed) if seed != done.rng_seed => Err(ProtocolError::AlreadyFinalized.into()),
                    _ => Ok(done.clone()),
                };
            }
            if !subject.is_complete() {
                return Err(ProtocolError::Incomplete.into());
            }
            let rng_seed = req
                .rng_seed
                .unwrap_or_else(|| derive_u64(&[b"payout", &s.state.seed.to_le_bytes(), subject_id.as_bytes()]));
            let (p1, p2) = s.state.decisions(subject);
            let draw = draw_payout(subject_id, rng_seed, &p1, &p2)?;
            s.commit(Event::SubjectFinalized { draw: draw.clone(), at })?;
            Ok(draw)
        })
    }

    pub fn close(&self, session_id: &str, token: &str) -> Result<()> {
        let at = self.now();
        self.with_session(session_id, |s| {
            Self::check_experimenter(&s.state, token)?;
            s.commit(Event::SessionClosed { at })
        })
    }

    /// All records in the given encoding. With `complete_only`, subjects who
    /// have not finished both parts are left out.
    pub fn export(&self, session_id: &str, token: &str, format: RecordFormat, complete_only: bool) -> Result<Vec<u8>> {
        self.with_session(session_id, |s| {
            Self::check_experimenter(&s.state, token)?;
            let records: Vec<ChoiceRecord> = s
                .state
                .subjects
                .iter()
                .filter(|sub| !complete_only || sub.is_complete())
                .flat_map(|sub| sub.records.iter().cloned())
                .collect();
            let mut out = Vec::new();
            write_records(&mut out, &records, format).map_err(|e| std::io::Error::other(e.to_string()))?;
            Ok(out)
        })
    }

    pub fn dashboard(&self, session_id: &str, token: &str) -> Result<Dashboard> {
        self.with_session(session_id, |s| {
            Self::check_experimenter(&s.state, token)?;
            Ok(dashboard(&s.state))
        })
    }
}

fn next_screen(state: &SessionState, subject_id: &str) -> NextScreen {
    let s = state.subject(subject_id).expect("checked");
    match s.stage() {
        Stage::PriceList { row } => {
            let r = hl_row(row);
            let switched = s.hl.contains(&Pick::Risky);
            NextScreen::PriceList {
                part: 1,
                row,
                rows: HL_ROWS,
                options: s
                    .plan
                    .hl
                    .columns
                    .iter()
                    .map(|&label| LabeledLottery {
                        label,
                        lottery: r.lottery(label).expect("safe or risky").clone(),
                    })
                    .collect(),
                answered: s.hl.clone(),
                allowed: if switched {
                    vec![Pick::Risky]
                } else {
                    s.plan.hl.columns.to_vec()
                },
            }
        }
        Stage::Spread { case_id, .. } => {
            let pos = s.plan.case_order.iter().position(|c| *c == case_id).expect("planned case");
            let layout = &s.plan.screens[pos];
            let case = state.case(&case_id).expect("battery case");
            NextScreen::Spread {
                part: 2,
                case_id: case_id.clone(),
                screen: pos + 1,
                screens: s.plan.screens.len(),
                lotteries: layout
                    .lotteries
                    .iter()
                    .map(|&label| LabeledLottery {
                        label,
                        lottery: case.lottery(label).expect("offered").clone(),
                    })
                    .collect(),
                decisions: layout
                    .decisions
                    .iter()
                    .zip(&layout.buttons)
                    .map(|(&pair, &buttons)| DecisionView {
                        pair,
                        buttons,
                        answered: s.spread[pos][match pair {
                            PairTag::AB => 0,
                            PairTag::AC => 1,
                        }],
                    })
                    .collect(),
            }
        }
        Stage::Complete => NextScreen::Complete,
        Stage::Finalized => NextScreen::Finalized {
            payout: s.payout.clone().expect("finalized"),
        },
    }
}

fn dashboard(state: &SessionState) -> Dashboard {
    let records = state.records();
    let summaries = summarize(&records);
    let mut table = pattern_table(&summaries);
    if table.cases.is_empty() {
        table.cases = state.cases.iter().map(|c| c.id.clone()).collect();
        table.counts = vec![[0; 4]; table.cases.len()];
    }
    let pooled = table.pooled();
    let regions = riskprobe_core::choice::ChoicePattern::ALL
        .iter()
        .map(|&p| {
            let region = pattern_to_region(p);
            RegionView {
                region,
                pattern: p.label().to_string(),
                polygon: region_polygon(region),
                count: pooled[p.index()],
            }
        })
        .collect();
    Dashboard {
        session_id: state.session_id.clone(),
        status: state.status,
        subjects: state.subjects.len(),
        complete: state.subjects.iter().filter(|s| s.is_complete()).count(),
        finalized: state.subjects.iter().filter(|s| s.payout.is_some()).count(),
        pattern_table: table,
        regions,
        hl_histogram: hl_histogram(&summaries),
        progress: state
            .subjects
            .iter()
            .map(|s| SubjectProgress {
                subject_id: s.subject_id.clone(),
                stage: s.stage(),
                answered: s.records.len(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn service(dir: &Path) -> Service {
        let mut cfg = ServiceConfig::new(dir);
        cfg.fsync = false;
        cfg.clock = Arc::new(|| 1_000);
        Service::open(cfg).unwrap()
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let svc = service(dir.path());
        let info = svc.create_session(CreateSession::default()).unwrap();
        svc.register_subject(&info.session_id, &info.experimenter_token, RegisterSubject::default())
            .unwrap();
        drop(svc);
        let path = dir.path().join(format!("{}{LOG_SUFFIX}", info.session_id));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"event":"session_closed","#).unwrap();
        drop(f);
        let svc = service(dir.path());
        let st = svc.state(&info.session_id).unwrap();
        assert_eq!(st.status, SessionStatus::Open);
        assert_eq!(st.subjects.len(), 1);
        svc.close(&info.session_id, &info.experimenter_token).unwrap();
        drop(svc);
        assert_eq!(service(dir.path()).state(&info.session_id).unwrap().status, SessionStatus::Closed);
    }

    #[test]
    fn ids_are_restricted() {
        let dir = tempfile::tempdir().unwrap();
        let svc = service(dir.path());
        let bad = CreateSession {
            session_id: Some("../x".into()),
            ..Default::default()
        };
        assert!(matches!(svc.create_session(bad), Err(ServiceError::BadId(_))));
    }
}
