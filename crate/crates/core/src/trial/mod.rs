//! The four-part experiment: enrollment, permuted-block randomization,
//! counterbalanced test forms, phase tracking with a 21-day follow-up window,
//! an append-only event log from which every piece of state is rebuilt, and
//! the per-participant analysis export.

mod export;
mod log;
mod randomize;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_csv, export_dataset, export_rows, read_export_csv, ExportRecord, EXPORT_HEADER};
pub use log::{event_line, parse_jsonl, Event, EventKind, EventLog, ParsedLog, SdatSubmission};
pub use randomize::{BlockRandomizer, FormOrder, FormPolicy, DEFAULT_BLOCK_SIZE};

use crate::sdat::{Form, TestPhase};

pub const MIN_AGE: u32 = 18;
pub const MAX_AGE: u32 = 100;
/// Income and education are ordinal levels 1..=LEVELS.
pub const LEVELS: u8 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error("invalid demographics: {0}")]
    InvalidDemographics(String),
    #[error("invalid trial config: {0}")]
    InvalidConfig(String),
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
    #[error("participant `{0}` is already enrolled")]
    DuplicateParticipant(String),
    #[error("participant `{0}` already has an assignment")]
    AlreadyAssigned(String),
    #[error("participant `{0}` has not been randomized and assigned forms")]
    NotAssigned(String),
    #[error("phase {got} out of order (next expected: {expected})")]
    OutOfOrder { expected: String, got: TrialPhase },
    #[error("follow-up opens at {eligible_at}")]
    FollowupTooEarly { eligible_at: DateTime<Utc> },
    #[error("follow-up window closed at {closed_at}")]
    FollowupWindowClosed { closed_at: DateTime<Utc> },
    #[error("phase {phase} must use form {expected}, got {got}")]
    WrongForm { phase: TrialPhase, expected: Form, got: Form },
    #[error("phase {0} requires a scored discernment test")]
    MissingSdat(TrialPhase),
    #[error("phase {0} does not take a discernment test")]
    UnexpectedSdat(TrialPhase),
    #[error("invalid phase timestamps: {0}")]
    InvalidTimes(String),
    #[error("event sequence must increase (last {expected_after}, got {got})")]
    SequenceGap { expected_after: u64, got: u64 },
    #[error("event log line {line}: {message}")]
    LogParse { line: usize, message: String },
    #[error("export csv: {0}")]
    Csv(String),
    #[error("inconsistent event: {0}")]
    InconsistentEvent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    ShieldUp,
    GeneralAwareness,
    ChromeDino,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::ShieldUp, Arm::GeneralAwareness, Arm::ChromeDino];

    pub fn planned_duration_minutes(self) -> u32 {
        match self {
            Arm::ShieldUp => 15,
            Arm::GeneralAwareness => 10,
            Arm::ChromeDino => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::ShieldUp => "ShieldUp",
            Arm::GeneralAwareness => "GeneralAwareness",
            Arm::ChromeDino => "ChromeDino",
        }
    }

    /// URL path segment.
    pub fn slug(self) -> &'static str {
        match self {
            Arm::ShieldUp => "shieldup",
            Arm::GeneralAwareness => "general-awareness",
            Arm::ChromeDino => "chrome-dino",
        }
    }

    pub fn from_slug(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.slug() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .or_else(|| Arm::from_slug(s))
            .ok_or_else(|| format!("unknown arm `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrialPhase {
    PreTest,
    Intervention,
    PostTest,
    FollowUp21,
}

impl TrialPhase {
    pub const ORDER: [TrialPhase; 4] =
        [TrialPhase::PreTest, TrialPhase::Intervention, TrialPhase::PostTest, TrialPhase::FollowUp21];

    pub fn test_phase(self) -> Option<TestPhase> {
        match self {
            TrialPhase::PreTest => Some(TestPhase::Pre),
            TrialPhase::Intervention => None,
            TrialPhase::PostTest => Some(TestPhase::Post),
            TrialPhase::FollowUp21 => Some(TestPhase::FollowUp21),
        }
    }

    pub fn from_test_phase(p: TestPhase) -> TrialPhase {
        match p {
            TestPhase::Pre => TrialPhase::PreTest,
            TestPhase::Post => TrialPhase::PostTest,
            TestPhase::FollowUp21 => TrialPhase::FollowUp21,
        }
    }
}

impl fmt::Display for TrialPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: u32,
    pub gender: String,
    pub income_level: u8,
    pub education_level: u8,
}

impl Demographics {
    pub fn validate(&self) -> Result<(), TrialError> {
        let bad = |m: String| Err(TrialError::InvalidDemographics(m));
        if !(MIN_AGE..=MAX_AGE).contains(&self.age) {
            return bad(format!("age {} outside {MIN_AGE}..={MAX_AGE}", self.age));
        }
        if self.gender.trim().is_empty() || self.gender.contains([',', '\n', '"']) {
            return bad("gender must be a non-empty label without commas or quotes".into());
        }
        for (name, v) in [("income_level", self.income_level), ("education_level", self.education_level)] {
            if !(1..=LEVELS).contains(&v) {
                return bad(format!("{name} {v} outside 1..={LEVELS}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: String,
    pub demographics: Demographics,
    pub enrolled_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub participant_id: String,
    pub phase: TrialPhase,
    pub form_used: Option<Form>,
    pub started_at: DateTime<Utc>,
    pub completed_at: DateTime<Utc>,
    pub payload_ref: Option<String>,
}

/// What a caller supplies when a participant finishes a phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCompletion {
    pub phase: TrialPhase,
    pub started_at: DateTime<Utc>,
    pub completed_at: DateTime<Utc>,
    pub payload_ref: Option<String>,
    pub sdat: Option<SdatSubmission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub seed: u64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default)]
    pub form_policy: FormPolicy,
    #[serde(default = "default_followup_min")]
    pub followup_min_days: i64,
    #[serde(default = "default_followup_close")]
    pub followup_close_days: i64,
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}
fn default_followup_min() -> i64 {
    21
}
fn default_followup_close() -> i64 {
    35
}

impl TrialConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            block_size: DEFAULT_BLOCK_SIZE,
            form_policy: FormPolicy::default(),
            followup_min_days: default_followup_min(),
            followup_close_days: default_followup_close(),
        }
    }

    pub fn randomizer(&self) -> Result<BlockRandomizer, TrialError> {
        BlockRandomizer::new(self.seed, self.block_size).ok_or_else(|| {
            TrialError::InvalidConfig(format!("block size {} is not a positive multiple of 3", self.block_size))
        })
    }

    pub fn validate(&self) -> Result<(), TrialError> {
        self.randomizer()?;
        if self.followup_min_days < 0 || self.followup_close_days < self.followup_min_days {
            return Err(TrialError::InvalidConfig("follow-up window must satisfy 0 <= min <= close".into()));
        }
        Ok(())
    }
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant: Participant,
    pub arm: Option<Arm>,
    pub forms: Option<FormOrder>,
    pub phases: Vec<PhaseRecord>,
    pub sdat: BTreeMap<TestPhase, SdatSubmission>,
}

impl ParticipantRecord {
    /// The next phase to complete, or `None` once all four are done.
    pub fn next_phase(&self) -> Option<TrialPhase> {
        TrialPhase::ORDER.get(self.phases.len()).copied()
    }

    pub fn phase(&self, phase: TrialPhase) -> Option<&PhaseRecord> {
        self.phases.iter().find(|r| r.phase == phase)
    }

    pub fn is_complete(&self) -> bool {
        self.next_phase().is_none()
    }

    /// Form required for a test phase.
    pub fn form_for(&self, phase: TestPhase) -> Option<Form> {
        let f = self.forms?;
        Some(match phase {
            TestPhase::Pre => f.pre,
            TestPhase::Post => f.post,
            TestPhase::FollowUp21 => f.followup(),
        })
    }
}

/// Everything derivable from the event log. Serialized as the snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub config: TrialConfig,
    pub participants: BTreeMap<String, ParticipantRecord>,
    pub enrolled: u64,
    pub randomized: u64,
    pub per_arm: BTreeMap<Arm, u64>,
    pub last_seq: u64,
}

pub fn participant_id(ordinal: u64) -> String {
    format!("P{ordinal:06}")
}

impl TrialState {
    pub fn new(config: TrialConfig) -> Self {
        Self {
            config,
            participants: BTreeMap::new(),
            enrolled: 0,
            randomized: 0,
            per_arm: Arm::ALL.into_iter().map(|a| (a, 0)).collect(),
            last_seq: 0,
        }
    }

    pub fn participant(&self, id: &str) -> Result<&ParticipantRecord, TrialError> {
        self.participants.get(id).ok_or_else(|| TrialError::UnknownParticipant(id.to_string()))
    }

    fn participant_mut(&mut self, id: &str) -> Result<&mut ParticipantRecord, TrialError> {
        self.participants.get_mut(id).ok_or_else(|| TrialError::UnknownParticipant(id.to_string()))
    }

    /// Checks an event against the current state and folds it in. Nothing is
    /// changed when an error is returned.
    pub fn apply(&mut self, e: &Event) -> Result<(), TrialError> {
        if e.seq <= self.last_seq {
            return Err(TrialError::SequenceGap { expected_after: self.last_seq, got: e.seq });
        }
        let pid = e.participant_id.as_str();
        match &e.kind {
            EventKind::Enrolled { demographics } => {
                demographics.validate()?;
                if self.participants.contains_key(pid) {
                    return Err(TrialError::DuplicateParticipant(pid.to_string()));
                }
                let expected = participant_id(self.enrolled + 1);
                if pid != expected {
                    return Err(TrialError::InconsistentEvent(format!("expected enrollment of {expected}, got {pid}")));
                }
                self.participants.insert(
                    pid.to_string(),
                    ParticipantRecord {
                        participant: Participant {
                            participant_id: pid.to_string(),
                            demographics: demographics.clone(),
                            enrolled_at: e.ts,
                        },
                        arm: None,
                        forms: None,
                        phases: Vec::new(),
                        sdat: BTreeMap::new(),
                    },
                );
                self.enrolled += 1;
            }
            EventKind::ArmAssigned { arm, block } => {
                let expected_block = self.randomized / self.config.block_size as u64;
                let rec = self.participant_mut(pid)?;
                if rec.arm.is_some() {
                    return Err(TrialError::AlreadyAssigned(pid.to_string()));
                }
                if *block != expected_block {
                    return Err(TrialError::InconsistentEvent(format!(
                        "arm drawn from block {block}, expected {expected_block}"
                    )));
                }
                rec.arm = Some(*arm);
                self.randomized += 1;
            }
            EventKind::FormsAssigned { order } => {
                let rec = self.participants.get(pid).ok_or_else(|| TrialError::UnknownParticipant(pid.to_string()))?;
                let arm = rec.arm.ok_or_else(|| TrialError::NotAssigned(pid.to_string()))?;
                if rec.forms.is_some() {
                    return Err(TrialError::AlreadyAssigned(pid.to_string()));
                }
                let count = self.per_arm[&arm];
                self.participant_mut(pid)?.forms = Some(*order);
                *self.per_arm.get_mut(&arm).expect("all arms present") = count + 1;
            }
            EventKind::PhaseCompleted { phase, form_used, started_at, completed_at, payload_ref, sdat } => {
                let rec = self.participant(pid)?;
                self.check_phase(rec, e.ts, *phase, *form_used, *started_at, *completed_at, sdat.as_ref())?;
                let rec = self.participant_mut(pid)?;
                rec.phases.push(PhaseRecord {
                    participant_id: pid.to_string(),
                    phase: *phase,
                    form_used: *form_used,
                    started_at: *started_at,
                    completed_at: *completed_at,
                    payload_ref: payload_ref.clone(),
                });
                if let (Some(tp), Some(s)) = (phase.test_phase(), sdat) {
                    rec.sdat.insert(tp, s.clone());
                }
            }
            EventKind::SessionStarted { .. }
            | EventKind::ChoiceMade { .. }
            | EventKind::QuizGraded { .. }
            | EventKind::CredentialIssued { .. } => {
                self.participant(pid)?;
            }
        }
        self.last_seq = e.seq;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn check_phase(
        &self,
        rec: &ParticipantRecord,
        now: DateTime<Utc>,
        phase: TrialPhase,
        form_used: Option<Form>,
        started_at: DateTime<Utc>,
        completed_at: DateTime<Utc>,
        sdat: Option<&SdatSubmission>,
    ) -> Result<(), TrialError> {
        let pid = &rec.participant.participant_id;
        if rec.forms.is_none() {
            return Err(TrialError::NotAssigned(pid.clone()));
        }
        let expected = rec.next_phase();
        if expected != Some(phase) {
            return Err(TrialError::OutOfOrder {
                expected: expected.map_or_else(|| "none".to_string(), |p| p.to_string()),
                got: phase,
            });
        }
        if started_at > completed_at || completed_at > now {
            return Err(TrialError::InvalidTimes("need started_at <= completed_at <= now".into()));
        }
        let previous_end = rec.phases.last().map_or(rec.participant.enrolled_at, |p| p.completed_at);
        if started_at < previous_end {
            return Err(TrialError::InvalidTimes(format!("{phase} starts before the previous step ended")));
        }
        if phase == TrialPhase::FollowUp21 {
            let post_done = rec.phase(TrialPhase::PostTest).expect("post-test precedes follow-up").completed_at;
            let eligible_at = post_done + Duration::days(self.config.followup_min_days);
            let closed_at = post_done + Duration::days(self.config.followup_close_days);
            if now < eligible_at {
                return Err(TrialError::FollowupTooEarly { eligible_at });
            }
            if now > closed_at {
                return Err(TrialError::FollowupWindowClosed { closed_at });
            }
        }
        match (phase.test_phase(), sdat) {
            (Some(tp), Some(s)) => {
                let expected = rec.form_for(tp).expect("forms assigned");
                if s.form != expected || form_used != Some(s.form) {
                    return Err(TrialError::WrongForm { phase, expected, got: s.form });
                }
            }
            (Some(_), None) => return Err(TrialError::MissingSdat(phase)),
            (None, Some(_)) => return Err(TrialError::UnexpectedSdat(phase)),
            (None, None) => {
                if form_used.is_some() {
                    return Err(TrialError::UnexpectedSdat(phase));
                }
            }
        }
        Ok(())
    }

    /// Rebuilds state from a log.
    pub fn fold(config: TrialConfig, log: &EventLog) -> Result<Self, TrialError> {
        let mut s = Self::new(config);
        for e in log.events() {
            s.apply(e)?;
        }
        Ok(s)
    }

    /// Resumes from a snapshot, applying only events newer than it.
    pub fn resume(mut snapshot: TrialState, log: &EventLog) -> Result<Self, TrialError> {
        let from = snapshot.last_seq;
        for e in log.events().iter().filter(|e| e.seq > from) {
            snapshot.apply(e)?;
        }
        Ok(snapshot)
    }

    pub fn to_snapshot_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self, TrialError> {
        serde_json::from_str(text).map_err(|e| TrialError::LogParse { line: e.line(), message: e.to_string() })
    }
}

/// Live trial: state plus the log it was built from. Every mutation goes
/// through `append`, which validates against the state before logging.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    state: TrialState,
    log: EventLog,
    randomizer: BlockRandomizer,
}

impl Trial {
    pub fn new(config: TrialConfig) -> Result<Self, TrialError> {
        config.validate()?;
        let randomizer = config.randomizer()?;
        Ok(Self { state: TrialState::new(config), log: EventLog::new(), randomizer })
    }

    pub fn replay(config: TrialConfig, log: EventLog) -> Result<Self, TrialError> {
        let mut t = Self::new(config)?;
        t.state = TrialState::fold(t.state.config.clone(), &log)?;
        t.log = log;
        Ok(t)
    }

    /// Restores from a snapshot plus the full log.
    pub fn resume(snapshot: TrialState, log: EventLog) -> Result<Self, TrialError> {
        let randomizer = snapshot.config.randomizer()?;
        let state = TrialState::resume(snapshot, &log)?;
        Ok(Self { state, log, randomizer })
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn config(&self) -> &TrialConfig {
        &self.state.config
    }

    pub fn append(&mut self, participant_id: &str, kind: EventKind, now: DateTime<Utc>) -> Result<&Event, TrialError> {
        let e = Event { seq: self.log.next_seq(), ts: now, participant_id: participant_id.to_string(), kind };
        self.state.apply(&e)?;
        self.log.push(e)?;
        Ok(self.log.events().last().expect("just pushed"))
    }

    pub fn enroll(&mut self, demographics: Demographics, now: DateTime<Utc>) -> Result<Participant, TrialError> {
        let pid = participant_id(self.state.enrolled + 1);
        self.append(&pid, EventKind::Enrolled { demographics }, now)?;
        Ok(self.state.participants[&pid].participant.clone())
    }

    pub fn randomize(&mut self, participant_id: &str, now: DateTime<Utc>) -> Result<Arm, TrialError> {
        let i = self.state.randomized;
        let arm = self.randomizer.arm_at(i);
        let block = i / self.randomizer.block_size as u64;
        self.append(participant_id, EventKind::ArmAssigned { arm, block }, now)?;
        Ok(arm)
    }

    pub fn assign_form_order(&mut self, participant_id: &str, now: DateTime<Utc>) -> Result<FormOrder, TrialError> {
        let rec = self.state.participant(participant_id)?;
        let arm = rec.arm.ok_or_else(|| TrialError::NotAssigned(participant_id.to_string()))?;
        let order = FormOrder::for_position(self.state.config.form_policy, self.state.per_arm[&arm]);
        self.append(participant_id, EventKind::FormsAssigned { order }, now)?;
        Ok(order)
    }

    pub fn complete_phase(
        &mut self,
        participant_id: &str,
        c: PhaseCompletion,
        now: DateTime<Utc>,
    ) -> Result<PhaseRecord, TrialError> {
        let kind = EventKind::PhaseCompleted {
            phase: c.phase,
            form_used: c.sdat.as_ref().map(|s| s.form),
            started_at: c.started_at,
            completed_at: c.completed_at,
            payload_ref: c.payload_ref,
            sdat: c.sdat,
        };
        self.append(participant_id, kind, now)?;
        Ok(self.state.participants[participant_id].phases.last().expect("phase recorded").clone())
    }
}
