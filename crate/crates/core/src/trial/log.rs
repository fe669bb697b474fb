use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Arm, Demographics, FormOrder, TrialError, TrialPhase};
use crate::sdat::{Form, SdatResponse, SdatScoreReport};

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub participant_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// A scored discernment test attached to a completed test phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdatSubmission {
    pub form: Form,
    pub report: SdatScoreReport,
    pub responses: Vec<SdatResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Enrolled {
        demographics: Demographics,
    },
    ArmAssigned {
        arm: Arm,
        block: u64,
    },
    FormsAssigned {
        order: FormOrder,
    },
    PhaseCompleted {
        phase: TrialPhase,
        form_used: Option<Form>,
        started_at: DateTime<Utc>,
        completed_at: DateTime<Utc>,
        payload_ref: Option<String>,
        sdat: Option<SdatSubmission>,
    },
    SessionStarted {
        session_id: String,
        scenario_id: String,
    },
    ChoiceMade {
        session_id: String,
        choice_id: String,
    },
    QuizGraded {
        session_id: String,
        answers: Vec<usize>,
        score: u32,
    },
    CredentialIssued {
        token_sha256: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Enrolled { .. } => "enrolled",
            EventKind::ArmAssigned { .. } => "arm_assigned",
            EventKind::FormsAssigned { .. } => "forms_assigned",
            EventKind::PhaseCompleted { .. } => "phase_completed",
            EventKind::SessionStarted { .. } => "session_started",
            EventKind::ChoiceMade { .. } => "choice_made",
            EventKind::QuizGraded { .. } => "quiz_graded",
            EventKind::CredentialIssued { .. } => "credential_issued",
        }
    }
}

/// Append-only, strictly sequenced list of events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a log from already-sequenced events, checking the sequence.
    pub fn from_events(events: Vec<Event>) -> Result<Self, TrialError> {
        let mut log = Self::new();
        for e in events {
            log.push(e)?;
        }
        Ok(log)
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    pub fn push(&mut self, e: Event) -> Result<(), TrialError> {
        if let Some(last) = self.events.last() {
            if e.seq <= last.seq {
                return Err(TrialError::SequenceGap { expected_after: last.seq, got: e.seq });
            }
        }
        self.events.push(e);
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| event_line(e) + "\n").collect()
    }
}

pub fn event_line(e: &Event) -> String {
    serde_json::to_string(e).expect("events serialize")
}

/// Result of reading a log file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub log: EventLog,
    /// A final line without a newline that failed to parse (an interrupted
    /// write) was dropped.
    pub torn_tail: bool,
}

pub fn parse_jsonl(text: &str) -> Result<ParsedLog, TrialError> {
    let mut log = EventLog::new();
    let mut torn_tail = false;
    let ends_clean = text.is_empty() || text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(line) {
            Ok(e) => log.push(e)?,
            Err(_) if i + 1 == lines.len() && !ends_clean => torn_tail = true,
            Err(err) => return Err(TrialError::LogParse { line: i + 1, message: err.to_string() }),
        }
    }
    Ok(ParsedLog { log, torn_tail })
}
