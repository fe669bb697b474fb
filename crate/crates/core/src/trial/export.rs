use serde::{Deserialize, Serialize};

use super::{Arm, EventLog, TrialConfig, TrialError, TrialState};
use crate::sdat::{Form, TestPhase};

pub const EXPORT_HEADER: [&str; 15] = [
    "participant_id",
    "arm",
    "age",
    "gender",
    "income_level",
    "education_level",
    "pre_scam",
    "pre_notscam",
    "post_scam",
    "post_notscam",
    "fu_scam",
    "fu_notscam",
    "pre_form",
    "post_form",
    "complete",
];

/// One participant in the analysis dataset. Missing scores are empty cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub participant_id: String,
    pub arm: Option<Arm>,
    pub age: u32,
    pub gender: String,
    pub income_level: u8,
    pub education_level: u8,
    pub pre_scam: Option<u8>,
    pub pre_notscam: Option<u8>,
    pub post_scam: Option<u8>,
    pub post_notscam: Option<u8>,
    pub fu_scam: Option<u8>,
    pub fu_notscam: Option<u8>,
    pub pre_form: Option<Form>,
    pub post_form: Option<Form>,
    /// All four phases done.
    pub complete: bool,
}

/// Rows in participant-id order.
pub fn export_rows(state: &TrialState) -> Vec<ExportRecord> {
    state
        .participants
        .values()
        .map(|r| {
            let d = &r.participant.demographics;
            let score = |p: TestPhase| r.sdat.get(&p).map(|s| (s.report.scam_score, s.report.notscam_score));
            let (pre, post, fu) = (score(TestPhase::Pre), score(TestPhase::Post), score(TestPhase::FollowUp21));
            ExportRecord {
                participant_id: r.participant.participant_id.clone(),
                arm: r.arm,
                age: d.age,
                gender: d.gender.clone(),
                income_level: d.income_level,
                education_level: d.education_level,
                pre_scam: pre.map(|s| s.0),
                pre_notscam: pre.map(|s| s.1),
                post_scam: post.map(|s| s.0),
                post_notscam: post.map(|s| s.1),
                fu_scam: fu.map(|s| s.0),
                fu_notscam: fu.map(|s| s.1),
                pre_form: r.forms.map(|f| f.pre),
                post_form: r.forms.map(|f| f.post),
                complete: r.is_complete(),
            }
        })
        .collect()
}

pub fn export_csv(state: &TrialState) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(EXPORT_HEADER).expect("in-memory write");
    for row in export_rows(state) {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Folds the log and renders the export.
pub fn export_dataset(config: TrialConfig, log: &EventLog) -> Result<String, TrialError> {
    Ok(export_csv(&TrialState::fold(config, log)?))
}

pub fn read_export_csv(text: &str) -> Result<Vec<ExportRecord>, TrialError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| TrialError::Csv(e.to_string()))?;
    if header.iter().ne(EXPORT_HEADER) {
        return Err(TrialError::Csv(format!("unexpected header; expected {}", EXPORT_HEADER.join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| TrialError::Csv(format!("row {}: {e}", i + 1))))
        .collect()
}
