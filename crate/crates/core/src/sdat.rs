//! The ten-item scam discernment test (five scam and five genuine
//! scenarios) with parallel forms A and B.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{ContentError, ScenarioGraph};
use crate::psychometrics::ResponseMatrix;

pub const FORM_LEN: usize = 10;
pub const SCAM_ITEMS: usize = 5;
pub const SCALE_MAX: u8 = 5;
pub const DEFAULT_PARITY_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdatError {
    #[error("need at least {needed} items for form {form}, found {found}")]
    InsufficientItems { form: Form, needed: usize, found: usize },
    #[error("form {form} needs 5 scam and 5 non-scam items, found {scam} scam and {not_scam} non-scam")]
    SplitViolation { form: Form, scam: usize, not_scam: usize },
    #[error("no response for item `{0}`")]
    MissingResponse(String),
    #[error("more than one response for item `{0}`")]
    DuplicateResponse(String),
    #[error("response for unknown item `{0}`")]
    UnknownItem(String),
    #[error("item `{item_id}`: {field} must be between 1 and 5")]
    InvalidResponse { item_id: String, field: &'static str },
    #[error("forms do not share the same storylines")]
    StorylineMismatch,
    #[error("pilot data: {0}")]
    Pilot(String),
    #[error("item bank: {0}")]
    ItemBank(String),
    #[error("item `{item_id}` scenario: {source}")]
    Scenario { item_id: String, source: ContentError },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Form {
    A,
    B,
}

impl Form {
    pub fn other(self) -> Form {
        match self {
            Form::A => Form::B,
            Form::B => Form::A,
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::A => "A",
            Form::B => "B",
        })
    }
}

impl FromStr for Form {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "A" | "a" => Ok(Form::A),
            "B" | "b" => Ok(Form::B),
            other => Err(format!("unknown form `{other}`")),
        }
    }
}

/// When a test is administered within the trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TestPhase {
    #[serde(rename = "pre")]
    Pre,
    #[serde(rename = "post")]
    Post,
    #[serde(rename = "followup21")]
    FollowUp21,
}

impl TestPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            TestPhase::Pre => "pre",
            TestPhase::Post => "post",
            TestPhase::FollowUp21 => "followup21",
        }
    }
}

impl FromStr for TestPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pre" => Ok(TestPhase::Pre),
            "post" => Ok(TestPhase::Post),
            "followup21" => Ok(TestPhase::FollowUp21),
            other => Err(format!("unknown test phase `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdatItem {
    pub item_id: String,
    pub storyline_id: String,
    pub form: Form,
    pub is_scam: bool,
    pub scale_max: u8,
    pub scenario: ScenarioGraph,
}

/// Parses an item bank (JSON array of items with embedded scenarios) and
/// checks that A/B variants of a storyline agree on scam status and type.
pub fn parse_item_bank(doc: &str) -> Result<Vec<SdatItem>, SdatError> {
    let values: Vec<serde_json::Value> = serde_json::from_str(doc).map_err(|e| SdatError::ItemBank(e.to_string()))?;
    let mut items = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let id = v.get("item_id").and_then(|x| x.as_str()).unwrap_or("?").to_string();
        let item: SdatItem = serde_json::from_value(v).map_err(|e| {
            // scenario validation failures surface through serde as custom errors
            SdatError::ItemBank(format!("item #{i} (`{id}`): {e}"))
        })?;
        items.push(item);
    }
    validate_item_bank(&items)?;
    Ok(items)
}

pub fn validate_item_bank(items: &[SdatItem]) -> Result<(), SdatError> {
    let mut ids = BTreeSet::new();
    let mut storylines: BTreeMap<&str, (bool, crate::content::ScamType)> = BTreeMap::new();
    for item in items {
        if !ids.insert(item.item_id.as_str()) {
            return Err(SdatError::ItemBank(format!("duplicate item id `{}`", item.item_id)));
        }
        if item.scale_max != SCALE_MAX {
            return Err(SdatError::ItemBank(format!("item `{}`: scale_max must be 5", item.item_id)));
        }
        if item.scenario.is_scam != item.is_scam {
            return Err(SdatError::ItemBank(format!("item `{}`: scenario is_scam disagrees", item.item_id)));
        }
        item.scenario.validate().map_err(|source| SdatError::Scenario { item_id: item.item_id.clone(), source })?;
        let key = (item.is_scam, item.scenario.scam_type);
        match storylines.get(item.storyline_id.as_str()) {
            Some(prev) if *prev != key => {
                return Err(SdatError::ItemBank(format!(
                    "storyline `{}`: variants disagree on scam status or type",
                    item.storyline_id
                )))
            }
            Some(_) => {}
            None => {
                storylines.insert(&item.storyline_id, key);
            }
        }
    }
    Ok(())
}

/// A ten-item form in canonical (storyline id) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdatForm {
    pub form: Form,
    pub items: Vec<SdatItem>,
}

impl SdatForm {
    pub fn item(&self, item_id: &str) -> Option<&SdatItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn storylines(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.storyline_id.as_str()).collect()
    }
}

/// Builds the form: the first five scam and five non-scam items of the
/// requested form in (storyline id, item id) order.
pub fn assemble_form(items: &[SdatItem], form: Form) -> Result<SdatForm, SdatError> {
    let mut candidates: Vec<&SdatItem> = items.iter().filter(|i| i.form == form).collect();
    if candidates.len() < FORM_LEN {
        return Err(SdatError::InsufficientItems { form, needed: FORM_LEN, found: candidates.len() });
    }
    candidates.sort_by(|a, b| (&a.storyline_id, &a.item_id).cmp(&(&b.storyline_id, &b.item_id)));
    let scam: Vec<&SdatItem> = candidates.iter().copied().filter(|i| i.is_scam).collect();
    let not_scam: Vec<&SdatItem> = candidates.iter().copied().filter(|i| !i.is_scam).collect();
    if scam.len() < SCAM_ITEMS || not_scam.len() < FORM_LEN - SCAM_ITEMS {
        return Err(SdatError::SplitViolation { form, scam: scam.len(), not_scam: not_scam.len() });
    }
    let mut chosen: Vec<SdatItem> =
        scam[..SCAM_ITEMS].iter().chain(&not_scam[..FORM_LEN - SCAM_ITEMS]).map(|i| (*i).clone()).collect();
    chosen.sort_by(|a, b| (&a.storyline_id, &a.item_id).cmp(&(&b.storyline_id, &b.item_id)));
    Ok(SdatForm { form, items: chosen })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Discernment {
    Scam,
    NotScam,
}

impl Discernment {
    pub fn is_correct(self, is_scam: bool) -> bool {
        (self == Discernment::Scam) == is_scam
    }
}

/// Answers to the three questions asked after an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdatResponse {
    pub item_id: String,
    /// Likelihood of continuing to engage, 1..=5.
    pub compliance: u8,
    pub discernment: Discernment,
    /// 1..=5.
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdatScoreReport {
    /// Scam items labelled Scam (0..=5).
    pub scam_score: u8,
    /// Genuine items labelled NotScam (0..=5).
    pub notscam_score: u8,
    pub mean_compliance_scam: f64,
    pub mean_compliance_notscam: f64,
    pub mean_confidence: f64,
}

/// Matches each response to its item; one response per item is required.
fn pair_responses<'a>(
    form: &'a SdatForm,
    responses: &'a [SdatResponse],
) -> Result<Vec<(&'a SdatItem, &'a SdatResponse)>, SdatError> {
    let mut by_item: BTreeMap<&str, &SdatResponse> = BTreeMap::new();
    for r in responses {
        if by_item.insert(r.item_id.as_str(), r).is_some() {
            return Err(SdatError::DuplicateResponse(r.item_id.clone()));
        }
        if form.item(&r.item_id).is_none() {
            return Err(SdatError::UnknownItem(r.item_id.clone()));
        }
        for (field, v) in [("compliance", r.compliance), ("confidence", r.confidence)] {
            if !(1..=SCALE_MAX).contains(&v) {
                return Err(SdatError::InvalidResponse { item_id: r.item_id.clone(), field });
            }
        }
    }
    form.items
        .iter()
        .map(|item| {
            by_item
                .get(item.item_id.as_str())
                .map(|r| (item, *r))
                .ok_or_else(|| SdatError::MissingResponse(item.item_id.clone()))
        })
        .collect()
}

pub fn score_responses(form: &SdatForm, responses: &[SdatResponse]) -> Result<SdatScoreReport, SdatError> {
    let pairs = pair_responses(form, responses)?;
    let mean = |vals: Vec<u8>| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().map(|v| f64::from(*v)).sum::<f64>() / vals.len() as f64
        }
    };
    let count = |scam: bool| {
        pairs.iter().filter(|(i, r)| i.is_scam == scam && r.discernment.is_correct(i.is_scam)).count() as u8
    };
    Ok(SdatScoreReport {
        scam_score: count(true),
        notscam_score: count(false),
        mean_compliance_scam: mean(pairs.iter().filter(|(i, _)| i.is_scam).map(|(_, r)| r.compliance).collect()),
        mean_compliance_notscam: mean(pairs.iter().filter(|(i, _)| !i.is_scam).map(|(_, r)| r.compliance).collect()),
        mean_confidence: mean(pairs.iter().map(|(_, r)| r.confidence).collect()),
    })
}

/// 0/1 correctness per item in form order.
pub fn correctness(form: &SdatForm, responses: &[SdatResponse]) -> Result<Vec<f64>, SdatError> {
    Ok(pair_responses(form, responses)?
        .into_iter()
        .map(|(i, r)| if r.discernment.is_correct(i.is_scam) { 1.0 } else { 0.0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorylineParity {
    pub storyline_id: String,
    pub proportion_a: f64,
    pub proportion_b: f64,
    /// `proportion_a - proportion_b`.
    pub diff: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub threshold: f64,
    pub storylines: Vec<StorylineParity>,
}

impl ParityReport {
    pub fn any_flagged(&self) -> bool {
        self.storylines.iter().any(|s| s.flagged)
    }
}

/// Compares per-storyline difficulty between the two forms. Pilot matrices
/// hold 0/1 correctness with columns in each form's item order.
pub fn form_parity_check(
    a: &SdatForm,
    b: &SdatForm,
    pilot_a: &ResponseMatrix,
    pilot_b: &ResponseMatrix,
    threshold: f64,
) -> Result<ParityReport, SdatError> {
    if a.storylines() != b.storylines() {
        return Err(SdatError::StorylineMismatch);
    }
    for (form, m) in [(a, pilot_a), (b, pilot_b)] {
        if m.k() != form.items.len() {
            return Err(SdatError::Pilot(format!(
                "form {} pilot has {} columns, expected {}",
                form.form,
                m.k(),
                form.items.len()
            )));
        }
        if m.n() < 2 {
            return Err(SdatError::Pilot(format!("form {} pilot needs at least 2 respondents", form.form)));
        }
    }
    let storylines = a
        .items
        .iter()
        .enumerate()
        .map(|(ja, item)| {
            let jb = b.items.iter().position(|x| x.storyline_id == item.storyline_id).expect("same storylines");
            let pa = pilot_a.column_mean(ja);
            let pb = pilot_b.column_mean(jb);
            let diff = pa - pb;
            StorylineParity {
                storyline_id: item.storyline_id.clone(),
                proportion_a: pa,
                proportion_b: pb,
                diff,
                flagged: diff.abs() > threshold,
            }
        })
        .collect();
    Ok(ParityReport { threshold, storylines })
}

/// One row of the response export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub participant_id: String,
    pub form: Form,
    pub item_id: String,
    pub storyline_id: String,
    pub is_scam: bool,
    pub compliance: u8,
    pub discernment: Discernment,
    pub confidence: u8,
    pub phase: TestPhase,
}

impl ResponseRow {
    pub fn is_correct(&self) -> bool {
        self.discernment.is_correct(self.is_scam)
    }
}

pub fn response_rows(
    participant_id: &str,
    form: &SdatForm,
    phase: TestPhase,
    responses: &[SdatResponse],
) -> Result<Vec<ResponseRow>, SdatError> {
    Ok(pair_responses(form, responses)?
        .into_iter()
        .map(|(item, r)| ResponseRow {
            participant_id: participant_id.to_string(),
            form: form.form,
            item_id: item.item_id.clone(),
            storyline_id: item.storyline_id.clone(),
            is_scam: item.is_scam,
            compliance: r.compliance,
            discernment: r.discernment,
            confidence: r.confidence,
            phase,
        })
        .collect())
}

pub fn write_responses_csv(rows: &[ResponseRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record([
            "participant_id",
            "form",
            "item_id",
            "storyline_id",
            "is_scam",
            "compliance",
            "discernment",
            "confidence",
            "phase",
        ])
        .expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn read_responses_csv(text: &str) -> Result<Vec<ResponseRow>, SdatError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| SdatError::Csv(format!("row {}: {e}", i + 1))))
        .collect()
}

/// Per-item metadata for a column of a response matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    pub storyline_id: String,
    pub is_scam: bool,
}

/// A respondent-by-item 0/1 correctness matrix built from response rows.
#[derive(Debug, Clone)]
pub struct PilotData {
    pub respondents: Vec<String>,
    pub items: Vec<ItemMeta>,
    pub matrix: ResponseMatrix,
}

/// Pivots response rows into a correctness matrix. Respondents are
/// (participant, phase) pairs; columns are items sorted by id. Every
/// respondent must answer every item.
pub fn pilot_matrix(rows: &[ResponseRow]) -> Result<PilotData, SdatError> {
    let mut items: BTreeMap<&str, ItemMeta> = BTreeMap::new();
    let mut cells: BTreeMap<(String, TestPhase), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows {
        let meta = ItemMeta { item_id: r.item_id.clone(), storyline_id: r.storyline_id.clone(), is_scam: r.is_scam };
        match items.get(r.item_id.as_str()) {
            Some(prev) if *prev != meta => {
                return Err(SdatError::Csv(format!("item `{}` has inconsistent metadata", r.item_id)))
            }
            Some(_) => {}
            None => {
                items.insert(&r.item_id, meta);
            }
        }
        let row = cells.entry((r.participant_id.clone(), r.phase)).or_default();
        if row.insert(&r.item_id, if r.is_correct() { 1.0 } else { 0.0 }).is_some() {
            return Err(SdatError::DuplicateResponse(format!("{}/{}", r.participant_id, r.item_id)));
        }
    }
    let mut data = Vec::with_capacity(cells.len() * items.len());
    let mut respondents = Vec::with_capacity(cells.len());
    for ((pid, phase), row) in &cells {
        for id in items.keys() {
            let v = row.get(id).ok_or_else(|| SdatError::MissingResponse(format!("{pid}/{id}")))?;
            data.push(*v);
        }
        respondents.push(format!("{pid}/{}", phase.as_str()));
    }
    let matrix = ResponseMatrix::from_row_major(respondents.len(), items.len(), data)
        .map_err(|e| SdatError::Pilot(e.to_string()))?;
    Ok(PilotData { respondents, items: items.into_values().collect(), matrix })
}
