use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use shieldup_core::analysis::{analyze_export, report_json, ScoreKind, Timepoint, DEFAULT_FOLLOWUP_THRESHOLD};
use shieldup_core::content::{Phase, ScamType, ScenarioGraph};
use shieldup_core::engine::{view, FeedbackMode, Message, SessionView};
use shieldup_core::sdat::{score_responses, Form, SdatResponse, SdatScoreReport, TestPhase};
use shieldup_core::trial::{
    export_csv, export_rows, Arm, Demographics, EventKind, FormOrder, ParticipantRecord, PhaseCompletion, PhaseRecord,
    SdatSubmission, TrialError, TrialPhase,
};

use crate::error::ApiError;
use crate::gameplay::Gameplay;
use crate::{new_token, token_sha256, Inner, Shared};

type AppState = Arc<Shared>;

pub(crate) fn router(shared: AppState) -> Router {
    let origins = if shared.allowed_origins.is_empty() {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::list(shared.allowed_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([AUTHORIZATION, CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/participants", post(enroll))
        .route("/participants/me", get(me))
        .route("/scenarios", get(scenarios))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/choice", post(choose))
        .route("/sessions/{id}/view", get(session_view))
        .route("/sessions/{id}/quiz", post(quiz))
        .route("/intervention/complete", post(complete_intervention))
        .route("/activity/{arm}", post(activity))
        .route("/sdat/{phase}/form", get(sdat_form))
        .route("/sdat/{phase}/responses", post(sdat_responses))
        .route("/export", get(export))
        .route("/analyze", post(analyze))
        .route("/dashboard", get(dashboard))
        .layer(cors)
        .with_state(shared)
}

/// JSON body whose parse failures are reported as 400 with the error schema.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rejection) => Err(ApiError::bad_request("InvalidBody", rejection.body_text())),
        }
    }
}

/// The authenticated caller.
#[derive(Debug, Clone, PartialEq)]
pub enum Caller {
    Participant(String),
    Researcher,
}

impl Caller {
    fn participant(self) -> Result<String, ApiError> {
        match self {
            Caller::Participant(p) => Ok(p),
            Caller::Researcher => Err(ApiError::forbidden("ParticipantOnly", "endpoint requires a participant token")),
        }
    }

    fn researcher(&self) -> Result<(), ApiError> {
        match self {
            Caller::Researcher => Ok(()),
            Caller::Participant(_) => {
                Err(ApiError::forbidden("ResearcherOnly", "endpoint requires the researcher token"))
            }
        }
    }
}

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(ApiError::unauthorized)?;
        let hash = token_sha256(token);
        if hash == state.researcher_sha256 {
            return Ok(Caller::Researcher);
        }
        let inner = state.lock();
        inner
            .game
            .participant_for_token(&hash)
            .map(|p| Caller::Participant(p.to_string()))
            .ok_or_else(ApiError::unauthorized)
    }
}

fn wrong_arm_or_phase(message: impl Into<String>) -> ApiError {
    ApiError::forbidden("WrongArmOrPhase", message)
}

/// The participant must be in `arm` with the intervention as their next phase.
fn require_intervention<'a>(inner: &'a Inner, pid: &str, arm: Arm) -> Result<&'a ParticipantRecord, ApiError> {
    let rec = inner.trial.state().participant(pid)?;
    if rec.arm != Some(arm) {
        return Err(wrong_arm_or_phase(format!("this activity belongs to the {arm} arm")));
    }
    if rec.next_phase() != Some(TrialPhase::Intervention) {
        return Err(wrong_arm_or_phase(format!(
            "the intervention is not open (next phase: {})",
            rec.next_phase().map_or_else(|| "none".to_string(), |p| p.to_string())
        )));
    }
    Ok(rec)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnrollRequest {
    demographics: Demographics,
}

#[derive(Debug, Serialize)]
struct EnrollResponse {
    participant_id: String,
    token: String,
    arm: Arm,
    forms: FormOrder,
}

async fn enroll(State(s): State<AppState>, Body(req): Body<EnrollRequest>) -> Result<Response, ApiError> {
    s.mutate(|inner, now| {
        // demographics are checked by `enroll` before anything is logged, and
        // the remaining steps cannot fail for a freshly enrolled participant
        let p = inner.trial.enroll(req.demographics, now)?;
        let pid = p.participant_id;
        let arm = inner.trial.randomize(&pid, now)?;
        let forms = inner.trial.assign_form_order(&pid, now)?;
        let token = new_token();
        let token_sha256 = token_sha256(&token);
        let pending = Gameplay::prepare_credential(&pid, &token_sha256);
        inner.trial.append(&pid, EventKind::CredentialIssued { token_sha256 }, now)?;
        inner.game.commit(pending);
        Ok((StatusCode::CREATED, Json(EnrollResponse { participant_id: pid, token, arm, forms })).into_response())
    })
}

#[derive(Debug, Serialize)]
struct LadderView {
    unlocked_level: u8,
    completed_scenarios: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ParticipantView {
    participant_id: String,
    arm: Option<Arm>,
    forms: Option<FormOrder>,
    enrolled_at: DateTime<Utc>,
    next_phase: Option<TrialPhase>,
    phases: Vec<PhaseRecord>,
    scores: BTreeMap<TestPhase, SdatScoreReport>,
    followup_opens_at: Option<DateTime<Utc>>,
    followup_closes_at: Option<DateTime<Utc>>,
    ladder: Option<LadderView>,
}

async fn me(State(s): State<AppState>, caller: Caller) -> Result<Json<ParticipantView>, ApiError> {
    let pid = caller.participant()?;
    let inner = s.lock();
    let state = inner.trial.state();
    let rec = state.participant(&pid)?;
    let post_done = rec.phase(TrialPhase::PostTest).map(|p| p.completed_at);
    let ladder = (rec.arm == Some(Arm::ShieldUp)).then(|| {
        let l = inner.game.ladder(&pid);
        LadderView {
            unlocked_level: l.unlocked_level,
            completed_scenarios: l.completed_scenarios.into_iter().collect(),
        }
    });
    Ok(Json(ParticipantView {
        participant_id: pid.clone(),
        arm: rec.arm,
        forms: rec.forms,
        enrolled_at: rec.participant.enrolled_at,
        next_phase: rec.next_phase(),
        phases: rec.phases.clone(),
        scores: rec.sdat.iter().map(|(p, sub)| (*p, sub.report.clone())).collect(),
        followup_opens_at: post_done.map(|t| t + Duration::days(state.config.followup_min_days)),
        followup_closes_at: post_done.map(|t| t + Duration::days(state.config.followup_close_days)),
        ladder,
    }))
}

#[derive(Debug, Serialize)]
struct ScenarioSummary {
    id: String,
    title: String,
    scam_type: ScamType,
    level: u8,
    unlocked: bool,
    completed: bool,
}

async fn scenarios(State(s): State<AppState>, caller: Caller) -> Result<Json<Vec<ScenarioSummary>>, ApiError> {
    let pid = caller.participant()?;
    let inner = s.lock();
    let rec = inner.trial.state().participant(&pid)?;
    if rec.arm != Some(Arm::ShieldUp) {
        return Err(wrong_arm_or_phase("scenarios are only available in the ShieldUp arm"));
    }
    let ladder = inner.game.ladder(&pid);
    let mut list: Vec<&ScenarioGraph> = s.corpus.scenarios().collect();
    list.sort_by(|a, b| (a.level, &a.id).cmp(&(b.level, &b.id)));
    Ok(Json(
        list.into_iter()
            .map(|g| ScenarioSummary {
                id: g.id.clone(),
                title: g.title.clone(),
                scam_type: g.scam_type,
                level: g.level,
                unlocked: ladder.is_unlocked(g.level),
                completed: ladder.completed_scenarios.contains(&g.id),
            })
            .collect(),
    ))
}

fn render(s: &Shared, inner: &Inner, pid: &str, session_id: &str) -> Result<SessionView, ApiError> {
    let session = inner.game.owned_session(pid, session_id)?;
    let g = s.corpus.scenario(&session.scenario_id).ok_or_else(|| ApiError::internal("scenario vanished"))?;
    Ok(view(session, g, &s.corpus.taxonomy, FeedbackMode::Training))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRequest {
    scenario_id: String,
}

async fn start_session(
    State(s): State<AppState>,
    caller: Caller,
    Body(req): Body<StartRequest>,
) -> Result<Response, ApiError> {
    let pid = caller.participant()?;
    s.mutate(|inner, now| {
        require_intervention(inner, &pid, Arm::ShieldUp)?;
        let session_id = format!("S{:06}", inner.trial.log().next_seq());
        let pending = inner.game.prepare_start(&pid, &session_id, &req.scenario_id, now, &s.corpus)?;
        let kind = EventKind::SessionStarted { session_id: session_id.clone(), scenario_id: req.scenario_id };
        inner.trial.append(&pid, kind, now)?;
        inner.game.commit(pending);
        Ok((StatusCode::CREATED, Json(render(&s, inner, &pid, &session_id)?)).into_response())
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceRequest {
    choice_id: String,
}

async fn choose(
    State(s): State<AppState>,
    caller: Caller,
    Path(session_id): Path<String>,
    Body(req): Body<ChoiceRequest>,
) -> Result<Json<SessionView>, ApiError> {
    let pid = caller.participant()?;
    s.mutate(|inner, now| {
        inner.game.owned_session(&pid, &session_id)?;
        require_intervention(inner, &pid, Arm::ShieldUp)?;
        let pending = inner.game.prepare_choice(&pid, &session_id, &req.choice_id, now, &s.corpus)?;
        let kind = EventKind::ChoiceMade { session_id: session_id.clone(), choice_id: req.choice_id };
        inner.trial.append(&pid, kind, now)?;
        inner.game.commit(pending);
        Ok(Json(render(&s, inner, &pid, &session_id)?))
    })
}

async fn session_view(
    State(s): State<AppState>,
    caller: Caller,
    Path(session_id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let pid = caller.participant()?;
    let inner = s.lock();
    Ok(Json(render(&s, &inner, &pid, &session_id)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuizRequest {
    answers: Vec<usize>,
}

async fn quiz(
    State(s): State<AppState>,
    caller: Caller,
    Path(session_id): Path<String>,
    Body(req): Body<QuizRequest>,
) -> Result<Json<SessionView>, ApiError> {
    let pid = caller.participant()?;
    s.mutate(|inner, now| {
        inner.game.owned_session(&pid, &session_id)?;
        require_intervention(inner, &pid, Arm::ShieldUp)?;
        let (pending, score) = inner.game.prepare_quiz(&pid, &session_id, &req.answers, &s.corpus)?;
        let kind = EventKind::QuizGraded { session_id: session_id.clone(), answers: req.answers, score };
        inner.trial.append(&pid, kind, now)?;
        inner.game.commit(pending);
        Ok(Json(render(&s, inner, &pid, &session_id)?))
    })
}

async fn complete_intervention(State(s): State<AppState>, caller: Caller) -> Result<Json<PhaseRecord>, ApiError> {
    let pid = caller.participant()?;
    s.mutate(|inner, now| {
        require_intervention(inner, &pid, Arm::ShieldUp)?;
        let done: Vec<_> = inner.game.sessions_of(&pid).filter(|s| s.is_completed()).collect();
        if done.is_empty() {
            return Err(ApiError::conflict("NoCompletedSession", "play at least one scenario to the end first"));
        }
        let started_at = inner.game.sessions_of(&pid).map(|s| s.started_at).min().expect("at least one session");
        let ids: Vec<&str> = done.iter().map(|s| s.session_id.as_str()).collect();
        let c = PhaseCompletion {
            phase: TrialPhase::Intervention,
            started_at,
            completed_at: now,
            payload_ref: Some(ids.join(",")),
            sdat: None,
        };
        Ok(Json(inner.trial.complete_phase(&pid, c, now)?))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivityRequest {
    started_at: DateTime<Utc>,
    completed_at: DateTime<Utc>,
}

async fn activity(
    State(s): State<AppState>,
    caller: Caller,
    Path(slug): Path<String>,
    Body(req): Body<ActivityRequest>,
) -> Result<Json<PhaseRecord>, ApiError> {
    let pid = caller.participant()?;
    let arm = Arm::from_slug(&slug)
        .filter(|a| *a != Arm::ShieldUp)
        .ok_or_else(|| ApiError::not_found("UnknownActivity", format!("no activity `{slug}`")))?;
    s.mutate(|inner, now| {
        require_intervention(inner, &pid, arm)?;
        if req.completed_at < req.started_at {
            return Err(ApiError::bad_request("NegativeDuration", "completed_at is before started_at"));
        }
        let c = PhaseCompletion {
            phase: TrialPhase::Intervention,
            started_at: req.started_at,
            completed_at: req.completed_at,
            payload_ref: Some(format!("activity:{slug}")),
            sdat: None,
        };
        Ok(Json(inner.trial.complete_phase(&pid, c, now)?))
    })
}

fn parse_phase(s: &str) -> Result<TestPhase, ApiError> {
    s.parse().map_err(|e: String| ApiError::not_found("UnknownPhase", e))
}

/// The form the participant must take now for `phase`.
fn current_form(inner: &Inner, pid: &str, phase: TestPhase) -> Result<Form, ApiError> {
    let rec = inner.trial.state().participant(pid)?;
    let form = rec.form_for(phase).ok_or_else(|| TrialError::NotAssigned(pid.to_string()))?;
    let expected = rec.next_phase();
    let got = TrialPhase::from_test_phase(phase);
    if expected != Some(got) {
        let expected = expected.map_or_else(|| "none".to_string(), |p| p.to_string());
        return Err(TrialError::OutOfOrder { expected, got }.into());
    }
    Ok(form)
}

#[derive(Debug, Serialize)]
struct ItemView {
    item_id: String,
    storyline_id: String,
    transcript: Vec<Message>,
}

#[derive(Debug, Serialize)]
struct FormView {
    phase: TestPhase,
    form: Form,
    items: Vec<ItemView>,
}

/// The conversation shown for a test item: the first path through the
/// scenario, without its closure. Outcome and refutations stay hidden.
fn item_transcript(g: &ScenarioGraph) -> Vec<Message> {
    let mut out = Vec::new();
    let mut node = g.root_node();
    loop {
        if node.phase == Phase::Closure {
            break;
        }
        out.push(Message {
            node_id: node.id.clone(),
            speaker: node.speaker,
            phase: node.phase,
            text: node.body.clone(),
        });
        match node.choices.first().and_then(|c| g.node(&c.target)) {
            Some(next) => node = next,
            None => break,
        }
    }
    out
}

async fn sdat_form(
    State(s): State<AppState>,
    caller: Caller,
    Path(phase): Path<String>,
) -> Result<Json<FormView>, ApiError> {
    let pid = caller.participant()?;
    let phase = parse_phase(&phase)?;
    let inner = s.lock();
    let form = current_form(&inner, &pid, phase)?;
    let items = s.forms[&form]
        .items
        .iter()
        .map(|i| ItemView {
            item_id: i.item_id.clone(),
            storyline_id: i.storyline_id.clone(),
            transcript: item_transcript(&i.scenario),
        })
        .collect();
    Ok(Json(FormView { phase, form, items }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponsesRequest {
    form: Form,
    responses: Vec<SdatResponse>,
    #[serde(default)]
    started_at: Option<DateTime<Utc>>,
}

async fn sdat_responses(
    State(s): State<AppState>,
    caller: Caller,
    Path(phase): Path<String>,
    Body(req): Body<ResponsesRequest>,
) -> Result<Json<SdatScoreReport>, ApiError> {
    let pid = caller.participant()?;
    let phase = parse_phase(&phase)?;
    s.mutate(|inner, now| {
        let expected = current_form(inner, &pid, phase)?;
        let trial_phase = TrialPhase::from_test_phase(phase);
        if req.form != expected {
            return Err(TrialError::WrongForm { phase: trial_phase, expected, got: req.form }.into());
        }
        let report = score_responses(&s.forms[&expected], &req.responses)?;
        let c = PhaseCompletion {
            phase: trial_phase,
            started_at: req.started_at.unwrap_or(now),
            completed_at: now,
            payload_ref: None,
            sdat: Some(SdatSubmission { form: expected, report: report.clone(), responses: req.responses }),
        };
        inner.trial.complete_phase(&pid, c, now)?;
        Ok(Json(report))
    })
}

async fn export(State(s): State<AppState>, caller: Caller) -> Result<Response, ApiError> {
    caller.researcher()?;
    let csv = export_csv(s.lock().trial.state());
    Ok(([(CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeRequest {
    outcome: String,
    #[serde(default)]
    phase: Option<String>,
    #[serde(default)]
    followup_threshold: Option<f64>,
}

async fn analyze(
    State(s): State<AppState>,
    caller: Caller,
    Body(req): Body<AnalyzeRequest>,
) -> Result<Response, ApiError> {
    caller.researcher()?;
    let score = ScoreKind::parse(&req.outcome)
        .ok_or_else(|| ApiError::bad_request("InvalidBody", format!("unknown outcome `{}`", req.outcome)))?;
    let phase = req.phase.as_deref().unwrap_or("post");
    let timepoint = Timepoint::parse(phase)
        .ok_or_else(|| ApiError::bad_request("InvalidBody", format!("unknown phase `{phase}`")))?;
    let records = export_rows(s.lock().trial.state());
    let report =
        analyze_export(&records, score, timepoint, req.followup_threshold.unwrap_or(DEFAULT_FOLLOWUP_THRESHOLD))?;
    Ok(([(CONTENT_TYPE, "application/json")], report_json(&report)).into_response())
}

#[derive(Debug, Serialize)]
struct ArmProgress {
    assigned: u64,
    phases_completed: BTreeMap<TrialPhase, u64>,
    completed: u64,
}

#[derive(Debug, Serialize)]
struct Dashboard {
    enrolled: u64,
    randomized: u64,
    events: usize,
    arms: BTreeMap<Arm, ArmProgress>,
}

async fn dashboard(State(s): State<AppState>, caller: Caller) -> Result<Json<Dashboard>, ApiError> {
    caller.researcher()?;
    let inner = s.lock();
    let state = inner.trial.state();
    let mut arms: BTreeMap<Arm, ArmProgress> = Arm::ALL
        .into_iter()
        .map(|a| {
            let phases_completed = TrialPhase::ORDER.into_iter().map(|p| (p, 0)).collect();
            (a, ArmProgress { assigned: 0, phases_completed, completed: 0 })
        })
        .collect();
    for rec in state.participants.values() {
        let Some(arm) = rec.arm else { continue };
        let a = arms.get_mut(&arm).expect("all arms present");
        a.assigned += 1;
        for p in &rec.phases {
            *a.phases_completed.get_mut(&p.phase).expect("all phases present") += 1;
        }
        a.completed += u64::from(rec.is_complete());
    }
    Ok(Json(Dashboard {
        enrolled: state.enrolled,
        randomized: state.randomized,
        events: inner.trial.log().len(),
        arms,
    }))
}
