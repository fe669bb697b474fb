use chrono::{DateTime, Duration, TimeZone, Utc};

use super::{generate_cohort, participant_rng, respond_2pl, CohortConfig, Purpose, SimError, SyntheticParticipant};
use crate::demo;
use crate::sdat::{score_responses, ItemMeta, SdatForm, TestPhase};
use crate::trial::{Arm, PhaseCompletion, SdatSubmission, Trial, TrialConfig, TrialPhase};

/// Minutes spent on one ten-item test.
const TEST_MINUTES: i64 = 6;
/// Follow-up is taken this long after the 21-day mark.
const FOLLOWUP_DELAY_MINUTES: i64 = 30;

#[derive(Debug, Clone)]
pub struct VirtualTrial {
    pub trial: Trial,
    pub cohort: Vec<SyntheticParticipant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    Enroll,
    Randomize,
    Forms,
    Pre,
    Intervention,
    Post,
    FollowUp,
}

pub fn simulation_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 6, 9, 0, 0).unwrap()
}

/// Runs the cohort through the trial on the bundled test forms.
pub fn run_virtual_trial(cfg: &CohortConfig) -> Result<VirtualTrial, SimError> {
    run_virtual_trial_with_forms(cfg, &demo::sdat_forms())
}

/// Enrolls, randomizes and tests every synthetic participant on a simulated
/// clock: one participant starts per minute, the three day-0 steps follow
/// back to back, and the follow-up happens 21 days (plus 30 minutes) after
/// the post-test. Events are applied in time order, so log timestamps never
/// go backwards.
pub fn run_virtual_trial_with_forms(
    cfg: &CohortConfig,
    forms: &(SdatForm, SdatForm),
) -> Result<VirtualTrial, SimError> {
    cfg.validate()?;
    let params = cfg.item_params();
    for item in forms.0.items.iter().chain(&forms.1.items) {
        if !params.contains_key(item.item_id.as_str()) {
            return Err(SimError::InvalidConfig(format!("item bank has no parameters for {}", item.item_id)));
        }
    }
    let cohort = generate_cohort(cfg)?;
    let mut trial = Trial::new(TrialConfig {
        seed: cfg.seed,
        block_size: cfg.block_size,
        form_policy: cfg.form_policy,
        ..TrialConfig::with_seed(cfg.seed)
    })?;

    let epoch = simulation_epoch();
    let mut plan: Vec<(DateTime<Utc>, u64, Step)> = Vec::with_capacity(cohort.len() * 7);
    for p in &cohort {
        let start = epoch + Duration::minutes(p.index as i64);
        let post_end = post_completed(start, p.arm);
        plan.push((start, p.index, Step::Enroll));
        plan.push((start, p.index, Step::Randomize));
        plan.push((start, p.index, Step::Forms));
        plan.push((start + Duration::minutes(TEST_MINUTES), p.index, Step::Pre));
        plan.push((intervention_end(start, p.arm), p.index, Step::Intervention));
        plan.push((post_end, p.index, Step::Post));
        if !p.drops_followup {
            let at =
                post_end + Duration::days(trial.config().followup_min_days) + Duration::minutes(FOLLOWUP_DELAY_MINUTES);
            plan.push((at, p.index, Step::FollowUp));
        }
    }
    plan.sort();

    let form_of = |f: crate::sdat::Form| if f == forms.0.form { &forms.0 } else { &forms.1 };
    let meta = |form: &SdatForm| -> Vec<ItemMeta> {
        form.items
            .iter()
            .map(|i| ItemMeta { item_id: i.item_id.clone(), storyline_id: i.storyline_id.clone(), is_scam: i.is_scam })
            .collect()
    };
    let metas = (meta(&forms.0), meta(&forms.1));
    let mut ids = vec![String::new(); cohort.len()];
    for (at, idx, step) in plan {
        let p = &cohort[idx as usize];
        let start = epoch + Duration::minutes(p.index as i64);
        match step {
            Step::Enroll => {
                ids[idx as usize] = trial.enroll(p.demographics.clone(), at)?.participant_id;
            }
            Step::Randomize => {
                let arm = trial.randomize(&ids[idx as usize], at)?;
                if arm != p.arm {
                    return Err(SimError::InvalidConfig(format!(
                        "cohort arm {} disagrees with trial arm {arm}",
                        p.arm
                    )));
                }
            }
            Step::Forms => {
                trial.assign_form_order(&ids[idx as usize], at)?;
            }
            Step::Intervention => {
                let c = PhaseCompletion {
                    phase: TrialPhase::Intervention,
                    started_at: start + Duration::minutes(TEST_MINUTES),
                    completed_at: at,
                    payload_ref: None,
                    sdat: None,
                };
                trial.complete_phase(&ids[idx as usize], c, at)?;
            }
            Step::Pre | Step::Post | Step::FollowUp => {
                let (phase, purpose) = match step {
                    Step::Pre => (TestPhase::Pre, Purpose::PreTest),
                    Step::Post => (TestPhase::Post, Purpose::PostTest),
                    _ => (TestPhase::FollowUp21, Purpose::FollowUp),
                };
                let pid = &ids[idx as usize];
                let form_id = trial.state().participant(pid)?.form_for(phase).expect("forms assigned");
                let form = form_of(form_id);
                let items = if form_id == forms.0.form { &metas.0 } else { &metas.1 };
                let mut rng = participant_rng(cfg.seed, p.index, purpose);
                let responses =
                    respond_2pl(p.theta_scam.at(phase), p.theta_notscam.at(phase), items, &params, &mut rng);
                let report = score_responses(form, &responses)?;
                let c = PhaseCompletion {
                    phase: TrialPhase::from_test_phase(phase),
                    started_at: at - Duration::minutes(TEST_MINUTES),
                    completed_at: at,
                    payload_ref: None,
                    sdat: Some(SdatSubmission { form: form_id, report, responses }),
                };
                trial.complete_phase(pid, c, at)?;
            }
        }
    }
    Ok(VirtualTrial { trial, cohort })
}

fn intervention_end(start: DateTime<Utc>, arm: Arm) -> DateTime<Utc> {
    start + Duration::minutes(TEST_MINUTES + i64::from(arm.planned_duration_minutes()))
}

fn post_completed(start: DateTime<Utc>, arm: Arm) -> DateTime<Utc> {
    intervention_end(start, arm) + Duration::minutes(TEST_MINUTES)
}
