//! Synthetic cohorts with known latent abilities and injected treatment
//! effects, answering the discernment test through the 2PL model.
//!
//! Every random draw comes from ChaCha8 seeded with the cohort seed. Each
//! participant owns separate streams (see [`stream_id`]), so adding or
//! removing participants never changes anyone else's draws.

mod pilot;
mod virtual_trial;

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pilot::{simulate_pilot, PilotConfig, PilotItem};
pub use virtual_trial::{run_virtual_trial, run_virtual_trial_with_forms, VirtualTrial};

use crate::psychometrics::IrtItemParams;
use crate::sdat::{Discernment, ItemMeta, SdatError, SdatResponse, TestPhase};
use crate::trial::{
    Arm, BlockRandomizer, Demographics, FormPolicy, TrialError, DEFAULT_BLOCK_SIZE, LEVELS, MAX_AGE, MIN_AGE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid cohort config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error(transparent)]
    Sdat(#[from] SdatError),
}

/// What a draw is used for; combined with the participant index into a
/// ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Profile = 0,
    PreTest = 1,
    PostTest = 2,
    FollowUp = 3,
    Attrition = 4,
}

pub fn stream_id(index: u64, purpose: Purpose) -> u64 {
    (index << 3) | purpose as u64
}

pub fn participant_rng(seed: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(index, purpose));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub scam: f64,
    pub notscam: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankItem {
    pub item_id: String,
    pub is_scam: bool,
    pub a: f64,
    pub b: f64,
}

impl BankItem {
    pub fn params(&self) -> IrtItemParams {
        IrtItemParams { a: self.a, b: self.b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicsModel {
    pub age_mean: f64,
    pub age_sd: f64,
    /// Label and probability.
    pub gender: Vec<(String, f64)>,
    /// Probabilities of levels 1..=5.
    pub income: Vec<f64>,
    pub education: Vec<f64>,
    /// Correlation between standardized age and baseline ability.
    pub ability_age_correlation: f64,
}

impl Default for DemographicsModel {
    fn default() -> Self {
        Self {
            age_mean: 36.0,
            age_sd: 12.0,
            gender: vec![("female".into(), 0.5), ("male".into(), 0.5)],
            income: vec![0.2, 0.25, 0.25, 0.2, 0.1],
            education: vec![0.1, 0.2, 0.3, 0.25, 0.15],
            ability_age_correlation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n: usize,
    pub seed: u64,
    /// Ability shift at post-test, per arm.
    pub effect_shift: BTreeMap<Arm, Shift>,
    /// Fraction of the post-test not-scam shift undone by follow-up, per arm.
    pub dissipation: BTreeMap<Arm, f64>,
    pub attrition_followup: f64,
    /// Correlation between the scam and not-scam abilities at baseline.
    pub factor_correlation: f64,
    pub item_bank: Vec<BankItem>,
    #[serde(default)]
    pub demographics_model: DemographicsModel,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default)]
    pub form_policy: FormPolicy,
}

fn default_block() -> usize {
    DEFAULT_BLOCK_SIZE
}

/// Item parameters for the bundled 20-item bank (S01..S05 scam, S06..S10
/// genuine), with near-identical values on the two forms of a storyline.
pub fn default_item_bank() -> Vec<BankItem> {
    let a = [1.3, 1.6, 1.1, 1.5, 1.4, 1.2, 1.5, 1.3, 1.1, 1.4];
    let b = [-0.4, 0.0, 0.3, -0.2, 0.2, -0.3, 0.1, 0.4, -0.1, 0.0];
    let mut items = Vec::new();
    for s in 0..10 {
        for (form, da, db) in [("A", 0.0, 0.0), ("B", 0.05, -0.05)] {
            items.push(BankItem {
                item_id: format!("S{:02}{form}", s + 1),
                is_scam: s < 5,
                a: a[s] + da,
                b: b[s] + db,
            });
        }
    }
    items
}

impl CohortConfig {
    /// The desk-scale trial: n = 3000; scam-ability shifts ShieldUp +0.8,
    /// GeneralAwareness +0.3, ChromeDino 0; a not-scam dip of -0.5 / -0.4 / 0
    /// that fully dissipates by follow-up; 10% follow-up attrition.
    pub fn default_trial() -> Self {
        Self {
            n: 3000,
            seed: 20240521,
            effect_shift: BTreeMap::from([
                (Arm::ShieldUp, Shift { scam: 0.8, notscam: -0.5 }),
                (Arm::GeneralAwareness, Shift { scam: 0.3, notscam: -0.4 }),
                (Arm::ChromeDino, Shift { scam: 0.0, notscam: 0.0 }),
            ]),
            dissipation: Arm::ALL.into_iter().map(|a| (a, 1.0)).collect(),
            attrition_followup: 0.1,
            factor_correlation: 0.3,
            item_bank: default_item_bank(),
            demographics_model: DemographicsModel::default(),
            block_size: DEFAULT_BLOCK_SIZE,
            form_policy: FormPolicy::Counterbalanced,
        }
    }

    /// No treatment effects at all.
    pub fn null(n: usize, seed: u64) -> Self {
        let mut c = Self::default_trial();
        c.n = n;
        c.seed = seed;
        c.effect_shift = Arm::ALL.into_iter().map(|a| (a, Shift { scam: 0.0, notscam: 0.0 })).collect();
        c
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        for arm in Arm::ALL {
            if !self.effect_shift.contains_key(&arm) || !self.dissipation.contains_key(&arm) {
                return bad(format!("effect_shift and dissipation need an entry for {arm}"));
            }
        }
        if self.effect_shift.values().any(|s| !s.scam.is_finite() || !s.notscam.is_finite()) {
            return bad("shifts must be finite".into());
        }
        if self.dissipation.values().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("dissipation fractions must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.attrition_followup) {
            return bad("attrition_followup must lie in [0, 1]".into());
        }
        if !(-1.0..=1.0).contains(&self.factor_correlation)
            || !(-1.0..=1.0).contains(&self.demographics_model.ability_age_correlation)
        {
            return bad("correlations must lie in [-1, 1]".into());
        }
        for it in &self.item_bank {
            if !(it.a > 0.0 && it.a.is_finite() && it.b.is_finite()) {
                return bad(format!("item {} needs a > 0 and finite b", it.item_id));
            }
        }
        let dm = &self.demographics_model;
        let probs_ok =
            |p: &[f64]| !p.is_empty() && p.iter().all(|v| (0.0..=1.0).contains(v)) && p.iter().sum::<f64>() > 0.0;
        if !probs_ok(&dm.gender.iter().map(|g| g.1).collect::<Vec<_>>())
            || dm.income.len() != LEVELS as usize
            || dm.education.len() != LEVELS as usize
            || !probs_ok(&dm.income)
            || !probs_ok(&dm.education)
        {
            return bad("demographic probabilities must be in [0, 1] with 5 income and education levels".into());
        }
        if !(dm.age_sd >= 0.0 && dm.age_mean.is_finite()) {
            return bad("age model needs a finite mean and non-negative sd".into());
        }
        self.randomizer()?;
        Ok(())
    }

    pub fn randomizer(&self) -> Result<BlockRandomizer, SimError> {
        BlockRandomizer::new(self.seed, self.block_size).ok_or_else(|| {
            SimError::InvalidConfig(format!("block size {} is not a positive multiple of 3", self.block_size))
        })
    }

    pub fn item_params(&self) -> BTreeMap<&str, IrtItemParams> {
        self.item_bank.iter().map(|i| (i.item_id.as_str(), i.params())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseThetas {
    pub pre: f64,
    pub post: f64,
    pub followup: f64,
}

impl PhaseThetas {
    pub fn at(&self, phase: TestPhase) -> f64 {
        match phase {
            TestPhase::Pre => self.pre,
            TestPhase::Post => self.post,
            TestPhase::FollowUp21 => self.followup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParticipant {
    pub index: u64,
    pub arm: Arm,
    pub demographics: Demographics,
    pub theta_scam: PhaseThetas,
    pub theta_notscam: PhaseThetas,
    pub drops_followup: bool,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    WeightedIndex::new(weights).expect("validated weights").sample(rng)
}

/// Draws the cohort. Arms follow the same block randomizer the trial uses,
/// so participant `i` lands in the arm the trial will assign to the i-th
/// randomization.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<SyntheticParticipant>, SimError> {
    cfg.validate()?;
    let randomizer = cfg.randomizer()?;
    let dm = &cfg.demographics_model;
    let gender_w: Vec<f64> = dm.gender.iter().map(|g| g.1).collect();
    let rho_age = dm.ability_age_correlation;
    let r = cfg.factor_correlation;
    Ok((0..cfg.n as u64)
        .map(|i| {
            let mut rng = participant_rng(cfg.seed, i, Purpose::Profile);
            let z_age = normal(&mut rng);
            let e1 = normal(&mut rng);
            let e2 = normal(&mut rng);
            let age = (dm.age_mean + dm.age_sd * z_age).round().clamp(f64::from(MIN_AGE), f64::from(MAX_AGE)) as u32;
            let demographics = Demographics {
                age,
                gender: dm.gender[pick(&mut rng, &gender_w)].0.clone(),
                income_level: pick(&mut rng, &dm.income) as u8 + 1,
                education_level: pick(&mut rng, &dm.education) as u8 + 1,
            };
            let scam_pre = rho_age * z_age + (1.0 - rho_age * rho_age).sqrt() * e1;
            let notscam_pre = r * scam_pre + (1.0 - r * r).sqrt() * e2;
            let arm = randomizer.arm_at(i);
            let shift = cfg.effect_shift[&arm];
            let scam_post = scam_pre + shift.scam;
            let notscam_post = notscam_pre + shift.notscam;
            let notscam_fu = notscam_pre + (1.0 - cfg.dissipation[&arm]) * shift.notscam;
            let mut attr = participant_rng(cfg.seed, i, Purpose::Attrition);
            SyntheticParticipant {
                index: i,
                arm,
                demographics,
                theta_scam: PhaseThetas { pre: scam_pre, post: scam_post, followup: scam_post },
                theta_notscam: PhaseThetas { pre: notscam_pre, post: notscam_post, followup: notscam_fu },
                drops_followup: attr.random::<f64>() < cfg.attrition_followup,
            }
        })
        .collect())
}

/// Cut points on the latent response for the 1..=5 compliance scale.
const COMPLIANCE_CUTS: [f64; 4] = [-2.0, -0.67, 0.67, 2.0];
/// Cut points on |latent| for the 1..=5 confidence scale.
const CONFIDENCE_CUTS: [f64; 4] = [0.5, 1.0, 1.75, 2.5];

fn bin(x: f64, cuts: &[f64; 4]) -> u8 {
    1 + cuts.iter().filter(|c| x > **c).count() as u8
}

/// Simulated answers to one form.
///
/// Discernment is correct with probability logistic(a (theta - b)), using
/// the scam ability for scam items and the not-scam ability otherwise.
/// Compliance and confidence come from the same latent a (theta - b) plus
/// standard logistic noise, binned at fixed cut points: compliance rises
/// with the latent on genuine items and falls with it on scam items;
/// confidence rises with its magnitude.
pub fn respond_2pl<R: Rng>(
    theta_scam: f64,
    theta_notscam: f64,
    items: &[ItemMeta],
    params: &BTreeMap<&str, IrtItemParams>,
    rng: &mut R,
) -> Vec<SdatResponse> {
    items
        .iter()
        .map(|item| {
            let p = params[item.item_id.as_str()];
            let theta = if item.is_scam { theta_scam } else { theta_notscam };
            let correct = rng.random::<f64>() < p.prob(theta);
            let discernment = match (correct, item.is_scam) {
                (true, true) | (false, false) => Discernment::Scam,
                _ => Discernment::NotScam,
            };
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let latent = p.a * (theta - p.b) + (u / (1.0 - u)).ln();
            SdatResponse {
                item_id: item.item_id.clone(),
                compliance: bin(if item.is_scam { -latent } else { latent }, &COMPLIANCE_CUTS),
                discernment,
                confidence: bin(latent.abs(), &CONFIDENCE_CUTS),
            }
        })
        .collect()
}
