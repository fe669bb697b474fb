use serde::{Deserialize, Serialize};

use super::{normal, participant_rng, respond_2pl, Purpose, SimError};
use crate::psychometrics::IrtItemParams;
use crate::sdat::{Form, ItemMeta, ResponseRow, TestPhase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotItem {
    pub item_id: String,
    pub storyline_id: String,
    pub is_scam: bool,
    pub a: f64,
    pub b: f64,
}

/// A calibration sample: every respondent answers every item once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub n: usize,
    pub seed: u64,
    pub factor_correlation: f64,
    pub items: Vec<PilotItem>,
}

impl PilotConfig {
    /// 23 candidate items (12 scam, 11 genuine) answered by 360 respondents.
    pub fn candidate_pool(seed: u64) -> Self {
        let a = [
            1.8, 0.6, 1.4, 2.1, 0.9, 1.2, 1.6, 0.7, 1.9, 1.1, 1.5, 0.8, 1.7, 0.5, 1.3, 2.0, 1.0, 1.4, 0.75, 1.85, 1.15,
            0.95, 1.55,
        ];
        let b = [
            -0.5, 0.8, 0.1, -0.2, 1.2, 0.4, -0.8, -1.1, 0.3, 0.0, -0.3, 0.9, 0.2, -1.4, 0.6, -0.1, 1.0, -0.6, 0.5,
            0.15, -0.4, 1.3, -0.9,
        ];
        let items = (0..23)
            .map(|i| PilotItem {
                item_id: format!("C{:02}", i + 1),
                storyline_id: format!("C{:02}", i + 1),
                is_scam: i < 12,
                a: a[i],
                b: b[i],
            })
            .collect();
        Self { n: 360, seed, factor_correlation: 0.3, items }
    }

    /// `per_factor` scam and `per_factor` genuine items with clear loadings.
    pub fn two_factor(n: usize, per_factor: usize, seed: u64) -> Self {
        let items = (0..2 * per_factor)
            .map(|i| {
                let k = i % per_factor;
                PilotItem {
                    item_id: format!("F{:02}", i + 1),
                    storyline_id: format!("F{:02}", i + 1),
                    is_scam: i < per_factor,
                    a: 1.6 + 0.6 * (k as f64 / per_factor.max(2) as f64),
                    b: -0.8 + 1.6 * (k as f64 / (per_factor.max(2) - 1) as f64),
                }
            })
            .collect();
        Self { n, seed, factor_correlation: 0.3, items }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 || self.items.len() < 2 {
            return Err(SimError::InvalidConfig("pilot needs at least 2 respondents and 2 items".into()));
        }
        if !(-1.0..=1.0).contains(&self.factor_correlation) {
            return Err(SimError::InvalidConfig("factor_correlation must lie in [-1, 1]".into()));
        }
        if self.items.iter().any(|i| !(i.a > 0.0 && i.a.is_finite() && i.b.is_finite())) {
            return Err(SimError::InvalidConfig("pilot items need a > 0 and finite b".into()));
        }
        Ok(())
    }
}

/// Long-format responses (phase `pre`, form A) for every respondent and item.
pub fn simulate_pilot(cfg: &PilotConfig) -> Result<Vec<ResponseRow>, SimError> {
    cfg.validate()?;
    let meta: Vec<ItemMeta> = cfg
        .items
        .iter()
        .map(|i| ItemMeta { item_id: i.item_id.clone(), storyline_id: i.storyline_id.clone(), is_scam: i.is_scam })
        .collect();
    let params = cfg.items.iter().map(|i| (i.item_id.as_str(), IrtItemParams { a: i.a, b: i.b })).collect();
    let r = cfg.factor_correlation;
    let mut rows = Vec::with_capacity(cfg.n * cfg.items.len());
    for i in 0..cfg.n as u64 {
        let mut profile = participant_rng(cfg.seed, i, Purpose::Profile);
        let scam = normal(&mut profile);
        let notscam = r * scam + (1.0 - r * r).sqrt() * normal(&mut profile);
        let mut rng = participant_rng(cfg.seed, i, Purpose::PreTest);
        let pid = format!("R{:05}", i + 1);
        for (resp, m) in respond_2pl(scam, notscam, &meta, &params, &mut rng).into_iter().zip(&meta) {
            rows.push(ResponseRow {
                participant_id: pid.clone(),
                form: Form::A,
                item_id: resp.item_id,
                storyline_id: m.storyline_id.clone(),
                is_scam: m.is_scam,
                compliance: resp.compliance,
                discernment: resp.discernment,
                confidence: resp.confidence,
                phase: TestPhase::Pre,
            });
        }
    }
    Ok(rows)
}
