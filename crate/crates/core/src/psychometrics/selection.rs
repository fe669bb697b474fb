use serde::Serialize;

use super::{fit_2pl, item_total_correlation, EmOptions, PsychometricsError, ResponseMatrix};
use crate::sdat::ItemMeta;
use crate::stats::descending_ranks;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemScore {
    pub item_id: String,
    pub is_scam: bool,
    pub item_total: f64,
    pub discrimination: f64,
    /// Mean of the item-total rank and the discrimination rank (1 = best).
    pub composite_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// Chosen item ids, sorted.
    pub selected: Vec<String>,
    /// Every item, best composite rank first.
    pub ranking: Vec<ItemScore>,
}

/// Picks `target` items, half scam and half genuine, by composite rank of
/// item-total correlation and 2PL discrimination. Ties go to the smaller id.
///
/// Items are processed in id order, so the result does not depend on the
/// column order of `m`.
pub fn select_items(m: &ResponseMatrix, items: &[ItemMeta], target: usize) -> Result<Selection, PsychometricsError> {
    if items.len() != m.k() {
        return Err(PsychometricsError::ShapeMismatch { expected: m.k(), got: items.len() });
    }
    if target == 0 || !target.is_multiple_of(2) {
        return Err(PsychometricsError::InfeasibleConstraint(format!(
            "target {target} must be a positive even number"
        )));
    }
    let quota = target / 2;
    let scam = items.iter().filter(|i| i.is_scam).count();
    let genuine = items.len() - scam;
    if scam < quota || genuine < quota {
        return Err(PsychometricsError::InfeasibleConstraint(format!(
            "need {quota} scam and {quota} genuine items, have {scam} and {genuine}"
        )));
    }

    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].item_id.cmp(&items[b].item_id));
    let canonical = m.select_columns(&order);
    let item_total = item_total_correlation(&canonical)?;
    let fit = fit_2pl(&canonical, &EmOptions::default())?;
    let discrimination: Vec<f64> = fit.items.iter().map(|p| p.a).collect();
    let r_rank = descending_ranks(&item_total);
    let a_rank = descending_ranks(&discrimination);

    let mut ranking: Vec<ItemScore> = order
        .iter()
        .enumerate()
        .map(|(pos, &orig)| ItemScore {
            item_id: items[orig].item_id.clone(),
            is_scam: items[orig].is_scam,
            item_total: item_total[pos],
            discrimination: discrimination[pos],
            composite_rank: (r_rank[pos] + a_rank[pos]) / 2.0,
        })
        .collect();
    // stable sort over id-ordered entries breaks ties by id
    ranking.sort_by(|x, y| x.composite_rank.total_cmp(&y.composite_rank));

    let (mut n_scam, mut n_genuine) = (0, 0);
    let mut selected = Vec::with_capacity(target);
    for s in &ranking {
        let slot = if s.is_scam { &mut n_scam } else { &mut n_genuine };
        if *slot < quota {
            *slot += 1;
            selected.push(s.item_id.clone());
        }
    }
    selected.sort();
    Ok(Selection { selected, ranking })
}
