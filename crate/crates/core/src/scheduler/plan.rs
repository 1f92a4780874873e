use serde::{Deserialize, Serialize};

use crate::alloc::spread_evenly;
use crate::error::{dim_err, Result};

/// How many weights each layer regrows after a prune phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedistributionPlan {
    /// Normalized per-layer momentum contributions `m_i`.
    pub contributions: Vec<f64>,
    pub removed: Vec<usize>,
    pub total_removed: usize,
    pub regrowth_quota: Vec<usize>,
    /// Weights that fit in no layer because every layer is full.
    pub overflow: usize,
}

impl RedistributionPlan {
    pub fn total_quota(&self) -> usize {
        self.regrowth_quota.iter().sum()
    }
}

/// Layer indices by descending contribution, ties by ascending index.
pub fn priority_order(contributions: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..contributions.len()).collect();
    order.sort_by(|&a, &b| contributions[b].total_cmp(&contributions[a]).then(a.cmp(&b)));
    order
}

/// Splits the removed weights across layers in proportion to their momentum
/// contribution.
///
/// Quotas are `round(total · m_i)` (half up). The rounding residue goes to the
/// highest-contribution layer; a negative residue is taken from layers in
/// priority order without going below zero. Quotas above a layer's capacity
/// are clipped and the excess is spread evenly over layers with room left,
/// repeating until it is placed or every layer is full.
pub fn plan_regrowth(
    contributions: &[f64],
    removed_counts: &[usize],
    capacities: &[usize],
) -> Result<RedistributionPlan> {
    let k = contributions.len();
    if removed_counts.len() != k || capacities.len() != k {
        return Err(dim_err!(
            "plan_regrowth: {} contributions, {} removal counts, {} capacities",
            k,
            removed_counts.len(),
            capacities.len()
        ));
    }
    let total: usize = removed_counts.iter().sum();
    let order = priority_order(contributions);

    let mut quota: Vec<usize> = contributions
        .iter()
        .map(|&m| (total as f64 * m + 0.5).floor().max(0.0) as usize)
        .collect();
    let assigned: usize = quota.iter().sum();
    if assigned < total {
        if let Some(&top) = order.first() {
            quota[top] += total - assigned;
        }
    } else {
        let mut surplus = assigned - total;
        for &i in &order {
            let take = surplus.min(quota[i]);
            quota[i] -= take;
            surplus -= take;
            if surplus == 0 {
                break;
            }
        }
    }

    let mut excess = 0;
    for (q, &cap) in quota.iter_mut().zip(capacities) {
        if *q > cap {
            excess += *q - cap;
            *q = cap;
        }
    }
    let rooms: Vec<usize> = quota.iter().zip(capacities).map(|(&q, &c)| c - q).collect();
    let (extra, overflow) = spread_evenly(excess, &rooms, &order);
    for (q, e) in quota.iter_mut().zip(extra) {
        *q += e;
    }

    Ok(RedistributionPlan {
        contributions: contributions.to_vec(),
        removed: removed_counts.to_vec(),
        total_removed: total,
        regrowth_quota: quota,
        overflow,
    })
}

/// Plan in which every layer regrows exactly what it lost.
pub fn identity_plan(contributions: &[f64], removed_counts: &[usize]) -> RedistributionPlan {
    RedistributionPlan {
        contributions: contributions.to_vec(),
        removed: removed_counts.to_vec(),
        total_removed: removed_counts.iter().sum(),
        regrowth_quota: removed_counts.to_vec(),
        overflow: 0,
    }
}
