//! The end-of-epoch sparse momentum cycle.
//!
//! 1. Measure each layer's mean momentum magnitude over its active weights
//!    and normalize across layers.
//! 2. Prune the smallest-magnitude weights of every layer.
//! 3. Hand the removed weights back to layers in proportion to their
//!    contribution and grow them where the momentum of missing weights is
//!    largest.

mod plan;
mod schedule;

use std::collections::HashSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{apply_mask, LayerState, SparseNetwork};
use crate::sparsity::magnitude_prune;
use crate::strategy::{Strategy, StrategyConfig};

pub use plan::{identity_plan, plan_regrowth, priority_order, RedistributionPlan};
pub use schedule::{prune_rate_at, DecayFamily, PruneSchedule};

/// Mean `|momentum|` over the active weights of one layer, 0 if none are active.
pub fn mean_active_momentum(state: &LayerState) -> f64 {
    let mut sum = 0f64;
    let mut n = 0usize;
    for (&m, &mask) in state.momentum.data().iter().zip(state.mask.data()) {
        if mask != 0.0 {
            sum += m.abs() as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-layer momentum contributions, normalized to sum to one.
///
/// Layers without active weights contribute 0. If every momentum is zero
/// the contributions fall back to uniform `1/k`.
pub fn compute_contributions(net: &SparseNetwork) -> Result<Vec<f64>> {
    if net.total_active() == 0 {
        return Err(Error::Contract("no layer has an active weight".into()));
    }
    let means: Vec<f64> = net.params().map(mean_active_momentum).collect();
    let total: f64 = means.iter().sum();
    let k = means.len();
    if total == 0.0 || !total.is_finite() {
        return Ok(vec![1.0 / k as f64; k]);
    }
    Ok(means.into_iter().map(|m| m / total).collect())
}

/// `min(p, sparsity_i)`: dense layers are never pruned.
pub fn effective_prune_rate(state: &LayerState, rate: f64) -> f64 {
    rate.min(state.sparsity())
}

/// Enables the `quota` masked positions with the largest momentum magnitude.
/// New weights start at zero. Returns the enabled positions, ascending.
pub fn regrow(state: &mut LayerState, quota: usize) -> Result<Vec<usize>> {
    let momentum = state.momentum.data();
    let mut missing: Vec<usize> = state
        .mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0.0)
        .map(|(j, _)| j)
        .collect();
    if quota > missing.len() {
        return Err(Error::Contract(format!(
            "layer {}: regrowth quota {quota} exceeds {} missing weights",
            state.layer_index,
            missing.len()
        )));
    }
    if quota == 0 {
        return Ok(Vec::new());
    }
    if quota < missing.len() {
        missing.select_nth_unstable_by(quota - 1, |&a, &b| {
            momentum[b].abs().total_cmp(&momentum[a].abs()).then(a.cmp(&b))
        });
    }
    let mut chosen = missing[..quota].to_vec();
    chosen.sort_unstable();
    enable(state, &chosen);
    Ok(chosen)
}

/// Flips the mask on at `positions` with zero weight and zero velocity.
pub(crate) fn enable(state: &mut LayerState, positions: &[usize]) {
    for &j in positions {
        state.mask.data_mut()[j] = 1.0;
        state.weights.data_mut()[j] = 0.0;
        state.velocity.data_mut()[j] = 0.0;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleOptions {
    /// Zero the smoothed gradient at pruned positions.
    pub reset_momentum_on_prune: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCycleStats {
    pub layer_index: usize,
    pub contribution: f64,
    pub prune_rate: f64,
    pub removed: usize,
    pub threshold: f32,
    pub regrown: usize,
    /// Positions pruned and regrown within the same cycle.
    pub churned: usize,
    pub active: usize,
    pub density: f64,
}

/// One serialized record per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub epoch: usize,
    pub prune_rate: f64,
    pub strategy: StrategyConfig,
    pub layers: Vec<LayerCycleStats>,
    pub total_removed: usize,
    pub total_regrown: usize,
    pub overflow: usize,
}

impl CycleReport {
    pub fn total_active(&self) -> usize {
        self.layers.iter().map(|l| l.active).sum()
    }
}

/// Runs prune → redistribute → regrow once with the schedule's rate for `epoch`.
pub fn sparse_momentum_step(
    net: &mut SparseNetwork,
    schedule: &PruneSchedule,
    epoch: usize,
    strategy: &Strategy,
    options: &CycleOptions,
    rng: &mut dyn RngCore,
) -> Result<CycleReport> {
    let rate = schedule.rate_at(epoch)?;
    run_cycle(net, rate, epoch, strategy, options, rng)
}

/// The cycle with an explicit global prune rate.
pub fn run_cycle(
    net: &mut SparseNetwork,
    rate: f64,
    epoch: usize,
    strategy: &Strategy,
    options: &CycleOptions,
    rng: &mut dyn RngCore,
) -> Result<CycleReport> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("prune rate {rate} outside [0, 1]")));
    }
    let k = net.num_params_layers();
    let contributions = if net.total_active() == 0 {
        vec![0.0; k]
    } else {
        compute_contributions(net)?
    };

    let mut decisions = Vec::with_capacity(k);
    let mut rates = Vec::with_capacity(k);
    for state in net.params_mut() {
        let p = effective_prune_rate(state, rate);
        state.prune_rate = p;
        let d = magnitude_prune(state, p)?;
        if options.reset_momentum_on_prune {
            for &j in &d.removed_positions {
                state.momentum.data_mut()[j] = 0.0;
            }
        }
        rates.push(p);
        decisions.push(d);
    }

    let removed: Vec<usize> = decisions.iter().map(|d| d.removed_count).collect();
    let capacities: Vec<usize> = net.params().map(|s| s.numel() - s.active_count()).collect();
    let plan = strategy.redistribution.plan(&contributions, &removed, &capacities)?;

    let mut layers = Vec::with_capacity(k);
    for (i, state) in net.params_mut().enumerate() {
        let grown = strategy.growth.grow(state, plan.regrowth_quota[i], rng)?;
        let pruned: HashSet<usize> = decisions[i].removed_positions.iter().copied().collect();
        let churned = grown.iter().filter(|j| pruned.contains(j)).count();
        apply_mask(state);
        layers.push(LayerCycleStats {
            layer_index: state.layer_index,
            contribution: contributions[i],
            prune_rate: rates[i],
            removed: removed[i],
            threshold: decisions[i].threshold,
            regrown: grown.len(),
            churned,
            active: state.active_count(),
            density: state.density(),
        });
    }

    let total_regrown = layers.iter().map(|l| l.regrown).sum();
    Ok(CycleReport {
        epoch,
        prune_rate: rate,
        strategy: strategy.config,
        layers,
        total_removed: plan.total_removed,
        total_regrown,
        overflow: plan.overflow,
    })
}
