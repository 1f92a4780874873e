//! Initial mask construction and within-layer magnitude pruning.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::spread_evenly;
use crate::error::{Error, Result};
use crate::network::{apply_mask, LayerDescriptor, LayerState, ParamKind, SparseNetwork};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// No layer starts dense; the weights the selected layers would have
    /// held densely are spread over all layers instead.
    #[default]
    FullySparse,
    /// Selected layers are kept dense.
    PartiallyDense,
}

/// Which layers count as "dense" layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseLayerSelector {
    pub first_conv: bool,
    pub downsampling_convs: bool,
    pub last_linear: bool,
    /// Extra layers selected by parametric index.
    pub layers: Vec<usize>,
}

impl Default for DenseLayerSelector {
    fn default() -> Self {
        Self {
            first_conv: true,
            downsampling_convs: true,
            last_linear: true,
            layers: Vec::new(),
        }
    }
}

impl DenseLayerSelector {
    pub fn none() -> Self {
        Self {
            first_conv: false,
            downsampling_convs: false,
            last_linear: false,
            layers: Vec::new(),
        }
    }

    pub fn selects(&self, d: &LayerDescriptor) -> bool {
        let conv = matches!(d.kind, ParamKind::Conv { .. });
        (self.first_conv && conv && d.first_conv)
            || (self.downsampling_convs && conv && d.downsampling)
            || (self.last_linear && d.last_linear)
            || self.layers.contains(&d.layer_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsityConfig {
    /// Fraction of weights kept, in `(0, 1]`.
    pub density: f64,
    pub mode: SparsityMode,
    pub dense_layers: DenseLayerSelector,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            density: 0.05,
            mode: SparsityMode::FullySparse,
            dense_layers: DenseLayerSelector::default(),
        }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density {} outside (0, 1]", self.density)));
        }
        Ok(())
    }
}

/// Number of active weights each layer starts with.
pub fn layer_budgets(descriptors: &[LayerDescriptor], cfg: &SparsityConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let d = cfg.density;
    let base: Vec<usize> = descriptors
        .iter()
        .map(|l| ((d * l.numel as f64).round() as usize).min(l.numel))
        .collect();
    let selected: Vec<bool> = descriptors.iter().map(|l| cfg.dense_layers.selects(l)).collect();
    Ok(match cfg.mode {
        SparsityMode::PartiallyDense => descriptors
            .iter()
            .zip(&base)
            .zip(&selected)
            .map(|((l, &b), &dense)| if dense { l.numel } else { b })
            .collect(),
        SparsityMode::FullySparse => {
            let extra: usize = descriptors
                .iter()
                .zip(&base)
                .zip(&selected)
                .filter(|(_, &dense)| dense)
                .map(|((l, &b), _)| l.numel - b)
                .sum();
            let rooms: Vec<usize> = descriptors.iter().zip(&base).map(|(l, &b)| l.numel - b).collect();
            let order: Vec<usize> = (0..descriptors.len()).collect();
            let (add, _) = spread_evenly(extra, &rooms, &order);
            base.iter().zip(add).map(|(b, a)| b + a).collect()
        }
    })
}

/// Builds one mask per parametric layer with uniformly random active positions.
pub fn init_masks<R: Rng + ?Sized>(
    net: &SparseNetwork,
    cfg: &SparsityConfig,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    let budgets = layer_budgets(&net.descriptors(), cfg)?;
    Ok(net
        .params()
        .zip(budgets)
        .map(|(s, keep)| {
            let n = s.numel();
            if keep == n {
                return Tensor::ones(s.weights.shape());
            }
            let mut mask = Tensor::zeros(s.weights.shape());
            for j in index::sample(rng, n, keep) {
                mask.data_mut()[j] = 1.0;
            }
            mask
        })
        .collect())
}

/// Installs fresh masks from [`init_masks`] and zeroes the masked weights.
pub fn apply_initial_masks<R: Rng + ?Sized>(
    net: &mut SparseNetwork,
    cfg: &SparsityConfig,
    rng: &mut R,
) -> Result<()> {
    let masks = init_masks(net, cfg, rng)?;
    for (s, m) in net.params_mut().zip(masks) {
        s.mask = m;
        apply_mask(s);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub layer_index: usize,
    /// Largest magnitude among the removed weights, 0 if nothing was removed.
    pub threshold: f32,
    pub removed_count: usize,
    /// Flat positions, ascending.
    pub removed_positions: Vec<usize>,
}

/// `floor(rate · active)`, tolerant of representation error in `rate`.
pub fn removal_count(rate: f64, active: usize) -> usize {
    ((rate * active as f64 + 1e-9).floor() as usize).min(active)
}

/// Removes the `floor(p · active)` active weights of smallest magnitude,
/// ties broken by flat index.
pub fn magnitude_prune(state: &mut LayerState, rate: f64) -> Result<PruneDecision> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Contract(format!("prune rate {rate} outside [0, 1]")));
    }
    let weights = state.weights.data();
    let mut active: Vec<usize> = state
        .mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(j, _)| j)
        .collect();
    let count = removal_count(rate, active.len());
    let mut decision = PruneDecision {
        layer_index: state.layer_index,
        threshold: 0.0,
        removed_count: count,
        removed_positions: Vec::new(),
    };
    if count == 0 {
        return Ok(decision);
    }
    let by_magnitude = |a: &usize, b: &usize| -> Ordering {
        weights[*a].abs().total_cmp(&weights[*b].abs()).then(a.cmp(b))
    };
    if count < active.len() {
        active.select_nth_unstable_by(count - 1, by_magnitude);
    }
    let mut removed = active[..count].to_vec();
    removed.sort_unstable();
    decision.threshold = removed.iter().map(|&j| weights[j].abs()).fold(0.0, f32::max);
    for &j in &removed {
        state.mask.data_mut()[j] = 0.0;
    }
    apply_mask(state);
    decision.removed_positions = removed;
    Ok(decision)
}
