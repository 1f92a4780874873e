//! Redistribution and growth policies for the ablation matrix.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::LayerState;
use crate::scheduler::{enable, identity_plan, plan_regrowth, regrow, RedistributionPlan};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedistributionKind {
    /// Regrowth quotas proportional to each layer's momentum contribution.
    #[default]
    Momentum,
    /// Each layer regrows what it lost.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    /// Largest momentum magnitude among missing weights.
    #[default]
    Momentum,
    /// Uniformly random missing weights.
    Random,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub redistribution: RedistributionKind,
    pub growth: GrowthKind,
}

impl StrategyConfig {
    pub fn new(redistribution: RedistributionKind, growth: GrowthKind) -> Self {
        Self {
            redistribution,
            growth,
        }
    }

    /// The four ablation cells, default first.
    pub fn all() -> [StrategyConfig; 4] {
        use GrowthKind as G;
        use RedistributionKind as R;
        [
            Self::new(R::Momentum, G::Momentum),
            Self::new(R::Momentum, G::Random),
            Self::new(R::None, G::Momentum),
            Self::new(R::None, G::Random),
        ]
    }
}

impl fmt::Display for StrategyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = match self.redistribution {
            RedistributionKind::Momentum => "momentum",
            RedistributionKind::None => "none",
        };
        let g = match self.growth {
            GrowthKind::Momentum => "momentum",
            GrowthKind::Random => "random",
        };
        write!(f, "{r}/{g}")
    }
}

impl FromStr for StrategyConfig {
    type Err = Error;

    /// Parses `redistribution/growth`, e.g. `none/random`.
    fn from_str(s: &str) -> Result<Self> {
        let (r, g) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("strategy `{s}` is not `redistribution/growth`")))?;
        let redistribution = match r {
            "momentum" => RedistributionKind::Momentum,
            "none" => RedistributionKind::None,
            other => return Err(Error::Config(format!("unknown redistribution `{other}`"))),
        };
        let growth = match g {
            "momentum" => GrowthKind::Momentum,
            "random" => GrowthKind::Random,
            other => return Err(Error::Config(format!("unknown growth `{other}`"))),
        };
        Ok(Self::new(redistribution, growth))
    }
}

pub trait RedistributionPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn plan(&self, contributions: &[f64], removed: &[usize], capacities: &[usize]) -> Result<RedistributionPlan>;
}

pub trait GrowthPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    /// Enables `quota` missing positions and returns them, ascending.
    fn grow(&self, state: &mut LayerState, quota: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>>;
}

pub struct MomentumRedistribution;

impl RedistributionPolicy for MomentumRedistribution {
    fn name(&self) -> &'static str {
        "momentum"
    }

    fn plan(&self, contributions: &[f64], removed: &[usize], capacities: &[usize]) -> Result<RedistributionPlan> {
        plan_regrowth(contributions, removed, capacities)
    }
}

pub struct NoRedistribution;

impl RedistributionPolicy for NoRedistribution {
    fn name(&self) -> &'static str {
        "none"
    }

    fn plan(&self, contributions: &[f64], removed: &[usize], _capacities: &[usize]) -> Result<RedistributionPlan> {
        Ok(identity_plan(contributions, removed))
    }
}

pub struct MomentumGrowth;

impl GrowthPolicy for MomentumGrowth {
    fn name(&self) -> &'static str {
        "momentum"
    }

    fn grow(&self, state: &mut LayerState, quota: usize, _rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        regrow(state, quota)
    }
}

pub struct RandomGrowth;

impl GrowthPolicy for RandomGrowth {
    fn name(&self) -> &'static str {
        "random"
    }

    fn grow(&self, state: &mut LayerState, quota: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        let missing: Vec<usize> = state
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
        let mut chosen: Vec<usize> = index::sample(rng, missing.len(), quota)
            .into_iter()
            .map(|i| missing[i])
            .collect();
        chosen.sort_unstable();
        enable(state, &chosen);
        Ok(chosen)
    }
}

pub struct Strategy {
    pub config: StrategyConfig,
    pub redistribution: Box<dyn RedistributionPolicy>,
    pub growth: Box<dyn GrowthPolicy>,
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Strategy").field("config", &self.config).finish()
    }
}

pub fn select_strategy(config: StrategyConfig) -> Strategy {
    let redistribution: Box<dyn RedistributionPolicy> = match config.redistribution {
        RedistributionKind::Momentum => Box::new(MomentumRedistribution),
        RedistributionKind::None => Box::new(NoRedistribution),
    };
    let growth: Box<dyn GrowthPolicy> = match config.growth {
        GrowthKind::Momentum => Box::new(MomentumGrowth),
        GrowthKind::Random => Box::new(RandomGrowth),
    };
    Strategy {
        config,
        redistribution,
        growth,
    }
}
