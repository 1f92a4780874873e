use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFamily {
    #[default]
    Cosine,
    Linear,
}

impl fmt::Display for DecayFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayFamily::Cosine => "cosine",
            DecayFamily::Linear => "linear",
        })
    }
}

impl FromStr for DecayFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(DecayFamily::Cosine),
            "linear" => Ok(DecayFamily::Linear),
            other => Err(Error::Config(format!("unknown decay family `{other}`"))),
        }
    }
}

/// Prune rate annealed from `initial_rate` at epoch 0 to exactly zero at the
/// last epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneSchedule {
    pub initial_rate: f64,
    pub family: DecayFamily,
    pub total_epochs: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            initial_rate: 0.2,
            family: DecayFamily::Cosine,
            total_epochs: 100,
        }
    }
}

impl PruneSchedule {
    pub fn new(initial_rate: f64, family: DecayFamily, total_epochs: usize) -> Self {
        Self {
            initial_rate,
            family,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs < 2 {
            return Err(Error::Config(format!(
                "prune schedule needs at least 2 epochs, got {}",
                self.total_epochs
            )));
        }
        if !(0.0..=1.0).contains(&self.initial_rate) {
            return Err(Error::Config(format!("initial prune rate {} outside [0, 1]", self.initial_rate)));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch >= self.total_epochs {
            return Err(Error::Config(format!(
                "epoch {epoch} beyond a {}-epoch schedule",
                self.total_epochs
            )));
        }
        let last = self.total_epochs - 1;
        if epoch == last {
            return Ok(0.0);
        }
        let t = epoch as f64 / last as f64;
        Ok(match self.family {
            DecayFamily::Cosine => self.initial_rate * 0.5 * (1.0 + (PI * t).cos()),
            DecayFamily::Linear => self.initial_rate * (1.0 - t),
        })
    }
}

/// Free-function form of [`PruneSchedule::rate_at`].
pub fn prune_rate_at(schedule: &PruneSchedule, epoch: usize) -> Result<f64> {
    schedule.rate_at(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        for family in [DecayFamily::Cosine, DecayFamily::Linear] {
            let s = PruneSchedule::new(0.3, family, 10);
            assert_eq!(s.rate_at(0).unwrap(), 0.3);
            assert_eq!(s.rate_at(9).unwrap(), 0.0);
        }
    }

    #[test]
    fn cosine_midpoint() {
        let s = PruneSchedule::new(0.2, DecayFamily::Cosine, 3);
        assert!((s.rate_at(1).unwrap() - 0.1).abs() < 1e-15);
        let s = PruneSchedule::new(0.2, DecayFamily::Linear, 3);
        assert!((s.rate_at(1).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            PruneSchedule::new(0.2, DecayFamily::Cosine, 1).rate_at(0),
            Err(Error::Config(_))
        ));
        assert!(PruneSchedule::new(0.2, DecayFamily::Cosine, 5).rate_at(5).is_err());
    }

    #[test]
    fn nonincreasing() {
        for family in [DecayFamily::Cosine, DecayFamily::Linear] {
            for t in 2..60 {
                let s = PruneSchedule::new(0.5, family, t);
                let rates: Vec<f64> = (0..t).map(|e| s.rate_at(e).unwrap()).collect();
                assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{family} {t}");
            }
        }
    }
}
