use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::stats::MeanSe;
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PruneRate,
    /// Sets both the SGD momentum and the gradient smoothing factor.
    Momentum,
    ScheduleFamily,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::PruneRate => "prune_rate",
            SweepAxis::Momentum => "momentum",
            SweepAxis::ScheduleFamily => "schedule_family",
        }
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{} value `{value}` is not a number", self.name())))
        };
        match self {
            SweepAxis::PruneRate => cfg.prune.initial_rate = num()?,
            SweepAxis::Momentum => {
                let a = num()?;
                cfg.optimizer.momentum_alpha = a;
                cfg.optimizer.ema_alpha = a;
            }
            SweepAxis::ScheduleFamily => cfg.prune.family = value.parse()?,
        }
        cfg.validate()
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "prune_rate" => Ok(SweepAxis::PruneRate),
            "momentum" => Ok(SweepAxis::Momentum),
            "schedule_family" | "schedule" => Ok(SweepAxis::ScheduleFamily),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// One row of the per-run log. A diverged run has a NaN test error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub axis: SweepAxis,
    pub value: String,
    pub seed: u64,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: String,
    pub stats: MeanSe,
    /// Runs excluded because they diverged.
    pub diverged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub points: Vec<SweepPoint>,
}

/// One configuration per value, in the given order.
pub fn sweep_configs(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<Vec<(String, ExperimentConfig)>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if base.seeds.len() < 2 {
        return Err(Error::Config(format!(
            "sweep needs at least 2 seeds per value, got {}",
            base.seeds.len()
        )));
    }
    values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, v)?;
            Ok((v.clone(), cfg))
        })
        .collect()
}

/// Groups the per-run log by value (first-appearance order) and summarizes
/// each group. Depends on nothing but `runs`.
pub fn aggregate_runs(runs: &[SweepRun]) -> Result<Vec<SweepPoint>> {
    let mut keys: Vec<(SweepAxis, &str)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.axis, r.value.as_str())) {
            keys.push((r.axis, &r.value));
        }
    }
    keys.into_iter()
        .map(|(axis, value)| {
            let group: Vec<f64> = runs
                .iter()
                .filter(|r| r.axis == axis && r.value == value)
                .map(|r| r.test_error)
                .collect();
            let finite: Vec<f64> = group.iter().copied().filter(|v| v.is_finite()).collect();
            Ok(SweepPoint {
                axis,
                value: value.to_string(),
                stats: MeanSe::from_values(&finite)?,
                diverged: group.len() - finite.len(),
            })
        })
        .collect()
}

/// Runs every (value, seed) pair through `run`, which returns the test error.
pub fn sensitivity_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    mut run: impl FnMut(&ExperimentConfig, u64) -> Result<f64>,
) -> Result<SweepResult> {
    let configs = sweep_configs(base, axis, values)?;
    let mut runs = Vec::new();
    for (value, cfg) in &configs {
        for &seed in &cfg.seeds {
            runs.push(SweepRun {
                axis,
                value: value.clone(),
                seed,
                test_error: run(cfg, seed)?,
            });
        }
    }
    let points = aggregate_runs(&runs)?;
    Ok(SweepResult { runs, points })
}

pub const RUNS_HEADER: &str = "axis,value,seed,test_error";
pub const POINTS_HEADER: &str = "axis,value,n,mean,std_error,ci95,diverged";

pub fn write_runs_csv(runs: &[SweepRun], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{RUNS_HEADER}")?;
    for r in runs {
        writeln!(w, "{},{},{},{}", r.axis, r.value, r.seed, r.test_error)?;
    }
    Ok(())
}

pub fn read_runs_csv(r: impl BufRead) -> Result<Vec<SweepRun>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != RUNS_HEADER {
        return Err(Error::Format(format!("unexpected sweep log header `{}`", header.trim())));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("sweep log line {}: `{line}`", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(SweepRun {
            axis: f[0].parse().map_err(|_| bad())?,
            value: f[1].to_string(),
            seed: f[2].parse().map_err(|_| bad())?,
            test_error: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

pub fn write_points_csv(points: &[SweepPoint], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{POINTS_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.axis, p.value, p.stats.n, p.stats.mean, p.stats.std_error, p.stats.ci95, p.diverged
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::DecayFamily;

    fn base(seeds: usize) -> ExperimentConfig {
        ExperimentConfig {
            seeds: (0..seeds as u64).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_runs_have_zero_se() {
        let r = sensitivity_sweep(&base(10), SweepAxis::PruneRate, &["0.3".into()], |_, _| Ok(0.0153)).unwrap();
        assert_eq!(r.runs.len(), 10);
        assert_eq!(r.points[0].stats.std_error, 0.0);
        assert_eq!(r.points[0].stats.mean, 0.0153);
    }

    #[test]
    fn axes_change_the_config() {
        let values: Vec<String> = ["0.2", "0.5"].map(String::from).to_vec();
        let cfgs = sweep_configs(&base(2), SweepAxis::PruneRate, &values).unwrap();
        assert_eq!(cfgs[1].1.prune.initial_rate, 0.5);
        let cfgs = sweep_configs(&base(2), SweepAxis::Momentum, &["0.7".into()]).unwrap();
        assert_eq!((cfgs[0].1.optimizer.momentum_alpha, cfgs[0].1.optimizer.ema_alpha), (0.7, 0.7));
        let cfgs = sweep_configs(&base(2), SweepAxis::ScheduleFamily, &["linear".into()]).unwrap();
        assert_eq!(cfgs[0].1.prune.family, DecayFamily::Linear);
        assert!(sweep_configs(&base(2), SweepAxis::PruneRate, &["1.5".into()]).is_err());
        assert!(sweep_configs(&base(2), SweepAxis::PruneRate, &[]).is_err());
    }

    #[test]
    fn too_few_seeds() {
        assert!(matches!(
            sensitivity_sweep(&base(1), SweepAxis::PruneRate, &["0.2".into()], |_, _| Ok(0.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn summary_recomputes_from_log() {
        let mut calls = 0;
        let values: Vec<String> = ["0.2", "0.3"].map(String::from).to_vec();
        let r = sensitivity_sweep(&base(3), SweepAxis::PruneRate, &values, |cfg, seed| {
            calls += 1;
            Ok(cfg.prune.initial_rate / 10.0 + seed as f64 * 1e-3)
        })
        .unwrap();
        assert_eq!(calls, 6);
        let mut log = Vec::new();
        write_runs_csv(&r.runs, &mut log).unwrap();
        let parsed = read_runs_csv(log.as_slice()).unwrap();
        assert_eq!(parsed, r.runs);
        assert_eq!(aggregate_runs(&parsed).unwrap(), r.points);
        // Independent: mean of {0.02, 0.021, 0.022}.
        assert!((r.points[0].stats.mean - 0.021).abs() < 1e-15);
        assert!((r.points[0].stats.std_error - 0.001 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn diverged_runs_are_counted_not_averaged() {
        let runs: Vec<SweepRun> = [0.01, f64::NAN, 0.03, 0.02]
            .iter()
            .enumerate()
            .map(|(i, &e)| SweepRun {
                axis: SweepAxis::Momentum,
                value: "0.9".into(),
                seed: i as u64,
                test_error: e,
            })
            .collect();
        let p = aggregate_runs(&runs).unwrap();
        assert_eq!(p[0].diverged, 1);
        assert_eq!(p[0].stats.n, 3);
        assert!((p[0].stats.mean - 0.02).abs() < 1e-15);
    }
}
