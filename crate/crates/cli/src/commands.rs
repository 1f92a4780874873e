use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use sparsemo::analysis::{
    aggregate_runs, channel_class_specialization, sweep_configs, write_points_csv, write_runs_csv, MeanSe, SweepRun,
};
use sparsemo::checkpoint::{load_checkpoint, load_mask_trace};
use sparsemo::harness::{load_mnist, train_with, ExperimentConfig, ExperimentData, RunRecord, RunWriter};
use sparsemo::speedup::{aggregate_speedup, read_layer_spec};
use sparsemo::StrategyConfig;

use crate::args::{AblateArgs, AnalyzeArgs, ExperimentArgs, SpeedupArgs, SplitArg, SweepArgs, TrainArgs};

fn pool(exp: &ExperimentArgs) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = exp.jobs {
        b = b.num_threads(j.max(1));
    }
    Ok(b.build()?)
}

fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let mnist = load_mnist(&cfg.data_dir)
        .with_context(|| format!("loading MNIST from {}", cfg.data_dir.display()))?;
    Ok(ExperimentData::prepare(&mnist, cfg)?)
}

/// One run in `dir`; returns its record.
fn run_one(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64, dir: &Path) -> Result<RunRecord> {
    let mut writer = RunWriter::create(dir, cfg)?;
    let out = train_with(cfg, data, seed, &mut writer, None)?;
    writer.finish(&out.record, &out.network, &out.state)?;
    eprintln!(
        "{}: seed {seed} test error {}",
        dir.display(),
        out.record
            .test_error
            .map_or_else(|| format!("n/a ({:?})", out.record.status), |e| format!("{:.4}", e))
    );
    Ok(out.record)
}

fn test_error(r: &RunRecord) -> f64 {
    r.test_error.unwrap_or(f64::NAN)
}

fn summarize(records: &[RunRecord]) -> Option<MeanSe> {
    let errs: Vec<f64> = records.iter().map(test_error).filter(|e| e.is_finite()).collect();
    MeanSe::from_values(&errs).ok()
}

/// `summary.json`: per-seed test errors plus mean ± standard error.
fn write_summary(dir: &Path, label: &str, cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Option<MeanSe>> {
    let stats = summarize(records);
    let runs: Vec<_> = records
        .iter()
        .map(|r| json!({ "seed": r.seed, "test_error": r.test_error, "status": r.status }))
        .collect();
    let summary = json!({
        "label": label,
        "model": cfg.model,
        "strategy": cfg.strategy.to_string(),
        "density": cfg.sparsity.density,
        "dense_baseline": cfg.dense_baseline,
        "epochs": cfg.epochs,
        "runs": runs,
        "test_error": stats,
    });
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(stats)
}

fn run_seeds(cfg: &ExperimentConfig, data: &ExperimentData, dir: &Path, exp: &ExperimentArgs) -> Result<Vec<RunRecord>> {
    pool(exp)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_one(cfg, data, seed, &dir.join(format!("seed-{seed}"))))
            .collect()
    })
}

fn describe(stats: Option<MeanSe>, records: &[RunRecord]) -> String {
    match (stats, records) {
        (Some(s), _) => format!("{:.4} ± {:.4} (n={})", s.mean, s.std_error, s.n),
        (None, [r]) => format!("{:.4} (seed {})", test_error(r), r.seed),
        _ => "n/a".into(),
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    let data = load_data(&cfg)?;
    let dir = cfg.output_dir.clone();
    let records = run_seeds(&cfg, &data, &dir, &a.exp)?;
    let stats = write_summary(&dir, "train", &cfg, &records)?;
    println!("test error {}", describe(stats, &records));
    Ok(())
}

fn cell_name(s: &StrategyConfig) -> String {
    s.to_string().replace('/', "-")
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let base = a.exp.resolve()?;
    let data = load_data(&base)?;
    let cells = a.cells.clone().unwrap_or_else(|| StrategyConfig::all().to_vec());
    let mut rows = Vec::new();
    for cell in cells {
        let cfg = ExperimentConfig {
            strategy: cell,
            ..base.clone()
        };
        let dir = base.output_dir.join(cell_name(&cell));
        let records = run_seeds(&cfg, &data, &dir, &a.exp)?;
        let stats = write_summary(&dir, &cell.to_string(), &cfg, &records)?;
        println!("{cell}: {}", describe(stats, &records));
        rows.push((cell, stats));
    }
    let reference = rows
        .iter()
        .find(|(c, _)| *c == StrategyConfig::default())
        .and_then(|(_, s)| *s);
    let mut out = File::create(base.output_dir.join("ablation.csv"))?;
    writeln!(out, "strategy,n,mean,std_error,ci95,delta_vs_momentum_momentum")?;
    for (cell, s) in &rows {
        match s {
            Some(s) => writeln!(
                out,
                "{cell},{},{},{},{},{}",
                s.n,
                s.mean,
                s.std_error,
                s.ci95,
                reference.map_or(f64::NAN, |r| s.mean - r.mean)
            )?,
            None => writeln!(out, "{cell},0,,,,")?,
        }
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let base = a.exp.resolve()?;
    let data = load_data(&base)?;
    let configs = sweep_configs(&base, a.axis, &a.values)?;
    let jobs: Vec<(&String, &ExperimentConfig, u64)> = configs
        .iter()
        .flat_map(|(v, c)| c.seeds.iter().map(move |&s| (v, c, s)))
        .collect();
    let dir = base.output_dir.clone();
    let records: Vec<RunRecord> = pool(&a.exp)?.install(|| {
        jobs.par_iter()
            .map(|(v, c, s)| run_one(c, &data, *s, &dir.join(format!("{}-{v}", a.axis)).join(format!("seed-{s}"))))
            .collect::<Result<_>>()
    })?;
    let runs: Vec<SweepRun> = jobs
        .iter()
        .zip(&records)
        .map(|((v, _, s), r)| SweepRun {
            axis: a.axis,
            value: (*v).clone(),
            seed: *s,
            test_error: test_error(r),
        })
        .collect();
    let points = aggregate_runs(&runs)?;
    fs::create_dir_all(&dir)?;
    write_runs_csv(&runs, &mut File::create(dir.join("sweep_runs.csv"))?)?;
    write_points_csv(&points, &mut File::create(dir.join("sweep_summary.csv"))?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&points)?)?;
    for p in &points {
        println!(
            "{}={}: {:.4} ± {:.4} (95% ±{:.4}, n={}, diverged {})",
            p.axis, p.value, p.stats.mean, p.stats.std_error, p.stats.ci95, p.stats.n, p.diverged
        );
    }
    Ok(())
}

pub fn speedup(a: &SpeedupArgs) -> Result<()> {
    let (trace_path, layers_path, default_out): (PathBuf, PathBuf, Option<PathBuf>) = match (&a.run_dir, &a.trace, &a.layers)
    {
        (Some(d), _, _) => (d.join("masks.trace"), d.join("layers.csv"), Some(d.clone())),
        (None, Some(t), Some(l)) => (t.clone(), l.clone(), None),
        _ => bail!("give --run-dir or both --trace and --layers"),
    };
    let trace = load_mask_trace(&trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let models = read_layer_spec(BufReader::new(
        File::open(&layers_path).with_context(|| format!("opening {}", layers_path.display()))?,
    ))?;
    let keep: Vec<bool> = models.iter().map(|m| !a.conv_only || m.geometry.is_conv()).collect();
    if !keep.iter().any(|&k| k) {
        bail!("no layers left to estimate");
    }
    let models: Vec<_> = models.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(m, _)| m).collect();
    let masks: Vec<Vec<_>> = trace
        .into_iter()
        .map(|t| t.masks.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(m, _)| m).collect())
        .collect();
    let report = aggregate_speedup(&masks, &models)?;
    report.write_table(&a.name, &mut io::stdout().lock())?;
    if let Some(dir) = a.out.clone().or(default_out) {
        fs::create_dir_all(&dir)?;
        report.write_table(&a.name, &mut File::create(dir.join("speedup.tsv"))?)?;
        fs::write(dir.join("speedup.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let (net, _) = load_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let mnist = load_mnist(&a.data_dir).with_context(|| format!("loading MNIST from {}", a.data_dir.display()))?;
    let data = match a.split {
        SplitArg::Train => mnist.train,
        SplitArg::Test => mnist.test,
    };
    let data = match a.max_examples {
        Some(n) => data.take(n)?,
        None => data,
    };
    let profile = channel_class_specialization(&net, &data, a.layer, a.reduction.into(), 500)?;
    match &a.out {
        Some(p) => profile.write_csv(&mut File::create(p)?)?,
        None => profile.write_csv(&mut io::stdout().lock())?,
    }
    eprintln!(
        "layer {}: mean specialization {:.4}, {} dead of {} channels",
        a.layer,
        profile.mean_specialization(),
        profile.dead.iter().filter(|&&d| d).count(),
        profile.dead.len()
    );
    Ok(())
}
