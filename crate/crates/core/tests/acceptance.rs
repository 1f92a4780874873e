//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (bypassing the test harness capture) and then asserts.
//!
//! The MNIST criteria read the IDX files from `SPARSEMO_MNIST_DIR`, falling
//! back to `data/mnist` at the workspace root.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsemo::analysis::{channel_class_specialization, pooled_std_error, ActivationReduction, ClassActivationProfile, MeanSe};
use sparsemo::harness::{load_mnist, train, train_with, ExperimentConfig, ExperimentData, Mnist, Preset, RunRecord, RunStatus};
use sparsemo::network::{momentum_update, ModelId, NetworkBuilder, OptimizerConfig};
use sparsemo::scheduler::{effective_prune_rate, plan_regrowth, run_cycle, DecayFamily, PruneSchedule};
use sparsemo::speedup::{aggregate_speedup, empty_channel_fraction, LayerCostModel, LayerGeometry};
use sparsemo::strategy::{select_strategy, StrategyConfig};
use sparsemo::tensor::{grad_check, ConvGeometry};
use sparsemo::{CycleOptions, Layer, LayerState, SparseNetwork, Tensor};

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id:>2}: {} {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("SPARSEMO_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist() -> &'static Mnist {
    static DATA: OnceLock<Mnist> = OnceLock::new();
    DATA.get_or_init(|| {
        load_mnist(mnist_dir()).unwrap_or_else(|e| panic!("MNIST not found in {}: {e}", mnist_dir().display()))
    })
}

fn experiment_data() -> &'static ExperimentData {
    static DATA: OnceLock<ExperimentData> = OnceLock::new();
    DATA.get_or_init(|| ExperimentData::prepare(mnist(), &ExperimentConfig::default()).unwrap())
}

/// Runs every seed of `cfg`, spread over the available cores.
fn run_all(cfg: &ExperimentConfig) -> Vec<RunRecord> {
    let data = experiment_data();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cfg.seeds.len());
    let chunks: Vec<Vec<u64>> = (0..workers)
        .map(|w| cfg.seeds.iter().copied().skip(w).step_by(workers).collect())
        .collect();
    let mut out: Vec<RunRecord> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|seeds| s.spawn(move || seeds.iter().map(|&seed| train(cfg, data, seed).unwrap()).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    out.sort_by_key(|r| r.seed);
    out
}

fn desk(strategy: &str, prune_rate: f64, seeds: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::MnistDesk);
    cfg.strategy = strategy.parse().unwrap();
    cfg.prune.initial_rate = prune_rate;
    cfg.seeds = (0..seeds).collect();
    cfg
}

fn momentum_runs() -> &'static [RunRecord] {
    static RUNS: OnceLock<Vec<RunRecord>> = OnceLock::new();
    RUNS.get_or_init(|| run_all(&desk("momentum/momentum", 0.2, 10)))
}

fn test_errors(runs: &[RunRecord]) -> Vec<f64> {
    runs.iter()
        .map(|r| {
            assert_eq!(r.status, RunStatus::Completed, "seed {} diverged", r.seed);
            r.test_error.unwrap()
        })
        .collect()
}

fn pct(s: &MeanSe) -> String {
    format!("{:.3}% ± {:.3}% (n={})", 100.0 * s.mean, 100.0 * s.std_error, s.n)
}

#[test]
fn c01_mnist_reproduction() {
    let desk_stats = MeanSe::from_values(&test_errors(momentum_runs())).unwrap();
    let mut full = ExperimentConfig::preset(Preset::Mnist);
    full.seeds = (0..10).collect();
    let full_runs = run_all(&full);
    let full_stats = MeanSe::from_values(&test_errors(&full_runs)).unwrap();
    let minutes = full_runs
        .iter()
        .map(|r| r.epochs.iter().map(|e| e.train_seconds + e.cycle_seconds).sum::<f64>() / 60.0)
        .fold(0.0, f64::max);
    let pass = full_stats.mean <= 0.018 && desk_stats.mean <= 0.025 && minutes <= 30.0;
    report(
        1,
        "LeNet-300-100 at 5% weights",
        pass,
        &format!(
            "100 epochs {} (limit 1.8%), 30 epochs {} (limit 2.5%), slowest run {minutes:.1} min",
            pct(&full_stats),
            pct(&desk_stats)
        ),
    );
}

#[test]
fn c02_ablation_ordering() {
    let mm = MeanSe::from_values(&test_errors(momentum_runs())).unwrap();
    let nr = MeanSe::from_values(&test_errors(&run_all(&desk("none/random", 0.2, 10)))).unwrap();
    let delta = nr.mean - mm.mean;
    let pooled = pooled_std_error(&mm, &nr);
    let pass = delta > 0.0 && mm.mean - nr.mean <= pooled;
    report(
        2,
        "ablation none/random vs momentum/momentum",
        pass,
        &format!(
            "momentum/momentum {}, none/random {}, delta {:+.3}%, pooled SE {:.3}%",
            pct(&mm),
            pct(&nr),
            100.0 * delta,
            100.0 * pooled
        ),
    );
}

#[test]
fn c03_dense_equivalence() {
    let data = experiment_data();
    let mut ok = true;
    let mut compared = 0usize;
    for model in [ModelId::LeNet300100, ModelId::LeNet5Caffe] {
        let mut sparse = ExperimentConfig::preset(Preset::MnistDesk);
        sparse.model = model;
        sparse.epochs = 3;
        sparse.sparsity.density = 1.0;
        sparse.lr_decay.every_batches = 50;
        let small = ExperimentData {
            train: data.train.take(5000).unwrap(),
            validation: data.validation.take(1000).unwrap(),
            test: data.test.take(2000).unwrap(),
        };
        let mut dense = sparse.clone();
        dense.dense_baseline = true;
        let a = train_with(&sparse, &small, 11, &mut (), None).unwrap();
        let b = train_with(&dense, &small, 11, &mut (), None).unwrap();
        for (x, y) in a.network.params().zip(b.network.params()) {
            for (t, u) in [(&x.weights, &y.weights), (&x.bias, &y.bias), (&x.velocity, &y.velocity)] {
                compared += t.numel();
                ok &= t.data().iter().zip(u.data()).all(|(p, q)| p.to_bits() == q.to_bits());
            }
        }
        ok &= a.record.test_error == b.record.test_error;
        for (e, f) in a.record.epochs.iter().zip(&b.record.epochs) {
            ok &= e.train_loss.to_bits() == f.train_loss.to_bits() && e.validation_loss.to_bits() == f.validation_loss.to_bits();
        }
    }
    report(
        3,
        "d=1 sparse run equals dense run",
        ok,
        &format!("{compared} parameters and all losses compared bitwise over 2 models x 3 epochs"),
    );
}

fn random_net(rng: &mut ChaCha8Rng) -> SparseNetwork {
    let layers = rng.gen_range(2..=10);
    let mut b = NetworkBuilder::new(&[rng.gen_range(2..12)]);
    for i in 0..layers {
        b = b.linear(rng.gen_range(2..12));
        if i + 1 < layers {
            b = b.relu();
        }
    }
    let mut net = b.build(rng).unwrap();
    for s in net.params_mut() {
        let style = rng.gen_range(0..5);
        let d = match style {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..1.0),
        };
        let mask: Vec<f32> = (0..s.numel()).map(|_| if rng.gen_bool(d) { 1.0 } else { 0.0 }).collect();
        s.set_mask(Tensor::new(s.weights.shape(), mask).unwrap()).unwrap();
        s.momentum = if rng.gen_bool(0.1) {
            Tensor::zeros(s.weights.shape())
        } else {
            let scale = rng.gen_range(0.01..10.0);
            Tensor::uniform(s.weights.shape(), -scale, scale, rng)
        };
    }
    net
}

#[test]
fn c04_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    let mut with_overflow = 0;
    for trial in 0..1000 {
        let mut net = random_net(&mut rng);
        if net.total_active() == 0 {
            net.param_mut(0).unwrap().mask.data_mut()[0] = 1.0;
        }
        let before = net.total_active();
        let strategy = select_strategy(StrategyConfig::all()[rng.gen_range(0..4)]);
        let rate = if rng.gen_bool(0.1) { 1.0 } else { rng.gen_range(0.0..1.0) };
        let options = CycleOptions {
            reset_momentum_on_prune: rng.gen_bool(0.5),
        };
        let r = run_cycle(&mut net, rate, trial, &strategy, &options, &mut rng as &mut dyn RngCore).unwrap();
        let quotas: usize = r.layers.iter().map(|l| l.regrown).sum();
        if quotas + r.overflow != r.total_removed {
            failures.push(format!("trial {trial}: quotas {quotas} + overflow {} != removed {}", r.overflow, r.total_removed));
        }
        if r.overflow == 0 && net.total_active() != before {
            failures.push(format!("trial {trial}: {before} -> {} nonzeros", net.total_active()));
        }
        with_overflow += usize::from(r.overflow > 0);
        if net.check_invariants().is_err() {
            failures.push(format!("trial {trial}: mask invariant broken"));
        }
    }
    report(
        4,
        "conservation over 1000 random cycles",
        failures.is_empty(),
        &format!(
            "{} violations, {with_overflow} cycles with overflow{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    );
}

/// Rounds, fixes the residue, clips, then hands out the clipped excess one
/// unit at a time to the open layer that has received the fewest so far.
fn brute_force_plan(m: &[f64], removed: &[usize], caps: &[usize]) -> (Vec<usize>, usize) {
    let total: usize = removed.iter().sum();
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&a, &b| m[b].partial_cmp(&m[a]).unwrap().then(a.cmp(&b)));
    let mut q: Vec<i64> = m.iter().map(|&x| (total as f64 * x + 0.5).floor() as i64).collect();
    let mut residue = total as i64 - q.iter().sum::<i64>();
    if residue > 0 {
        q[order[0]] += residue;
    }
    for &i in &order {
        while residue < 0 && q[i] > 0 {
            q[i] -= 1;
            residue += 1;
        }
    }
    let mut q: Vec<usize> = q.into_iter().map(|v| v as usize).collect();
    let mut excess = 0;
    for i in 0..q.len() {
        if q[i] > caps[i] {
            excess += q[i] - caps[i];
            q[i] = caps[i];
        }
    }
    let mut received = vec![0usize; q.len()];
    let mut overflow = 0;
    for _ in 0..excess {
        let target = order.iter().copied().filter(|&i| q[i] < caps[i]).min_by_key(|&i| received[i]);
        match target {
            Some(i) => {
                q[i] += 1;
                received[i] += 1;
            }
            None => overflow += 1,
        }
    }
    (q, overflow)
}

#[test]
fn c05_edge_case_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = Vec::new();
    let mut clipped = 0;
    for instance in 0..500 {
        let k = rng.gen_range(1..=10);
        let raw: Vec<f64> = (0..k)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
            .collect();
        let sum: f64 = raw.iter().sum();
        let m: Vec<f64> = if sum == 0.0 { vec![1.0 / k as f64; k] } else { raw.iter().map(|v| v / sum).collect() };
        let removed: Vec<usize> = (0..k).map(|_| rng.gen_range(0..200)).collect();
        let caps: Vec<usize> = (0..k)
            .map(|_| if rng.gen_bool(0.3) { rng.gen_range(0..20) } else { rng.gen_range(0..400) })
            .collect();
        let plan = plan_regrowth(&m, &removed, &caps).unwrap();
        let (q, overflow) = brute_force_plan(&m, &removed, &caps);
        clipped += usize::from(q.iter().zip(&caps).any(|(a, b)| a == b));
        if plan.regrowth_quota != q || plan.overflow != overflow {
            mismatches.push(format!("instance {instance}: {:?}/{} vs oracle {q:?}/{overflow}", plan.regrowth_quota, plan.overflow));
        }
    }

    let mut rate_mismatch = 0;
    for _ in 0..2000 {
        let n = rng.gen_range(1..300);
        let mut s = LayerState::new(0, Tensor::ones(&[1, n]), Tensor::zeros(&[1]));
        let d = [0.0, 1.0, rng.gen_range(0.0..1.0)][rng.gen_range(0..3)];
        let mask: Vec<f32> = (0..n).map(|_| if rng.gen_bool(d) { 1.0 } else { 0.0 }).collect();
        let active = mask.iter().filter(|&&v| v == 1.0).count();
        s.set_mask(Tensor::new(&[1, n], mask).unwrap()).unwrap();
        let p = [0.0, 1.0, rng.gen_range(0.0..1.0)][rng.gen_range(0..3)];
        let sparsity = 1.0 - active as f64 / n as f64;
        rate_mismatch += usize::from(effective_prune_rate(&s, p) != p.min(sparsity));
    }
    report(
        5,
        "plan_regrowth vs brute force, effective prune rate",
        mismatches.is_empty() && rate_mismatch == 0,
        &format!(
            "{} of 500 plans differ ({clipped} hit a capacity), {rate_mismatch} of 2000 rates differ{}",
            mismatches.len(),
            mismatches.first().map(|m| format!("; first: {m:?}")).unwrap_or_default()
        ),
    );
}

const EPS: f32 = 1e-3;

/// Which ReLUs are on and which input wins each pooling window.
fn kink_signature(net: &SparseNetwork, x: &Tensor) -> Vec<usize> {
    let pass = net.forward(x).unwrap();
    let mut sig = Vec::new();
    for (pos, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Relu => sig.extend(pass.activations[pos + 1].data().iter().map(|&a| usize::from(a > 0.0))),
            Layer::MaxPool { .. } => sig.extend_from_slice(pass.pool_argmax(pos).unwrap()),
            _ => {}
        }
    }
    sig
}

/// grad_check over `count` sampled coordinates of one parameter tensor.
/// Central differences are only meaningful where `w ± EPS` stays on one
/// side of every ReLU and pooling kink, so coordinates whose probes change
/// the kink signature are redrawn. Returns the error and the redraw count.
fn sampled_check(
    net: &SparseNetwork,
    x: &Tensor,
    labels: &[usize],
    layer: usize,
    bias: bool,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let full = {
        let s = net.param(layer).unwrap();
        if bias { s.bias.clone() } else { s.weights.clone() }
    };
    let with = |j: usize, v: f32| {
        let mut probe = net.clone();
        let s = probe.param_mut(layer).unwrap();
        let target = if bias { &mut s.bias } else { &mut s.weights };
        target.data_mut()[j] = v;
        probe
    };
    let base = kink_signature(net, x);
    let mut coords = Vec::new();
    let mut skipped = 0;
    for j in index::sample(rng, full.numel(), full.numel()) {
        if coords.len() == count {
            break;
        }
        let w = full.data()[j];
        if kink_signature(&with(j, w + EPS), x) == base && kink_signature(&with(j, w - EPS), x) == base {
            coords.push(j);
        } else {
            skipped += 1;
        }
    }
    let point = Tensor::new(&[coords.len()], coords.iter().map(|&j| full.data()[j]).collect()).unwrap();
    let err = grad_check(
        |p| {
            let mut probe = net.clone();
            let s = probe.param_mut(layer).unwrap();
            let target = if bias { &mut s.bias } else { &mut s.weights };
            for (&j, &v) in coords.iter().zip(p.data()) {
                target.data_mut()[j] = v;
            }
            let loss = probe.backward(&probe.forward(x)?, labels)?;
            let g = if bias { &loss.bias_grads[layer] } else { &loss.weight_grads[layer] };
            Ok((loss.value, Tensor::new(&[coords.len()], coords.iter().map(|&j| g.data()[j]).collect())?))
        },
        &point,
        EPS,
    )
    .unwrap();
    (err, skipped)
}

#[test]
fn c06_numerics() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let strided = NetworkBuilder::new(&[2, 9, 9])
        .conv(4, 3, 2, 1)
        .relu()
        .conv(3, 3, 1, 1)
        .relu()
        .max_pool(2, 2)
        .flatten()
        .linear(5)
        .build(&mut rng)
        .unwrap();
    let nets = [
        ("lenet-300-100", ModelId::LeNet300100.build(&mut rng)),
        ("lenet5-caffe", ModelId::LeNet5Caffe.build(&mut rng)),
        ("strided-cnn", strided),
    ];
    let mut worst = 0f64;
    let mut checked = 0;
    let mut kinks = 0;
    for (_, net) in &nets {
        let mut shape = vec![2];
        shape.extend_from_slice(net.input_shape());
        let x = Tensor::uniform(&shape, 0.0, 1.0, &mut rng);
        let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..net.num_classes())).collect();
        for layer in 0..net.num_params_layers() {
            for bias in [false, true] {
                let (e, skipped) = sampled_check(net, &x, &labels, layer, bias, 40, &mut rng);
                worst = worst.max(e);
                kinks += skipped;
                checked += 1;
            }
        }
    }

    let mut ema_err = 0f64;
    for (alpha, g) in [(0.9f64, 0.37f32), (0.5, -1.25), (0.99, 2.0), (0.0, 0.5)] {
        let mut s = LayerState::new(0, Tensor::zeros(&[3, 4]), Tensor::zeros(&[3]));
        let cfg = OptimizerConfig {
            ema_alpha: alpha,
            ..Default::default()
        };
        let grad = Tensor::full(&[3, 4], g);
        for t in 1..=50 {
            momentum_update(&mut s, &grad, &cfg).unwrap();
            let closed = (1.0 - alpha.powi(t)) * g as f64;
            for &m in s.momentum.data() {
                ema_err = ema_err.max((m as f64 - closed).abs());
            }
        }
    }
    report(
        6,
        "gradient check and smoothed-gradient closed form",
        worst < 1e-3 && ema_err < 1e-6,
        &format!("{checked} parameter tensors, worst relative error {worst:.2e} (limit 1e-3, {kinks} kink-straddling coordinates redrawn); EMA max error {ema_err:.2e} (limit 1e-6)"),
    );
}

#[test]
fn c07_schedules() {
    let mut bad = Vec::new();
    let mut checked = 0;
    for family in [DecayFamily::Cosine, DecayFamily::Linear] {
        for p10 in 1..=7 {
            let p0 = p10 as f64 / 10.0;
            for total in (2..=120).chain([200, 1000]) {
                let s = PruneSchedule::new(p0, family, total);
                let rates: Vec<f64> = (0..total).map(|e| s.rate_at(e).unwrap()).collect();
                checked += 1;
                if rates[0] != p0 || rates[total - 1] != 0.0 || rates.windows(2).any(|w| w[1] > w[0]) {
                    bad.push(format!("{family} p0={p0} T={total}"));
                }
            }
        }
    }
    report(
        7,
        "prune-rate schedules",
        bad.is_empty(),
        &format!(
            "{checked} schedules, {} violations{}",
            bad.len(),
            bad.first().map(|f| format!("; first: {f:?}")).unwrap_or_default()
        ),
    );
}

fn conv_model(o: usize, c: usize, k: usize, hw: usize) -> LayerCostModel {
    LayerCostModel::new(
        0,
        LayerGeometry::Conv {
            geometry: ConvGeometry::new(c, o, k, 1, 0),
            output_h: hw,
            output_w: hw,
        },
    )
    .unwrap()
}

fn random_structured_mask(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let d = rng.gen_range(0.02..1.0);
    let mut data: Vec<f32> = (0..n).map(|_| if rng.gen_bool(d) { 1.0 } else { 0.0 }).collect();
    if shape.len() == 4 {
        let (o, c, kk) = (shape[0], shape[1], shape[2] * shape[3]);
        for f in 0..o {
            if rng.gen_bool(0.3) {
                data[f * c * kk..(f + 1) * c * kk].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        for ci in 0..c {
            if rng.gen_bool(0.3) {
                for f in 0..o {
                    data[(f * c + ci) * kk..(f * c + ci + 1) * kk].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }
    Tensor::new(shape, data).unwrap()
}

#[test]
fn c08_speedup_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Uniform 20% density over the LeNet-5 layers, FLOPS-weighted.
    let net = ModelId::LeNet5Caffe.build(&mut rng);
    let models: Vec<LayerCostModel> = net.descriptors().iter().map(|d| LayerCostModel::from_descriptor(d).unwrap()).collect();
    let trace: Vec<Vec<Tensor>> = (0..5)
        .map(|_| {
            net.params()
                .map(|s| {
                    let n = s.numel();
                    let mut m = Tensor::zeros(s.weights.shape());
                    for j in index::sample(&mut rng, n, n / 5) {
                        m.data_mut()[j] = 1.0;
                    }
                    m
                })
                .collect()
        })
        .collect();
    let uniform = aggregate_speedup(&trace, &models).unwrap().flops_reduction_speedup;
    let uniform_ok = (uniform - 5.0).abs() <= 1e-9;

    // Hand-built empty-channel cases with hand-computed fractions.
    let g = conv_model(4, 3, 1, 1).geometry;
    let case = |bits: [f32; 12]| empty_channel_fraction(&Tensor::new(&[4, 3, 1, 1], bits.to_vec()).unwrap(), &g).unwrap();
    let hand = [
        (case([1.; 12]), 0.0),
        (case([0., 0., 0., 0., 0., 0., 1., 1., 1., 1., 1., 1.]), 0.5),
        (case([0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 1., 1.]), 1.0 - (2.0 / 4.0) * (2.0 / 3.0)),
        // Only input channel 2 is used, by every filter: 1 − 1·(1/3).
        (case([0., 0., 1., 0., 0., 1., 0., 0., 1., 0., 0., 1.]), 1.0 - 1.0 / 3.0),
        (case([0.; 12]), 1.0),
    ];
    let hand_ok = hand.iter().all(|(got, want)| got == want);

    let mut violations = 0;
    for _ in 0..200 {
        let models: Vec<LayerCostModel> = (0..rng.gen_range(1..5))
            .map(|i| {
                let mut m = conv_model(rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..4), rng.gen_range(1..6));
                m.layer_index = i;
                m.with_runtime_weight(rng.gen_range(0.1..100.0)).unwrap()
            })
            .collect();
        let trace: Vec<Vec<Tensor>> = (0..rng.gen_range(1..6))
            .map(|_| {
                models
                    .iter()
                    .map(|m| {
                        let mut t = random_structured_mask(&m.geometry.weight_shape(), &mut rng);
                        t.data_mut()[0] = 1.0;
                        t
                    })
                    .collect()
            })
            .collect();
        let r = aggregate_speedup(&trace, &models).unwrap();
        violations += usize::from(r.empty_channel_speedup > r.flops_reduction_speedup);
    }
    report(
        8,
        "speedup estimator",
        uniform_ok && hand_ok && violations == 0,
        &format!(
            "uniform 20% gives {uniform:.12}, hand cases {}, {violations} of 200 random traces with dense > sparse speedup",
            if hand_ok { "exact" } else { "differ" }
        ),
    );
}

#[test]
fn c09_prune_rate_sensitivity() {
    let base: Vec<f64> = test_errors(&momentum_runs()[..5]);
    let mut points = vec![(0.2, MeanSe::from_values(&base).unwrap())];
    for p in [0.3, 0.4] {
        points.push((p, MeanSe::from_values(&test_errors(&run_all(&desk("momentum/momentum", p, 5)))).unwrap()));
    }
    let mut pass = true;
    let mut detail = points.iter().map(|(p, s)| format!("p={p}: {}", pct(s))).collect::<Vec<_>>().join(", ");
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let diff = (points[i].1.mean - points[j].1.mean).abs();
            let limit = 2.0 * pooled_std_error(&points[i].1, &points[j].1);
            pass &= diff < limit;
            detail += &format!("; |{}-{}| {:.3}% vs {:.3}%", points[i].0, points[j].0, 100.0 * diff, 100.0 * limit);
        }
    }
    report(9, "prune-rate sensitivity", pass, &detail);
}

#[test]
fn c10_class_specialization() {
    let mut one_hot = vec![0.0; 10];
    one_hot[3] = 12.5;
    let mut hand = vec![0.0; 10];
    hand[..3].copy_from_slice(&[2.0, 1.0, 1.0]);
    let synthetic = ClassActivationProfile::from_totals(vec![vec![0.37; 10], one_hot, hand]).unwrap();
    let mut exact = synthetic.specialization == vec![0.1, 1.0, 0.5];
    for n in [2usize, 3, 7, 10, 100] {
        let p = ClassActivationProfile::from_totals(vec![vec![1.3; n]]).unwrap();
        exact &= p.specialization[0] == 1.0 / n as f64;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut profiles = vec![synthetic];
    for _ in 0..100 {
        let rows = (0..rng.gen_range(1..20))
            .map(|_| (0..10).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1e3) }).collect())
            .collect();
        profiles.push(ClassActivationProfile::from_totals(rows).unwrap());
    }
    let net = ModelId::LeNet5Caffe.build(&mut rng);
    let data = mnist().train.take(2000).unwrap();
    for layer in [0, 1] {
        for red in [ActivationReduction::Sum, ActivationReduction::Mean] {
            profiles.push(channel_class_specialization(&net, &data, layer, red, 250).unwrap());
        }
    }
    let worst_row = profiles
        .iter()
        .flat_map(|p| p.proportions.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()))
        .fold(0.0, f64::max);
    let in_range = profiles
        .iter()
        .all(|p| p.specialization.iter().all(|&s| s >= 1.0 / p.num_classes as f64 - 1e-12 && s <= 1.0));
    report(
        10,
        "class-specialization metric",
        exact && worst_row <= 1e-6 && in_range,
        &format!(
            "uniform/one-hot/hand cases {}, {} profiles, worst row-sum error {worst_row:.1e}",
            if exact { "exact" } else { "inexact" },
            profiles.len()
        ),
    );
}

#[test]
fn c11_scheduler_overhead() {
    let runs = momentum_runs();
    let (cycle, epoch): (f64, f64) = runs
        .iter()
        .flat_map(|r| &r.epochs)
        .fold((0.0, 0.0), |(c, e), r| (c + r.cycle_seconds, e + r.train_seconds));
    let worst = runs
        .iter()
        .flat_map(|r| &r.epochs)
        .map(|e| e.cycle_seconds / e.train_seconds)
        .fold(0.0, f64::max);
    let share = cycle / epoch;
    report(
        11,
        "scheduler overhead",
        share < 0.05,
        &format!(
            "cycle time is {:.3}% of an epoch on average, worst epoch {:.3}%",
            100.0 * share,
            100.0 * worst
        ),
    );
}
