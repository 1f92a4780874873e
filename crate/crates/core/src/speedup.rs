//! Speedup estimates over a trace of per-epoch masks.
//!
//! Two measures: the sparse-convolution speedup scales each layer's dense cost
//! by the fraction of multiply-adds that survive, the dense-convolution
//! speedup by the fraction left after dropping all-zero channels.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::network::{LayerDescriptor, ParamKind};
use crate::tensor::{ConvGeometry, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerGeometry {
    Conv {
        geometry: ConvGeometry,
        output_h: usize,
        output_w: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerGeometry {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerGeometry::Conv { geometry, .. } => geometry.kernel_shape().to_vec(),
            LayerGeometry::Linear {
                in_features,
                out_features,
            } => vec![*out_features, *in_features],
        }
    }

    /// Output locations each weight contributes to, per example.
    pub fn output_positions(&self) -> usize {
        match self {
            LayerGeometry::Conv { output_h, output_w, .. } => output_h * output_w,
            LayerGeometry::Linear { .. } => 1,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerGeometry::Conv { .. })
    }
}

impl From<ParamKind> for LayerGeometry {
    fn from(kind: ParamKind) -> Self {
        match kind {
            ParamKind::Linear {
                in_features,
                out_features,
            } => LayerGeometry::Linear {
                in_features,
                out_features,
            },
            ParamKind::Conv {
                geometry,
                output_h,
                output_w,
                ..
            } => LayerGeometry::Conv {
                geometry,
                output_h,
                output_w,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCostModel {
    pub layer_index: usize,
    pub geometry: LayerGeometry,
    /// Multiply-adds count as 2 FLOPS.
    pub dense_flops_per_example: u64,
    /// Relative share of dense runtime. Defaults to the dense FLOPS.
    pub dense_runtime_weight: f64,
}

impl LayerCostModel {
    pub fn new(layer_index: usize, geometry: LayerGeometry) -> Result<Self> {
        let numel: usize = geometry.weight_shape().iter().product();
        let dense = 2 * numel as u64 * geometry.output_positions() as u64;
        if dense == 0 {
            return Err(Error::Input(format!("layer {layer_index} has zero dense FLOPS")));
        }
        Ok(Self {
            layer_index,
            geometry,
            dense_flops_per_example: dense,
            dense_runtime_weight: dense as f64,
        })
    }

    pub fn with_runtime_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Input(format!("runtime weight {weight} must be finite and nonnegative")));
        }
        self.dense_runtime_weight = weight;
        Ok(self)
    }

    pub fn from_descriptor(d: &LayerDescriptor) -> Result<Self> {
        Self::new(d.layer_index, d.kind.into())
    }
}

fn check_mask(mask: &Tensor, geometry: &LayerGeometry) -> Result<()> {
    let want = geometry.weight_shape();
    if mask.shape() != want.as_slice() {
        return Err(dim_err!("mask shape {:?} does not match layer weights {:?}", mask.shape(), want));
    }
    Ok(())
}

/// FLOPS per example left after masking: `2 · nnz · output_positions`.
pub fn sparse_flops(mask: &Tensor, geometry: &LayerGeometry) -> Result<u64> {
    check_mask(mask, geometry)?;
    Ok(2 * mask.count_nonzero() as u64 * geometry.output_positions() as u64)
}

/// Channels that survive when all-zero slices are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelUsage {
    pub out_channels: usize,
    pub in_channels: usize,
    /// Output filters with at least one nonzero weight.
    pub kept_out: usize,
    /// Input channels with a nonzero weight in some kept filter.
    pub kept_in: usize,
}

impl ChannelUsage {
    pub fn output_fraction(&self) -> f64 {
        1.0 - self.kept_out as f64 / self.out_channels as f64
    }

    pub fn input_fraction(&self) -> f64 {
        1.0 - self.kept_in as f64 / self.in_channels as f64
    }

    /// `(kept_out/O)·(kept_in/C)`, computed as one exact-integer ratio.
    pub fn kept_fraction(&self) -> f64 {
        (self.kept_out * self.kept_in) as f64 / (self.out_channels * self.in_channels) as f64
    }

    pub fn joint_fraction(&self) -> f64 {
        1.0 - self.kept_fraction()
    }
}

/// Output filters are removed first; an input channel is then kept if any
/// remaining filter touches it. `None` for fully connected layers.
pub fn channel_usage(mask: &Tensor, geometry: &LayerGeometry) -> Result<Option<ChannelUsage>> {
    check_mask(mask, geometry)?;
    let LayerGeometry::Conv { geometry: g, .. } = geometry else {
        return Ok(None);
    };
    let (o, c, klen) = (g.out_channels, g.in_channels, g.kernel_h * g.kernel_w);
    let data = mask.data();
    let mut kept_out = 0;
    let mut in_used = vec![false; c];
    for filter in data.chunks_exact(c * klen).take(o) {
        if filter.iter().all(|&m| m == 0.0) {
            continue;
        }
        kept_out += 1;
        for (ci, slice) in filter.chunks_exact(klen).enumerate() {
            in_used[ci] |= slice.iter().any(|&m| m != 0.0);
        }
    }
    Ok(Some(ChannelUsage {
        out_channels: o,
        in_channels: c,
        kept_out,
        kept_in: in_used.iter().filter(|&&u| u).count(),
    }))
}

/// `1 − (kept_out/O)·(kept_in/C)`; 0 for fully connected layers.
pub fn empty_channel_fraction(mask: &Tensor, geometry: &LayerGeometry) -> Result<f64> {
    Ok(channel_usage(mask, geometry)?.map_or(0.0, |u| u.joint_fraction()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpeedup {
    pub layer_index: usize,
    pub flops_reduction_speedup: f64,
    pub empty_channel_speedup: f64,
    /// Output-filter removal alone.
    pub output_channel_speedup: f64,
    /// Input-channel removal alone.
    pub input_channel_speedup: f64,
    pub mean_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub layers: Vec<LayerSpeedup>,
    pub flops_reduction_speedup: f64,
    pub empty_channel_speedup: f64,
    pub output_channel_speedup: f64,
    pub input_channel_speedup: f64,
    /// Active weights over all weights, averaged over epochs.
    pub mean_density: f64,
    pub epochs_covered: usize,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    dense: f64,
    flops: f64,
    joint: f64,
    out: f64,
    inp: f64,
}

impl Acc {
    fn add(&mut self, other: &Acc) {
        self.dense += other.dense;
        self.flops += other.flops;
        self.joint += other.joint;
        self.out += other.out;
        self.inp += other.inp;
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// `Σ w / Σ w · reduced_fraction` over layers and epochs.
///
/// A layer that is entirely zero for the whole trace has infinite speedup.
pub fn aggregate_speedup(trace: &[Vec<Tensor>], models: &[LayerCostModel]) -> Result<SpeedupReport> {
    if trace.is_empty() {
        return Err(Error::Input("empty mask trace".into()));
    }
    let mut per_layer = vec![Acc::default(); models.len()];
    let mut density_sum = vec![0.0f64; models.len()];
    let mut global_density = 0.0;
    let total_weights: usize = models
        .iter()
        .map(|m| m.geometry.weight_shape().iter().product::<usize>())
        .sum();
    for (epoch, masks) in trace.iter().enumerate() {
        if masks.len() != models.len() {
            return Err(Error::Input(format!(
                "epoch {epoch} has {} masks for {} cost models",
                masks.len(),
                models.len()
            )));
        }
        let mut active = 0usize;
        for ((mask, model), (acc, dsum)) in masks
            .iter()
            .zip(models)
            .zip(per_layer.iter_mut().zip(density_sum.iter_mut()))
        {
            let w = model.dense_runtime_weight;
            let nnz_frac = sparse_flops(mask, &model.geometry)? as f64 / model.dense_flops_per_example as f64;
            let usage = channel_usage(mask, &model.geometry)?;
            // Kept fractions as integer ratios, so that equal rationals round
            // equally and the ordering between measures survives.
            let (joint, out, inp) = usage.map_or((1.0, 1.0, 1.0), |u| {
                (
                    u.kept_fraction(),
                    u.kept_out as f64 / u.out_channels as f64,
                    u.kept_in as f64 / u.in_channels as f64,
                )
            });
            acc.add(&Acc {
                dense: w,
                flops: w * nnz_frac,
                joint: w * joint,
                out: w * out,
                inp: w * inp,
            });
            *dsum += mask.count_nonzero() as f64 / mask.numel() as f64;
            active += mask.count_nonzero();
        }
        global_density += active as f64 / total_weights.max(1) as f64;
    }
    let epochs = trace.len() as f64;
    let mut total = Acc::default();
    let layers = models
        .iter()
        .zip(&per_layer)
        .zip(&density_sum)
        .map(|((m, a), d)| {
            total.add(a);
            LayerSpeedup {
                layer_index: m.layer_index,
                flops_reduction_speedup: ratio(a.dense, a.flops),
                empty_channel_speedup: ratio(a.dense, a.joint),
                output_channel_speedup: ratio(a.dense, a.out),
                input_channel_speedup: ratio(a.dense, a.inp),
                mean_density: d / epochs,
            }
        })
        .collect();
    Ok(SpeedupReport {
        layers,
        flops_reduction_speedup: ratio(total.dense, total.flops),
        empty_channel_speedup: ratio(total.dense, total.joint),
        output_channel_speedup: ratio(total.dense, total.out),
        input_channel_speedup: ratio(total.dense, total.inp),
        mean_density: global_density / epochs,
        epochs_covered: trace.len(),
    })
}

impl SpeedupReport {
    pub const TABLE_HEADER: &'static str = "model\tweights_pct\tdense_convolution\tsparse_convolution";

    /// One tab-separated row: weights %, dense- and sparse-convolution speedups.
    pub fn table_row(&self, model: &str) -> String {
        format!(
            "{model}\t{:.2}\t{:.4}\t{:.4}",
            100.0 * self.mean_density,
            self.empty_channel_speedup,
            self.flops_reduction_speedup
        )
    }

    pub fn write_table(&self, model: &str, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", Self::TABLE_HEADER)?;
        writeln!(w, "{}", self.table_row(model))?;
        Ok(())
    }
}

pub const LAYER_SPEC_HEADER: &str =
    "layer_index,kind,in,out,kernel_h,kernel_w,stride,padding,output_h,output_w,runtime_weight";

/// Writes the layer-spec table read by [`read_layer_spec`].
pub fn write_layer_spec(models: &[LayerCostModel], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{LAYER_SPEC_HEADER}")?;
    for m in models {
        let rw = m.dense_runtime_weight;
        match m.geometry {
            LayerGeometry::Conv {
                geometry: g,
                output_h,
                output_w,
            } => writeln!(
                w,
                "{},conv,{},{},{},{},{},{},{},{},{rw}",
                m.layer_index, g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.padding, output_h, output_w
            )?,
            LayerGeometry::Linear {
                in_features,
                out_features,
            } => writeln!(w, "{},linear,{in_features},{out_features},,,,,,,{rw}", m.layer_index)?,
        }
    }
    Ok(())
}

/// Reads a comma-separated layer spec with the [`LAYER_SPEC_HEADER`] columns.
/// An empty `runtime_weight` falls back to dense FLOPS.
pub fn read_layer_spec(r: impl BufRead) -> Result<Vec<LayerCostModel>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != LAYER_SPEC_HEADER {
        return Err(Error::Format(format!("unexpected layer spec header `{}`", header.trim())));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("layer spec line {}: {what}", lineno + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 11 {
            return Err(bad("expected 11 fields"));
        }
        let num = |i: usize| f[i].parse::<usize>().map_err(|_| bad(&format!("bad integer `{}`", f[i])));
        let geometry = match f[1] {
            "conv" => LayerGeometry::Conv {
                geometry: ConvGeometry {
                    in_channels: num(2)?,
                    out_channels: num(3)?,
                    kernel_h: num(4)?,
                    kernel_w: num(5)?,
                    stride: num(6)?,
                    padding: num(7)?,
                },
                output_h: num(8)?,
                output_w: num(9)?,
            },
            "linear" => LayerGeometry::Linear {
                in_features: num(2)?,
                out_features: num(3)?,
            },
            other => return Err(bad(&format!("unknown kind `{other}`"))),
        };
        let mut model = LayerCostModel::new(num(0)?, geometry)?;
        if !f[10].is_empty() {
            let w = f[10].parse::<f64>().map_err(|_| bad("bad runtime weight"))?;
            model = model.with_runtime_weight(w)?;
        }
        out.push(model);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn conv(o: usize, c: usize, k: usize, hw: usize) -> LayerGeometry {
        LayerGeometry::Conv {
            geometry: ConvGeometry::new(c, o, k, 1, 0),
            output_h: hw,
            output_w: hw,
        }
    }

    fn linear(i: usize, o: usize) -> LayerGeometry {
        LayerGeometry::Linear {
            in_features: i,
            out_features: o,
        }
    }

    #[test]
    fn hand_flop_count() {
        let g = conv(4, 2, 3, 8);
        let mut mask = Tensor::zeros(&[4, 2, 3, 3]);
        mask.data_mut()[..36].iter_mut().for_each(|m| *m = 1.0);
        assert_eq!(sparse_flops(&mask, &g).unwrap(), 4608);
        let dense = Tensor::ones(&[4, 2, 3, 3]);
        let model = LayerCostModel::new(0, g).unwrap();
        assert_eq!(sparse_flops(&dense, &g).unwrap(), model.dense_flops_per_example);
        assert!(sparse_flops(&Tensor::ones(&[4, 2, 3, 2]), &g).is_err());
    }

    #[test]
    fn linear_flops_and_channels() {
        let g = linear(10, 3);
        let mut mask = Tensor::zeros(&[3, 10]);
        mask.data_mut()[..3].iter_mut().for_each(|m| *m = 1.0);
        assert_eq!(sparse_flops(&mask, &g).unwrap(), 6);
        assert_eq!(empty_channel_fraction(&mask, &g).unwrap(), 0.0);
    }

    #[test]
    fn hand_empty_channels() {
        let g = conv(4, 3, 1, 1);
        // Filters 1 and 2 empty; input channel 0 unused by filters 0 and 3.
        let mask = Tensor::new(
            &[4, 3, 1, 1],
            vec![0., 1., 0., /**/ 0., 0., 0., /**/ 0., 0., 0., /**/ 0., 1., 1.],
        )
        .unwrap();
        assert_eq!(empty_channel_fraction(&mask, &g).unwrap(), 1.0 - (2.0 / 4.0) * (2.0 / 3.0));
        let u = channel_usage(&mask, &g).unwrap().unwrap();
        assert_eq!((u.kept_out, u.kept_in), (2, 2));
        assert_eq!(u.output_fraction(), 0.5);

        assert_eq!(empty_channel_fraction(&Tensor::ones(&[4, 3, 1, 1]), &g).unwrap(), 0.0);
        let mut half = Tensor::ones(&[4, 3, 1, 1]);
        half.data_mut()[..6].iter_mut().for_each(|m| *m = 0.0);
        assert_eq!(empty_channel_fraction(&half, &g).unwrap(), 0.5);
    }

    #[test]
    fn dense_trace_is_one() {
        let models = [LayerCostModel::new(0, conv(2, 2, 3, 4)).unwrap(), LayerCostModel::new(1, linear(5, 2)).unwrap()];
        let trace = vec![vec![Tensor::ones(&[2, 2, 3, 3]), Tensor::ones(&[2, 5])]; 3];
        let r = aggregate_speedup(&trace, &models).unwrap();
        assert_eq!(r.flops_reduction_speedup, 1.0);
        assert_eq!(r.empty_channel_speedup, 1.0);
        assert_eq!(r.epochs_covered, 3);
        assert_eq!(r.mean_density, 1.0);
        assert!(matches!(aggregate_speedup(&[], &models), Err(Error::Input(_))));
    }

    #[test]
    fn twenty_percent_density_is_five() {
        let models = [LayerCostModel::new(0, conv(5, 4, 1, 3)).unwrap(), LayerCostModel::new(1, linear(10, 10)).unwrap()];
        let mut a = Tensor::zeros(&[5, 4, 1, 1]);
        a.data_mut().iter_mut().step_by(5).for_each(|m| *m = 1.0);
        let mut b = Tensor::zeros(&[10, 10]);
        b.data_mut().iter_mut().step_by(5).for_each(|m| *m = 1.0);
        let r = aggregate_speedup(&[vec![a, b]], &models).unwrap();
        assert!((r.flops_reduction_speedup - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hand_summed_toy_trace() {
        // Layer A: conv 2x1x1x1 on 2x2 output, dense flops 16. Layer B: linear 2->2, dense flops 8.
        let models = [LayerCostModel::new(0, conv(2, 1, 1, 2)).unwrap(), LayerCostModel::new(1, linear(2, 2)).unwrap()];
        let a0 = Tensor::new(&[2, 1, 1, 1], vec![1., 0.]).unwrap();
        let b0 = Tensor::new(&[2, 2], vec![1., 1., 1., 0.]).unwrap();
        let a1 = Tensor::new(&[2, 1, 1, 1], vec![1., 1.]).unwrap();
        let b1 = Tensor::new(&[2, 2], vec![0., 1., 0., 0.]).unwrap();
        let r = aggregate_speedup(&[vec![a0, b0], vec![a1, b1]], &models).unwrap();
        // Sparse: (16+8+16+8) / (16·½ + 8·¾ + 16·1 + 8·¼) = 48 / 32.
        assert!((r.flops_reduction_speedup - 1.5).abs() < 1e-12);
        // Dense: epoch 0 drops one of two filters; linear layers never shrink.
        // 48 / (16·½ + 8 + 16 + 8) = 48 / 40.
        assert!((r.empty_channel_speedup - 1.2).abs() < 1e-12);
        assert!((r.layers[0].flops_reduction_speedup - 32.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn layer_spec_round_trip() {
        let models = vec![
            LayerCostModel::new(0, conv(20, 1, 5, 24)).unwrap(),
            LayerCostModel::new(1, linear(800, 500)).unwrap().with_runtime_weight(0.25).unwrap(),
        ];
        let mut buf = Vec::new();
        write_layer_spec(&models, &mut buf).unwrap();
        assert_eq!(read_layer_spec(buf.as_slice()).unwrap(), models);
        let text = format!("{LAYER_SPEC_HEADER}\n3,linear,4,2,,,,,,,\n");
        let m = read_layer_spec(text.as_bytes()).unwrap();
        assert_eq!(m[0].dense_runtime_weight, 16.0);
        assert!(read_layer_spec("nope\n".as_bytes()).is_err());
        let bad = format!("{LAYER_SPEC_HEADER}\n0,pool,1,1,,,,,,,\n");
        assert!(matches!(read_layer_spec(bad.as_bytes()), Err(Error::Format(_))));
    }

    fn random_trace(seed: u64) -> (Vec<Vec<Tensor>>, Vec<LayerCostModel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models: Vec<_> = (0..rng.gen_range(1..4))
            .map(|i| {
                let g = if rng.gen_bool(0.7) {
                    conv(rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..4), rng.gen_range(1..5))
                } else {
                    linear(rng.gen_range(1..8), rng.gen_range(1..8))
                };
                let m = LayerCostModel::new(i, g).unwrap();
                let w = rng.gen_range(0.1..10.0);
                m.with_runtime_weight(w).unwrap()
            })
            .collect();
        let trace = (0..rng.gen_range(1..5))
            .map(|_| {
                models
                    .iter()
                    .map(|m| {
                        let d = rng.gen_range(0.05..1.0);
                        let shape = m.geometry.weight_shape();
                        let n = shape.iter().product();
                        let mut data: Vec<f32> = (0..n).map(|_| if rng.gen_bool(d) { 1.0 } else { 0.0 }).collect();
                        data[0] = 1.0;
                        Tensor::new(&shape, data).unwrap()
                    })
                    .collect()
            })
            .collect();
        (trace, models)
    }

    proptest! {
        #[test]
        fn channel_speedup_never_beats_flops(seed in 0u64..10_000) {
            let (trace, models) = random_trace(seed);
            let r = aggregate_speedup(&trace, &models).unwrap();
            prop_assert!(r.empty_channel_speedup <= r.flops_reduction_speedup * (1.0 + 1e-12));
            prop_assert!(r.empty_channel_speedup >= 1.0 && r.flops_reduction_speedup >= 1.0);
            prop_assert!(r.output_channel_speedup <= r.empty_channel_speedup * (1.0 + 1e-12));
            prop_assert!(r.input_channel_speedup <= r.empty_channel_speedup * (1.0 + 1e-12));

            let scaled: Vec<_> = models.iter().map(|m| m.with_runtime_weight(m.dense_runtime_weight * 3.7).unwrap()).collect();
            let s = aggregate_speedup(&trace, &scaled).unwrap();
            prop_assert!((s.flops_reduction_speedup - r.flops_reduction_speedup).abs() < 1e-9 * r.flops_reduction_speedup);
            prop_assert!((s.empty_channel_speedup - r.empty_channel_speedup).abs() < 1e-9 * r.empty_channel_speedup);
        }
    }
}
