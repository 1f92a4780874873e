use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::harness::Dataset;
use crate::network::{Layer, SparseNetwork};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationReduction {
    /// Σ|a| over examples and spatial positions.
    #[default]
    Sum,
    /// Σ|a| divided by the class's example count and the spatial size.
    Mean,
}

impl std::str::FromStr for ActivationReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown reduction `{other}`"))),
        }
    }
}

/// Per-channel activity split by class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassActivationProfile {
    pub num_classes: usize,
    /// `[channel][class]` aggregated magnitudes.
    pub totals: Vec<Vec<f64>>,
    /// Rows of `totals` normalized to sum to 1; uniform for dead channels.
    pub proportions: Vec<Vec<f64>>,
    /// Largest proportion of each channel, in `[1/N_c, 1]`.
    pub specialization: Vec<f64>,
    /// Channels with zero total activity.
    pub dead: Vec<bool>,
}

impl ClassActivationProfile {
    pub fn from_totals(totals: Vec<Vec<f64>>) -> Result<Self> {
        let num_classes = totals.first().map_or(0, Vec::len);
        if num_classes == 0 {
            return Err(Error::Input("profile needs at least one channel and one class".into()));
        }
        if totals.iter().any(|r| r.len() != num_classes) {
            return Err(dim_err!("ragged per-class totals"));
        }
        if totals.iter().flatten().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Input("activation totals must be finite and nonnegative".into()));
        }
        let uniform = 1.0 / num_classes as f64;
        let mut proportions = Vec::with_capacity(totals.len());
        let mut specialization = Vec::with_capacity(totals.len());
        let mut dead = Vec::with_capacity(totals.len());
        for row in &totals {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 && row.iter().all(|&v| v == row[0]) {
                // Exactly uniform; dividing by a rounded sum would not give 1/N_c.
                proportions.push(vec![uniform; num_classes]);
                specialization.push(uniform);
                dead.push(false);
            } else if sum > 0.0 {
                let p: Vec<f64> = row.iter().map(|v| v / sum).collect();
                specialization.push(p.iter().copied().fold(0.0, f64::max));
                proportions.push(p);
                dead.push(false);
            } else {
                proportions.push(vec![uniform; num_classes]);
                specialization.push(uniform);
                dead.push(true);
            }
        }
        Ok(Self {
            num_classes,
            totals,
            proportions,
            specialization,
            dead,
        })
    }

    pub fn mean_specialization(&self) -> f64 {
        self.specialization.iter().sum::<f64>() / self.specialization.len() as f64
    }

    /// Columns: `channel,dead,specialization,class_0,...` (proportions).
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "channel,dead,specialization")?;
        for k in 0..self.num_classes {
            write!(w, ",class_{k}")?;
        }
        writeln!(w)?;
        for (c, row) in self.proportions.iter().enumerate() {
            write!(w, "{c},{},{}", self.dead[c], self.specialization[c])?;
            for p in row {
                write!(w, ",{p}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Passes `data` through `net` and aggregates post-ReLU activation magnitude
/// per (channel, class) of parametric layer `layer`, which must be a
/// convolution.
pub fn channel_class_specialization(
    net: &SparseNetwork,
    data: &Dataset,
    layer: usize,
    reduction: ActivationReduction,
    batch_size: usize,
) -> Result<ClassActivationProfile> {
    let pos = net
        .layer_position(layer)
        .ok_or_else(|| Error::Input(format!("no parametric layer {layer}")))?;
    let Layer::Conv { geometry, .. } = &net.layers()[pos] else {
        return Err(Error::Input(format!("layer {layer} is not convolutional")));
    };
    let channels = geometry.out_channels;
    let k = net.num_classes();
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let taken = if matches!(net.layers().get(pos + 1), Some(Layer::Relu)) {
        pos + 2
    } else {
        pos + 1
    };
    let mut totals = vec![vec![0.0f64; k]; channels];
    let mut counts = vec![0usize; k];
    let mut spatial = 1;
    let per: usize = data.example_shape().iter().product();
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size.max(1)).min(n);
        let mut shape = data.images.shape().to_vec();
        shape[0] = end - start;
        let batch = Tensor::new(&shape, data.images.data()[start * per..end * per].to_vec())?;
        let pass = net.forward(&batch)?;
        let act = &pass.activations[taken];
        spatial = act.dim(2) * act.dim(3);
        for (example, &label) in act.data().chunks_exact(channels * spatial).zip(&data.labels[start..end]) {
            counts[label] += 1;
            for (c, plane) in example.chunks_exact(spatial).enumerate() {
                totals[c][label] += plane.iter().map(|&a| a.abs() as f64).sum::<f64>();
            }
        }
        start = end;
    }
    if reduction == ActivationReduction::Mean {
        for row in &mut totals {
            for (v, &cnt) in row.iter_mut().zip(&counts) {
                if cnt > 0 {
                    *v /= (cnt * spatial) as f64;
                }
            }
        }
    }
    ClassActivationProfile::from_totals(totals)
}
