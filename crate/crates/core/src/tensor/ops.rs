use crate::error::{dim_err, Error, Result};

use super::{ConvGeometry, Tensor};

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `a_trans` the slice `a` holds a row-major `k×m` matrix, likewise for
/// `b_trans` and an `n×k` matrix. `c` is row-major `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(dim_err!(
            "matmul needs 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (m, k) = (a.dim(0), a.dim(1));
    let (k2, n) = (b.dim(0), b.dim(1));
    if k != k2 {
        return Err(dim_err!("matmul inner extents differ: {k} vs {k2}"));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(m, k, n, a.data(), false, b.data(), false, out.data_mut(), 0.0);
    Ok(out)
}

fn check_linear(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    if x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1) {
        return Err(dim_err!(
            "linear: input {:?} incompatible with weights {:?}",
            x.shape(),
            w.shape()
        ));
    }
    Ok((x.dim(0), w.dim(1), w.dim(0)))
}

/// `x · wᵀ + bias` for `x: [N, in]`, `w: [out, in]`, `bias: [out]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fan_in, fan_out) = check_linear(x, w)?;
    if bias.numel() != fan_out {
        return Err(dim_err!("linear: bias has {} entries, expected {fan_out}", bias.numel()));
    }
    let mut out = Tensor::zeros(&[n, fan_out]);
    for row in out.data_mut().chunks_exact_mut(fan_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, fan_in, fan_out, x.data(), false, w.data(), true, out.data_mut(), 1.0);
    Ok(out)
}

#[derive(Debug)]
pub struct LinearGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<LinearGrads> {
    let (n, fan_in, fan_out) = check_linear(x, w)?;
    if grad_out.shape() != [n, fan_out] {
        return Err(dim_err!(
            "linear backward: upstream gradient {:?}, expected [{n}, {fan_out}]",
            grad_out.shape()
        ));
    }
    let mut weight = Tensor::zeros(w.shape());
    gemm(fan_out, n, fan_in, grad_out.data(), true, x.data(), false, weight.data_mut(), 0.0);

    let mut acc = vec![0f64; fan_out];
    for row in grad_out.data().chunks_exact(fan_out) {
        for (a, &g) in acc.iter_mut().zip(row) {
            *a += g as f64;
        }
    }
    let bias = Tensor::new(&[fan_out], acc.into_iter().map(|v| v as f32).collect())?;

    let input = need_input.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, fan_out, fan_in, grad_out.data(), false, w.data(), false, dx.data_mut(), 0.0);
        dx
    });
    Ok(LinearGrads { input, weight, bias })
}

struct ConvDims {
    n: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
}

fn check_conv(input: &Tensor, kernels: &Tensor, geom: &ConvGeometry) -> Result<ConvDims> {
    if input.ndim() != 4 {
        return Err(dim_err!("conv2d input must be N×C×H×W, got {:?}", input.shape()));
    }
    if kernels.shape() != geom.kernel_shape() {
        return Err(dim_err!(
            "conv2d kernels {:?} do not match geometry {:?}",
            kernels.shape(),
            geom.kernel_shape()
        ));
    }
    if input.dim(1) != geom.in_channels {
        return Err(dim_err!(
            "conv2d input has {} channels, geometry expects {}",
            input.dim(1),
            geom.in_channels
        ));
    }
    let (h, w) = (input.dim(2), input.dim(3));
    let (out_h, out_w) = geom.output_hw(h, w)?;
    Ok(ConvDims {
        n: input.dim(0),
        h,
        w,
        out_h,
        out_w,
    })
}

/// Unfolds one `C×H×W` sample into a `(C·kh·kw) × (out_h·out_w)` matrix.
fn im2col(sample: &[f32], geom: &ConvGeometry, d: &ConvDims, cols: &mut [f32]) {
    let plane = d.out_h * d.out_w;
    let (s, p) = (geom.stride as isize, geom.padding as isize);
    let mut row = 0;
    for c in 0..geom.in_channels {
        let chan = &sample[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..geom.kernel_h {
            for kj in 0..geom.kernel_w {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..d.out_h {
                    let ih = oh as isize * s + ki as isize - p;
                    for ow in 0..d.out_w {
                        let iw = ow as isize * s + kj as isize - p;
                        dst[oh * d.out_w + ow] =
                            if ih >= 0 && iw >= 0 && (ih as usize) < d.h && (iw as usize) < d.w {
                                chan[ih as usize * d.w + iw as usize]
                            } else {
                                0.0
                            };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into a sample.
fn col2im(cols: &[f32], geom: &ConvGeometry, d: &ConvDims, sample: &mut [f32]) {
    let plane = d.out_h * d.out_w;
    let (s, p) = (geom.stride as isize, geom.padding as isize);
    let mut row = 0;
    for c in 0..geom.in_channels {
        let chan = &mut sample[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..geom.kernel_h {
            for kj in 0..geom.kernel_w {
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..d.out_h {
                    let ih = oh as isize * s + ki as isize - p;
                    if ih < 0 || ih as usize >= d.h {
                        continue;
                    }
                    for ow in 0..d.out_w {
                        let iw = ow as isize * s + kj as isize - p;
                        if iw >= 0 && (iw as usize) < d.w {
                            chan[ih as usize * d.w + iw as usize] += src[oh * d.out_w + ow];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip), no bias.
pub fn conv2d(input: &Tensor, kernels: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    let d = check_conv(input, kernels, geom)?;
    let plane = d.out_h * d.out_w;
    let flen = geom.filter_len();
    let o = geom.out_channels;
    let in_len = geom.in_channels * d.h * d.w;
    let mut out = Tensor::zeros(&[d.n, o, d.out_h, d.out_w]);
    let mut cols = vec![0f32; flen * plane];
    for (sample, dst) in input
        .data()
        .chunks_exact(in_len)
        .zip(out.data_mut().chunks_exact_mut(o * plane))
    {
        im2col(sample, geom, &d, &mut cols);
        gemm(o, flen, plane, kernels.data(), false, &cols, false, dst, 0.0);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct Conv2dGrads {
    pub input: Option<Tensor>,
    pub kernels: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    geom: &ConvGeometry,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<Conv2dGrads> {
    let d = check_conv(input, kernels, geom)?;
    let o = geom.out_channels;
    if grad_out.shape() != [d.n, o, d.out_h, d.out_w] {
        return Err(dim_err!(
            "conv2d backward: upstream gradient {:?} does not match output [{}, {o}, {}, {}]",
            grad_out.shape(),
            d.n,
            d.out_h,
            d.out_w
        ));
    }
    let plane = d.out_h * d.out_w;
    let flen = geom.filter_len();
    let in_len = geom.in_channels * d.h * d.w;

    let mut dk = Tensor::zeros(kernels.shape());
    let mut dx = need_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![0f32; flen * plane];
    let mut dcols = vec![0f32; flen * plane];
    for (i, (sample, g)) in input
        .data()
        .chunks_exact(in_len)
        .zip(grad_out.data().chunks_exact(o * plane))
        .enumerate()
    {
        im2col(sample, geom, &d, &mut cols);
        // dK += dY · colsᵀ
        gemm(o, plane, flen, g, false, &cols, true, dk.data_mut(), 1.0);
        if let Some(dx) = dx.as_mut() {
            // dcols = Kᵀ · dY
            gemm(flen, o, plane, kernels.data(), true, g, false, &mut dcols, 0.0);
            col2im(&dcols, geom, &d, &mut dx.data_mut()[i * in_len..(i + 1) * in_len]);
        }
    }
    Ok(Conv2dGrads {
        input: dx,
        kernels: dk,
    })
}

#[derive(Debug)]
pub struct PoolOutput {
    pub output: Tensor,
    /// Flat input index of the winning element for every output element.
    pub argmax: Vec<usize>,
}

/// Max pooling over `size×size` windows without padding. Ties go to the
/// first element in row-major window order.
pub fn max_pool2d(input: &Tensor, size: usize, stride: usize) -> Result<PoolOutput> {
    if input.ndim() != 4 {
        return Err(dim_err!("max_pool2d input must be N×C×H×W, got {:?}", input.shape()));
    }
    if size == 0 || stride == 0 {
        return Err(Error::Dimension("pool size and stride must be positive".into()));
    }
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if h < size || w < size {
        return Err(dim_err!("pool window {size} larger than input {h}×{w}"));
    }
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let src = input.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = base + i * stride * w + j * stride;
                let mut best = src[best_idx];
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (i * stride + di) * w + j * stride + dj;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                dst[o] = best;
                argmax.push(best_idx);
                o += 1;
            }
        }
    }
    Ok(PoolOutput {
        output: out,
        argmax,
    })
}

pub fn max_pool2d_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor> {
    if grad_out.numel() != argmax.len() {
        return Err(dim_err!(
            "max_pool2d backward: {} gradients for {} pooled positions",
            grad_out.numel(),
            argmax.len()
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let data = dx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        data[idx] += g;
    }
    Ok(dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given the forward *output*.
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(output, "relu backward")?;
    let mut dx = grad_out.clone();
    for (g, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(dx)
}

/// Mean softmax cross-entropy over a batch of `[N, classes]` logits.
///
/// Returns the loss (accumulated in `f64`) and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.ndim() != 2 {
        return Err(dim_err!("logits must be [N, classes], got {:?}", logits.shape()));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0f64;
    let scale = 1.0 / n as f64;
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(labels)
    {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let denom: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_denom = denom.ln();
        total += log_denom - (row[label] as f64 - max);
        for (j, (gj, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v as f64 - max).exp() / denom;
            let target = if j == label { 1.0 } else { 0.0 };
            *gj = ((p - target) * scale) as f32;
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("cross-entropy loss is {loss}")));
    }
    Ok((loss, grad))
}
