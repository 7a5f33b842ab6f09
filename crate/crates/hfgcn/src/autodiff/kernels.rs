//! Forward and adjoint kernels for every tape operation.
//!
//! All kernels are plain loops over contiguous row-major storage with the
//! innermost loop on the last axis. Shape checks return `Error::Shape`;
//! adjoints take `want_*` flags so gradients are only materialized for
//! inputs that can reach a trainable parameter.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

/// Trailing extent product from `axis` onward.
fn tail(shape: &[usize], axis: usize) -> usize {
    shape[axis..].iter().product()
}

// ---------------------------------------------------------------------------
// conv1x1: pointwise channel mix
// ---------------------------------------------------------------------------

/// `out[b,o,..] = sum_c w[o,c] * x[b,c,..] (+ bias[o])` for rank >= 2 input.
pub fn conv1x1(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() < 2 || w.rank() != 2 {
        return Err(shape_err(format!(
            "conv1x1 needs x rank>=2 and w rank 2, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    if ci != c {
        return Err(shape_err(format!(
            "conv1x1 channel mismatch: x has {c}, w expects {ci}"
        )));
    }
    if let Some(bt) = bias {
        if bt.shape() != [co] {
            return Err(shape_err(format!(
                "conv1x1 bias shape {:?}, expected [{co}]",
                bt.shape()
            )));
        }
    }
    let sp = tail(x.shape(), 2);
    let mut out_shape = x.shape().to_vec();
    out_shape[1] = co;
    let mut out = Tensor::zeros(&out_shape);
    {
        let xd = x.data();
        let wd = w.data();
        let od = out.data_mut();
        for bi in 0..b {
            for o in 0..co {
                let orow = &mut od[(bi * co + o) * sp..(bi * co + o + 1) * sp];
                if let Some(bt) = bias {
                    let bv = bt.data()[o];
                    for v in orow.iter_mut() {
                        *v = bv;
                    }
                }
                for cc in 0..c {
                    let wv = wd[o * c + cc];
                    if wv == 0.0 {
                        continue;
                    }
                    let xrow = &xd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
                    for (ov, xv) in orow.iter_mut().zip(xrow) {
                        *ov += wv * xv;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::type_complexity)]
pub fn conv1x1_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    grad: &Tensor,
    want_gx: bool,
    want_gw: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let co = w.shape()[0];
    let sp = tail(x.shape(), 2);
    let gd = grad.data();
    let gx = want_gx.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        let gxd = gx.data_mut();
        let wd = w.data();
        for bi in 0..b {
            for o in 0..co {
                let grow = &gd[(bi * co + o) * sp..(bi * co + o + 1) * sp];
                for cc in 0..c {
                    let wv = wd[o * c + cc];
                    let xrow = &mut gxd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
                    for (xv, gv) in xrow.iter_mut().zip(grow) {
                        *xv += wv * gv;
                    }
                }
            }
        }
        gx
    });
    let gw = want_gw.then(|| {
        let mut gw = Tensor::zeros(w.shape());
        let gwd = gw.data_mut();
        let xd = x.data();
        for bi in 0..b {
            for o in 0..co {
                let grow = &gd[(bi * co + o) * sp..(bi * co + o + 1) * sp];
                for cc in 0..c {
                    let xrow = &xd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
                    let mut acc = 0.0;
                    for (gv, xv) in grow.iter().zip(xrow) {
                        acc += gv * xv;
                    }
                    gwd[o * c + cc] += acc;
                }
            }
        }
        gw
    });
    let gb = (want_gw && has_bias).then(|| {
        let mut gb = Tensor::zeros(&[co]);
        let gbd = gb.data_mut();
        for bi in 0..b {
            for o in 0..co {
                let grow = &gd[(bi * co + o) * sp..(bi * co + o + 1) * sp];
                gbd[o] += grow.iter().sum::<f64>();
            }
        }
        gb
    });
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// temporal convolution (1-D along T, independent per joint, same padding)
// ---------------------------------------------------------------------------

pub fn temporal_out_len(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}

/// `x (B,C,T,V)`, `w (C_out,C,K)` with K odd; zero same-padding `d*(K-1)/2`.
pub fn temporal_conv(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    dilation: usize,
) -> Result<Tensor> {
    if x.rank() != 4 || w.rank() != 3 {
        return Err(shape_err(format!(
            "temporal_conv needs x rank 4 and w rank 3, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if stride < 1 || dilation < 1 {
        return Err(Error::Config(format!(
            "temporal_conv stride/dilation must be >= 1, got {stride}/{dilation}"
        )));
    }
    let (b, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, ci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if ci != c {
        return Err(shape_err(format!(
            "temporal_conv channel mismatch: x has {c}, w expects {ci}"
        )));
    }
    if k % 2 == 0 {
        return Err(Error::Config(format!("temporal kernel must be odd, got {k}")));
    }
    if let Some(bt) = bias {
        if bt.shape() != [co] {
            return Err(shape_err("temporal_conv bias shape".into()));
        }
    }
    let pad = dilation * (k - 1) / 2;
    let to = temporal_out_len(t, stride);
    let mut out = Tensor::zeros(&[b, co, to, v]);
    {
        let xd = x.data();
        let wd = w.data();
        let od = out.data_mut();
        for bi in 0..b {
            for o in 0..co {
                if let Some(bt) = bias {
                    let bv = bt.data()[o];
                    let orows = &mut od[((bi * co + o) * to) * v..((bi * co + o + 1) * to) * v];
                    for val in orows.iter_mut() {
                        *val = bv;
                    }
                }
                for cc in 0..c {
                    for kk in 0..k {
                        let wv = wd[(o * c + cc) * k + kk];
                        if wv == 0.0 {
                            continue;
                        }
                        for tt in 0..to {
                            let ti = (tt * stride + kk * dilation) as isize - pad as isize;
                            if ti < 0 || ti as usize >= t {
                                continue;
                            }
                            let xrow =
                                &xd[((bi * c + cc) * t + ti as usize) * v..][..v];
                            let orow = &mut od[((bi * co + o) * to + tt) * v..][..v];
                            for (ov, xv) in orow.iter_mut().zip(xrow) {
                                *ov += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
#[allow(clippy::type_complexity)]
pub fn temporal_conv_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    stride: usize,
    dilation: usize,
    grad: &Tensor,
    want_gx: bool,
    want_gw: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let (b, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let pad = dilation * (k - 1) / 2;
    let to = temporal_out_len(t, stride);
    let gd = grad.data();
    let mut gx = want_gx.then(|| Tensor::zeros(x.shape()));
    let mut gw = want_gw.then(|| Tensor::zeros(w.shape()));
    for bi in 0..b {
        for o in 0..co {
            for cc in 0..c {
                for kk in 0..k {
                    let wv = w.data()[(o * c + cc) * k + kk];
                    for tt in 0..to {
                        let ti = (tt * stride + kk * dilation) as isize - pad as isize;
                        if ti < 0 || ti as usize >= t {
                            continue;
                        }
                        let ti = ti as usize;
                        let grow = &gd[((bi * co + o) * to + tt) * v..][..v];
                        if let Some(gx) = gx.as_mut() {
                            let gxrow = &mut gx.data_mut()[((bi * c + cc) * t + ti) * v..][..v];
                            for (xv, gv) in gxrow.iter_mut().zip(grow) {
                                *xv += wv * gv;
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            let xrow = &x.data()[((bi * c + cc) * t + ti) * v..][..v];
                            let mut acc = 0.0;
                            for (gv, xv) in grow.iter().zip(xrow) {
                                acc += gv * xv;
                            }
                            gw.data_mut()[(o * c + cc) * k + kk] += acc;
                        }
                    }
                }
            }
        }
    }
    let gb = (want_gw && has_bias).then(|| {
        let mut gb = Tensor::zeros(&[co]);
        for bi in 0..b {
            for o in 0..co {
                let rows = &gd[((bi * co + o) * to) * v..((bi * co + o + 1) * to) * v];
                gb.data_mut()[o] += rows.iter().sum::<f64>();
            }
        }
        gb
    });
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// batch normalization over all axes except the channel axis (1)
// ---------------------------------------------------------------------------

/// Saved statistics needed by the adjoint.
#[derive(Debug, Clone)]
pub struct BnSaved {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub training: bool,
}

/// Per-channel mean/variance of `x` over all non-channel axes (biased).
pub fn bn_batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let sp = tail(x.shape(), 2);
    let n = (b * sp) as f64;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for bi in 0..b {
        for cc in 0..c {
            let row = &xd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
            mean[cc] += row.iter().sum::<f64>();
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for bi in 0..b {
        for cc in 0..c {
            let row = &xd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
            let m = mean[cc];
            var[cc] += row.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    (mean, var)
}

/// Normalize, scale, shift using the given statistics.
pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(shape_err("batchnorm needs rank >= 2".into()));
    }
    let (b, c) = (x.shape()[0], x.shape()[1]);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(format!(
            "batchnorm gamma/beta must be [{c}], got {:?}/{:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let sp = tail(x.shape(), 2);
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for cc in 0..c {
            let scale = gamma.data()[cc] * inv_std[cc];
            let shift = beta.data()[cc] - mean[cc] * scale;
            let xrow = &xd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
            let orow = &mut od[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
            for (ov, xv) in orow.iter_mut().zip(xrow) {
                *ov = scale * xv + shift;
            }
        }
    }
    Ok(out)
}

#[allow(clippy::type_complexity)]
pub fn batchnorm_backward(
    x: &Tensor,
    gamma: &Tensor,
    saved: &BnSaved,
    grad: &Tensor,
    want_gx: bool,
    want_gg: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let sp = tail(x.shape(), 2);
    let n = (b * sp) as f64;
    let xd = x.data();
    let gd = grad.data();

    // Per-channel reductions: sum g and sum g * x_hat.
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for bi in 0..b {
        for cc in 0..c {
            let m = saved.mean[cc];
            let is = saved.inv_std[cc];
            let xrow = &xd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
            let grow = &gd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
            let mut sg = 0.0;
            let mut sgx = 0.0;
            for (gv, xv) in grow.iter().zip(xrow) {
                sg += gv;
                sgx += gv * (xv - m) * is;
            }
            sum_g[cc] += sg;
            sum_gx[cc] += sgx;
        }
    }

    let gx = want_gx.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        let gxd = gx.data_mut();
        for bi in 0..b {
            for cc in 0..c {
                let m = saved.mean[cc];
                let is = saved.inv_std[cc];
                let gm = gamma.data()[cc];
                let xrow = &xd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
                let grow = &gd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
                let orow = &mut gxd[(bi * c + cc) * sp..(bi * c + cc + 1) * sp];
                if saved.training {
                    // Gradient flows through the batch statistics.
                    let k1 = gm * is / n;
                    for ((ov, gv), xv) in orow.iter_mut().zip(grow).zip(xrow) {
                        let xh = (xv - m) * is;
                        *ov = k1 * (n * gv - sum_g[cc] - xh * sum_gx[cc]);
                    }
                } else {
                    let k = gm * is;
                    for (ov, gv) in orow.iter_mut().zip(grow) {
                        *ov = k * gv;
                    }
                }
            }
        }
        gx
    });
    let gg = want_gg.then(|| Tensor::from_vec(&[c], sum_gx.clone()).unwrap());
    let gb = want_gg.then(|| Tensor::from_vec(&[c], sum_g.clone()).unwrap());
    (gx, gg, gb)
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------

pub fn tanh(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.tanh();
    }
    out
}

/// `g * (1 - y^2)` where `y = tanh(x)`.
pub fn tanh_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let mut gx = grad.clone();
    for (g, yv) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= 1.0 - yv * yv;
    }
    gx
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let mut gx = grad.clone();
    for (g, xv) in gx.data_mut().iter_mut().zip(x.data()) {
        if *xv <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 || x.shape().last() == Some(&0) {
        return Err(shape_err("softmax needs a non-empty last axis".into()));
    }
    let n = *x.shape().last().unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// `gx = y .* (g - sum_j g_j y_j)` per row.
pub fn softmax_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let n = *y.shape().last().unwrap();
    let mut gx = Tensor::zeros(y.shape());
    for ((grow, yrow), orow) in grad
        .data()
        .chunks(n)
        .zip(y.data().chunks(n))
        .zip(gx.data_mut().chunks_mut(n))
    {
        let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
        for ((o, g), y) in orow.iter_mut().zip(grow).zip(yrow) {
            *o = y * (g - dot);
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// reductions and pooling
// ---------------------------------------------------------------------------

/// Mean over the given (sorted, distinct) axes; reduced axes are dropped.
pub fn mean_axes(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    for w in axes.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Config("mean axes must be sorted and distinct".into()));
        }
    }
    if axes.iter().any(|&a| a >= x.rank()) {
        return Err(shape_err(format!(
            "mean axis out of range for shape {:?}",
            x.shape()
        )));
    }
    if axes.len() == x.rank() {
        let n = x.numel() as f64;
        return Ok(Tensor::scalar(x.data().iter().sum::<f64>() / n));
    }
    let out_shape: Vec<usize> = x
        .shape()
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &e)| e)
        .collect();
    let mut out = Tensor::zeros(&out_shape);
    let in_strides = x.strides();
    let out_strides = crate::tensor::strides_of(&out_shape);
    let count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let inv = 1.0 / count as f64;
    let od = out.data_mut();
    for (lin, &v) in x.data().iter().enumerate() {
        let mut rem = lin;
        let mut oix = 0;
        let mut oaxis = 0;
        for (axis, &st) in in_strides.iter().enumerate() {
            let ix = rem / st;
            rem %= st;
            if !axes.contains(&axis) {
                oix += ix * out_strides[oaxis];
                oaxis += 1;
            }
        }
        od[oix] += v * inv;
    }
    Ok(out)
}

pub fn mean_axes_backward(x_shape: &[usize], axes: &[usize], grad: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(x_shape);
    let count: usize = axes.iter().map(|&a| x_shape[a]).product();
    let inv = 1.0 / count as f64;
    let in_strides = crate::tensor::strides_of(x_shape);
    let out_strides = if axes.len() == x_shape.len() {
        vec![]
    } else {
        let out_shape: Vec<usize> = x_shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &e)| e)
            .collect();
        crate::tensor::strides_of(&out_shape)
    };
    let gd = grad.data();
    for (lin, o) in gx.data_mut().iter_mut().enumerate() {
        let mut rem = lin;
        let mut oix = 0;
        let mut oaxis = 0;
        for (axis, &st) in in_strides.iter().enumerate() {
            let ix = rem / st;
            rem %= st;
            if !axes.contains(&axis) {
                oix += ix * out_strides[oaxis];
                oaxis += 1;
            }
        }
        *o = gd[oix] * inv;
    }
    gx
}

/// Temporal max pooling on `(B,C,T,V)` with odd kernel, same padding.
/// Returns output and per-output argmax (input t index) for the adjoint.
pub fn max_pool_temporal(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<u32>)> {
    if x.rank() != 4 {
        return Err(shape_err("max_pool_temporal needs rank 4".into()));
    }
    if k % 2 == 0 || stride < 1 {
        return Err(Error::Config("pool kernel must be odd, stride >= 1".into()));
    }
    let (b, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let pad = (k - 1) / 2;
    let to = temporal_out_len(t, stride);
    let mut out = Tensor::zeros(&[b, c, to, v]);
    let mut arg = vec![0u32; b * c * to * v];
    let xd = x.data();
    let od = out.data_mut();
    for bc in 0..b * c {
        for tt in 0..to {
            for vv in 0..v {
                let mut best = f64::NEG_INFINITY;
                let mut best_t = 0usize;
                for kk in 0..k {
                    let ti = (tt * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti as usize >= t {
                        continue;
                    }
                    let val = xd[(bc * t + ti as usize) * v + vv];
                    if val > best {
                        best = val;
                        best_t = ti as usize;
                    }
                }
                od[(bc * to + tt) * v + vv] = best;
                arg[(bc * to + tt) * v + vv] = best_t as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool_temporal_backward(
    x_shape: &[usize],
    arg: &[u32],
    grad: &Tensor,
) -> Tensor {
    let (b, c, t, v) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let to = grad.shape()[2];
    let mut gx = Tensor::zeros(&[b, c, t, v]);
    let gd = grad.data();
    let gxd = gx.data_mut();
    for bc in 0..b * c {
        for tt in 0..to {
            for vv in 0..v {
                let ti = arg[(bc * to + tt) * v + vv] as usize;
                gxd[(bc * t + ti) * v + vv] += gd[(bc * to + tt) * v + vv];
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

/// Concatenate along the channel axis (1); all other extents must agree.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat of zero tensors".into()))?;
    if first.rank() < 2 {
        return Err(shape_err("concat needs rank >= 2".into()));
    }
    let b = first.shape()[0];
    let sp = tail(first.shape(), 2);
    let mut c_total = 0;
    for p in parts {
        if p.shape()[0] != b || tail(p.shape(), 2) != sp || p.rank() != first.rank() {
            return Err(shape_err("concat extents differ outside channel axis".into()));
        }
        c_total += p.shape()[1];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[1] = c_total;
    let mut out = Tensor::zeros(&out_shape);
    let od = out.data_mut();
    for bi in 0..b {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = &p.data()[bi * pc * sp..(bi + 1) * pc * sp];
            let dst = &mut od[(bi * c_total + c_off) * sp..(bi * c_total + c_off + pc) * sp];
            dst.copy_from_slice(src);
            c_off += pc;
        }
    }
    Ok(out)
}

/// Split `grad` of the concat output back into per-part gradients.
pub fn concat_channels_backward(part_channels: &[usize], grad: &Tensor) -> Vec<Tensor> {
    let b = grad.shape()[0];
    let sp = tail(grad.shape(), 2);
    let c_total = grad.shape()[1];
    let gd = grad.data();
    let mut outs = Vec::with_capacity(part_channels.len());
    let mut c_off = 0;
    for &pc in part_channels {
        let mut shape = grad.shape().to_vec();
        shape[1] = pc;
        let mut g = Tensor::zeros(&shape);
        for bi in 0..b {
            let src = &gd[(bi * c_total + c_off) * sp..(bi * c_total + c_off + pc) * sp];
            g.data_mut()[bi * pc * sp..(bi + 1) * pc * sp].copy_from_slice(src);
        }
        outs.push(g);
        c_off += pc;
    }
    outs
}

pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    if perm.len() != x.rank() {
        return Err(shape_err("permutation length mismatch".into()));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(shape_err("invalid permutation".into()));
        }
        seen[p] = true;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let in_strides = x.strides();
    let mut out = Tensor::zeros(&out_shape);
    let out_strides = out.strides();
    // For each output linear index, gather from the permuted input offset.
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let od = out.data_mut();
    let xd = x.data();
    for (lin, o) in od.iter_mut().enumerate() {
        let mut rem = lin;
        let mut src = 0;
        for (st_out, st_in) in out_strides.iter().zip(&mapped) {
            let ix = rem / st_out;
            rem %= st_out;
            src += ix * st_in;
        }
        *o = xd[src];
    }
    Ok(out)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Elementwise product of same-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!(
            "mul shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= bv;
    }
    Ok(out)
}

/// `out = a + b` where `b.shape` is a suffix of `a.shape`.
pub fn add_broadcast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ar, br) = (a.rank(), b.rank());
    if br > ar || a.shape()[ar - br..] != *b.shape() {
        return Err(shape_err(format!(
            "broadcast add needs suffix shapes: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let nb = b.numel();
    let mut out = a.clone();
    let bd = b.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += bd[i % nb];
    }
    Ok(out)
}

pub fn add_broadcast_backward_b(b_shape: &[usize], grad: &Tensor) -> Tensor {
    let mut gb = Tensor::zeros(b_shape);
    let nb = gb.numel();
    let gbd = gb.data_mut();
    for (i, g) in grad.data().iter().enumerate() {
        gbd[i % nb] += g;
    }
    gb
}

pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    let mut out = x.clone();
    out.scale_assign(factor);
    out
}

/// `out = s[0] * x` with a learnable one-element scale.
pub fn mul_scalar_param(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    if s.numel() != 1 {
        return Err(shape_err("scalar parameter must have one element".into()));
    }
    Ok(scale(x, s.data()[0]))
}

// ---------------------------------------------------------------------------
// contractions
// ---------------------------------------------------------------------------

/// The batched contraction patterns used by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractKind {
    /// `(B,C,T,V) x (B,C,T,V) -> (B,T,V,V)`: `out[b,t,i,j] = sum_c a[b,c,t,i] b[b,c,t,j]`.
    PairwiseChannel,
    /// `(B,T,V,V) x (B,C,T,V) -> (B,C,T,V)`: `out[b,c,t,i] = sum_j m[b,t,i,j] x[b,c,t,j]`.
    AttentionApply,
    /// `(B,C,V,V) x (B,C,T,V) -> (B,C,T,V)`: `out[b,c,t,i] = sum_j m[b,c,i,j] x[b,c,t,j]`.
    ChannelTopologyApply,
    /// `(V,V) x (B,C,T,V) -> (B,C,T,V)`: `out[b,c,t,i] = sum_j m[i,j] x[b,c,t,j]`.
    JointMatrixApply,
}

pub fn contract(kind: ContractKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    match kind {
        ContractKind::PairwiseChannel => {
            if a.rank() != 4 || a.shape() != b.shape() {
                return Err(shape_err(format!(
                    "pairwise-channel contraction needs equal rank-4 shapes, got {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (bb, c, t, v) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
            let mut out = Tensor::zeros(&[bb, t, v, v]);
            let ad = a.data();
            let bd = b.data();
            let od = out.data_mut();
            for bi in 0..bb {
                for cc in 0..c {
                    for tt in 0..t {
                        let arow = &ad[((bi * c + cc) * t + tt) * v..][..v];
                        let brow = &bd[((bi * c + cc) * t + tt) * v..][..v];
                        for (i, &av) in arow.iter().enumerate() {
                            if av == 0.0 {
                                continue;
                            }
                            let orow = &mut od[((bi * t + tt) * v + i) * v..][..v];
                            for (ov, &bv) in orow.iter_mut().zip(brow) {
                                *ov += av * bv;
                            }
                        }
                    }
                }
            }
            Ok(out)
        }
        ContractKind::AttentionApply => {
            if a.rank() != 4 || b.rank() != 4 {
                return Err(shape_err("attention apply needs rank-4 operands".into()));
            }
            let (bb, t, v) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let c = b.shape()[1];
            if a.shape() != [bb, t, v, v] || b.shape() != [bb, c, t, v] {
                return Err(shape_err(format!(
                    "attention apply shapes: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = Tensor::zeros(&[bb, c, t, v]);
            let ad = a.data();
            let bd = b.data();
            let od = out.data_mut();
            for bi in 0..bb {
                for cc in 0..c {
                    for tt in 0..t {
                        let xrow = &bd[((bi * c + cc) * t + tt) * v..][..v];
                        let orow = &mut od[((bi * c + cc) * t + tt) * v..][..v];
                        for i in 0..v {
                            let mrow = &ad[((bi * t + tt) * v + i) * v..][..v];
                            let mut acc = 0.0;
                            for (mv, xv) in mrow.iter().zip(xrow) {
                                acc += mv * xv;
                            }
                            orow[i] = acc;
                        }
                    }
                }
            }
            Ok(out)
        }
        ContractKind::ChannelTopologyApply => {
            if a.rank() != 4 || b.rank() != 4 {
                return Err(shape_err("channel topology apply needs rank-4 operands".into()));
            }
            let (bb, c, t, v) = (b.shape()[0], b.shape()[1], b.shape()[2], b.shape()[3]);
            if a.shape() != [bb, c, v, v] {
                return Err(shape_err(format!(
                    "channel topology shapes: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = Tensor::zeros(&[bb, c, t, v]);
            let ad = a.data();
            let bd = b.data();
            let od = out.data_mut();
            for bi in 0..bb {
                for cc in 0..c {
                    for tt in 0..t {
                        let xrow = &bd[((bi * c + cc) * t + tt) * v..][..v];
                        let orow = &mut od[((bi * c + cc) * t + tt) * v..][..v];
                        for i in 0..v {
                            let mrow = &ad[((bi * c + cc) * v + i) * v..][..v];
                            let mut acc = 0.0;
                            for (mv, xv) in mrow.iter().zip(xrow) {
                                acc += mv * xv;
                            }
                            orow[i] = acc;
                        }
                    }
                }
            }
            Ok(out)
        }
        ContractKind::JointMatrixApply => {
            if a.rank() != 2 || b.rank() != 4 {
                return Err(shape_err("joint matrix apply needs (V,V) and rank-4".into()));
            }
            let (bb, c, t, v) = (b.shape()[0], b.shape()[1], b.shape()[2], b.shape()[3]);
            if a.shape() != [v, v] {
                return Err(shape_err(format!(
                    "joint matrix shapes: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = Tensor::zeros(&[bb, c, t, v]);
            let ad = a.data();
            let bd = b.data();
            let od = out.data_mut();
            for bct in 0..bb * c * t {
                let xrow = &bd[bct * v..][..v];
                let orow = &mut od[bct * v..][..v];
                for i in 0..v {
                    let mrow = &ad[i * v..][..v];
                    let mut acc = 0.0;
                    for (mv, xv) in mrow.iter().zip(xrow) {
                        acc += mv * xv;
                    }
                    orow[i] = acc;
                }
            }
            Ok(out)
        }
    }
}

pub fn contract_backward(
    kind: ContractKind,
    a: &Tensor,
    b: &Tensor,
    grad: &Tensor,
    want_ga: bool,
    want_gb: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    match kind {
        ContractKind::PairwiseChannel => {
            let (bb, c, t, v) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
            let gd = grad.data();
            let ga = want_ga.then(|| {
                let mut ga = Tensor::zeros(a.shape());
                let gad = ga.data_mut();
                let bd = b.data();
                for bi in 0..bb {
                    for cc in 0..c {
                        for tt in 0..t {
                            let brow = &bd[((bi * c + cc) * t + tt) * v..][..v];
                            let garow = &mut gad[((bi * c + cc) * t + tt) * v..][..v];
                            for i in 0..v {
                                let grow = &gd[((bi * t + tt) * v + i) * v..][..v];
                                let mut acc = 0.0;
                                for (gv, bv) in grow.iter().zip(brow) {
                                    acc += gv * bv;
                                }
                                garow[i] += acc;
                            }
                        }
                    }
                }
                ga
            });
            let gb = want_gb.then(|| {
                let mut gb = Tensor::zeros(b.shape());
                let gbd = gb.data_mut();
                let ad = a.data();
                for bi in 0..bb {
                    for cc in 0..c {
                        for tt in 0..t {
                            let arow = &ad[((bi * c + cc) * t + tt) * v..][..v];
                            let gbrow = &mut gbd[((bi * c + cc) * t + tt) * v..][..v];
                            for (i, &av) in arow.iter().enumerate() {
                                if av == 0.0 {
                                    continue;
                                }
                                let grow = &gd[((bi * t + tt) * v + i) * v..][..v];
                                for (gbv, gv) in gbrow.iter_mut().zip(grow) {
                                    *gbv += av * gv;
                                }
                            }
                        }
                    }
                }
                gb
            });
            (ga, gb)
        }
        ContractKind::AttentionApply => {
            let (bb, c, t, v) = (b.shape()[0], b.shape()[1], b.shape()[2], b.shape()[3]);
            let gd = grad.data();
            let ga = want_ga.then(|| {
                let mut ga = Tensor::zeros(a.shape());
                let gad = ga.data_mut();
                let bd = b.data();
                for bi in 0..bb {
                    for cc in 0..c {
                        for tt in 0..t {
                            let xrow = &bd[((bi * c + cc) * t + tt) * v..][..v];
                            let grow = &gd[((bi * c + cc) * t + tt) * v..][..v];
                            for (i, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let garow = &mut gad[((bi * t + tt) * v + i) * v..][..v];
                                for (gav, xv) in garow.iter_mut().zip(xrow) {
                                    *gav += gv * xv;
                                }
                            }
                        }
                    }
                }
                ga
            });
            let gb = want_gb.then(|| {
                let mut gb = Tensor::zeros(b.shape());
                let gbd = gb.data_mut();
                let ad = a.data();
                for bi in 0..bb {
                    for cc in 0..c {
                        for tt in 0..t {
                            let grow = &gd[((bi * c + cc) * t + tt) * v..][..v];
                            let gbrow = &mut gbd[((bi * c + cc) * t + tt) * v..][..v];
                            for (i, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let mrow = &ad[((bi * t + tt) * v + i) * v..][..v];
                                for (gbv, mv) in gbrow.iter_mut().zip(mrow) {
                                    *gbv += gv * mv;
                                }
                            }
                        }
                    }
                }
                gb
            });
            (ga, gb)
        }
        ContractKind::ChannelTopologyApply => {
            let (bb, c, t, v) = (b.shape()[0], b.shape()[1], b.shape()[2], b.shape()[3]);
            let gd = grad.data();
            let ga = want_ga.then(|| {
                let mut ga = Tensor::zeros(a.shape());
                let gad = ga.data_mut();
                let bd = b.data();
                for bi in 0..bb {
                    for cc in 0..c {
                        for tt in 0..t {
                            let xrow = &bd[((bi * c + cc) * t + tt) * v..][..v];
                            let grow = &gd[((bi * c + cc) * t + tt) * v..][..v];
                            for (i, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let garow = &mut gad[((bi * c + cc) * v + i) * v..][..v];
                                for (gav, xv) in garow.iter_mut().zip(xrow) {
                                    *gav += gv * xv;
                                }
                            }
                        }
                    }
                }
                ga
            });
            let gb = want_gb.then(|| {
                let mut gb = Tensor::zeros(b.shape());
                let gbd = gb.data_mut();
                let ad = a.data();
                for bi in 0..bb {
                    for cc in 0..c {
                        for tt in 0..t {
                            let grow = &gd[((bi * c + cc) * t + tt) * v..][..v];
                            let gbrow = &mut gbd[((bi * c + cc) * t + tt) * v..][..v];
                            for (i, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let mrow = &ad[((bi * c + cc) * v + i) * v..][..v];
                                for (gbv, mv) in gbrow.iter_mut().zip(mrow) {
                                    *gbv += gv * mv;
                                }
                            }
                        }
                    }
                }
                gb
            });
            (ga, gb)
        }
        ContractKind::JointMatrixApply => {
            let (bb, c, t, v) = (b.shape()[0], b.shape()[1], b.shape()[2], b.shape()[3]);
            let gd = grad.data();
            let ga = want_ga.then(|| {
                let mut ga = Tensor::zeros(a.shape());
                let gad = ga.data_mut();
                let bd = b.data();
                for bct in 0..bb * c * t {
                    let xrow = &bd[bct * v..][..v];
                    let grow = &gd[bct * v..][..v];
                    for (i, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let garow = &mut gad[i * v..][..v];
                        for (gav, xv) in garow.iter_mut().zip(xrow) {
                            *gav += gv * xv;
                        }
                    }
                }
                ga
            });
            let gb = want_gb.then(|| {
                let mut gb = Tensor::zeros(b.shape());
                let gbd = gb.data_mut();
                let ad = a.data();
                for bct in 0..bb * c * t {
                    let grow = &gd[bct * v..][..v];
                    let gbrow = &mut gbd[bct * v..][..v];
                    for (i, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let mrow = &ad[i * v..][..v];
                        for (gbv, mv) in gbrow.iter_mut().zip(mrow) {
                            *gbv += gv * mv;
                        }
                    }
                }
                gb
            });
            (ga, gb)
        }
    }
}

// ---------------------------------------------------------------------------
// pairwise difference over the joint axis
// ---------------------------------------------------------------------------

/// `a (B,C,V)`, `b (B,C,V)` -> `out[b,c,i,j] = a[b,c,i] - b[b,c,j]`.
pub fn pairwise_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 3 || a.shape() != b.shape() {
        return Err(shape_err(format!(
            "pairwise_diff needs equal rank-3 shapes, got {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (bb, c, v) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut out = Tensor::zeros(&[bb, c, v, v]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for bc in 0..bb * c {
        let arow = &ad[bc * v..][..v];
        let brow = &bd[bc * v..][..v];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut od[(bc * v + i) * v..][..v];
            for (ov, &bv) in orow.iter_mut().zip(brow) {
                *ov = av - bv;
            }
        }
    }
    Ok(out)
}

pub fn pairwise_diff_backward(
    shape_abc: &[usize],
    grad: &Tensor,
    want_ga: bool,
    want_gb: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (bb, c, v) = (shape_abc[0], shape_abc[1], shape_abc[2]);
    let gd = grad.data();
    let ga = want_ga.then(|| {
        let mut ga = Tensor::zeros(shape_abc);
        let gad = ga.data_mut();
        for bc in 0..bb * c {
            for i in 0..v {
                let grow = &gd[(bc * v + i) * v..][..v];
                gad[bc * v + i] += grow.iter().sum::<f64>();
            }
        }
        ga
    });
    let gb = want_gb.then(|| {
        let mut gb = Tensor::zeros(shape_abc);
        let gbd = gb.data_mut();
        for bc in 0..bb * c {
            let gbrow = &mut gbd[bc * v..][..v];
            for i in 0..v {
                let grow = &gd[(bc * v + i) * v..][..v];
                for (gbv, gv) in gbrow.iter_mut().zip(grow) {
                    *gbv -= gv;
                }
            }
        }
        gb
    });
    (ga, gb)
}

// ---------------------------------------------------------------------------
// label-smoothing cross entropy
// ---------------------------------------------------------------------------

/// Mean over the batch of `-sum_k q_k log p_k` with
/// `q = (1-eps) * onehot(target) + eps / K` and `p = softmax(logits)`.
/// Returns loss and the softmax (saved for the adjoint).
pub fn label_smoothing_ce(
    logits: &Tensor,
    targets: &[usize],
    epsilon: f64,
) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 {
        return Err(shape_err("loss expects logits of shape (B,K)".into()));
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    if targets.len() != b {
        return Err(shape_err("target count must match batch".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::Config(format!(
            "target class {bad} out of range for {k} classes"
        )));
    }
    let softmax = softmax_lastdim(logits)?;
    let mut loss = 0.0;
    for (bi, &target) in targets.iter().enumerate() {
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let uniform = epsilon / k as f64;
        let mut sample = 0.0;
        for (kk, &logit) in row.iter().enumerate() {
            let q = uniform + if kk == target { 1.0 - epsilon } else { 0.0 };
            sample -= q * (logit - lse);
        }
        loss += sample;
    }
    Ok((loss / b as f64, softmax))
}

/// `d loss / d logits = (softmax - q) * upstream / B`.
pub fn label_smoothing_ce_backward(
    softmax: &Tensor,
    targets: &[usize],
    epsilon: f64,
    upstream: f64,
) -> Tensor {
    let (b, k) = (softmax.shape()[0], softmax.shape()[1]);
    let mut g = softmax.clone();
    let scale = upstream / b as f64;
    let uniform = epsilon / k as f64;
    for (bi, &target) in targets.iter().enumerate() {
        let row = &mut g.data_mut()[bi * k..(bi + 1) * k];
        for (kk, v) in row.iter_mut().enumerate() {
            let q = uniform + if kk == target { 1.0 - epsilon } else { 0.0 };
            *v = (*v - q) * scale;
        }
    }
    g
}
