//! Forward and backward kernels for every layer kind.
//!
//! Kernels are free functions over [`Tensor4`]; the network keeps whatever
//! each backward pass needs in its trace. Convolutions are split over output
//! (or input) channels so every scalar is accumulated by exactly one thread
//! in a fixed order.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::par;

/// A 3-D convolution with cubic kernel and "same" zero padding.
///
/// Weights are laid out `[out][in][kz][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel.pow(3)],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn taps(&self) -> usize {
        self.kernel.pow(3)
    }
}

/// Elements per cache-resident work chunk.
const CHUNK: usize = 1024;

/// Runs a kernel compiled with AVX2 when the CPU has it. Both builds perform
/// the same operations in the same order, so results are identical.
macro_rules! simd_dispatch {
    ($name:ident, fn($($arg:ident: $ty:ty),*), $kernel:ident) => {
        fn $name($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) {
                    $kernel($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the feature was detected at runtime.
                    return unsafe { wide($($arg),*) };
                }
            }
            $kernel($($arg),*)
        }
    };
}

/// Channels zero-padded by `pad` voxels on every face and flattened, so
/// that every kernel tap is a constant offset into one contiguous array.
struct Padded {
    data: Vec<f64>,
    /// Elements per padded channel.
    len: usize,
    pdims: [usize; 3],
    pad: usize,
    dims: [usize; 3],
}

impl Padded {
    fn new(x: &[f64], channels: usize, dims: [usize; 3], pad: usize) -> Self {
        let [nx, ny, nz] = dims;
        let pdims = dims.map(|d| d + 2 * pad);
        let len = pdims.iter().product::<usize>();
        let n = nx * ny * nz;
        let mut data = vec![0.0; channels * len];
        for c in 0..channels {
            let src = &x[c * n..(c + 1) * n];
            let dst = &mut data[c * len..(c + 1) * len];
            for z in 0..nz {
                for y in 0..ny {
                    let o = ((z + pad) * pdims[1] + y + pad) * pdims[0] + pad;
                    dst[o..o + nx].copy_from_slice(&src[(z * ny + y) * nx..][..nx]);
                }
            }
        }
        Self { data, len, pdims, pad, dims }
    }

    fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    /// Flat span from the first to one past the last interior voxel; every
    /// tap offset from inside it stays inside the padded array.
    fn span(&self) -> (usize, usize) {
        let [px, py, _] = self.pdims;
        let p = self.pad;
        let [nx, ny, nz] = self.dims;
        let first = (p * py + p) * px + p;
        let last = ((nz - 1 + p) * py + ny - 1 + p) * px + nx - 1 + p;
        (first, last + 1)
    }

    /// Offset of the first tap of each kernel row `(kz, ky)`.
    fn row_offsets(&self, kernel: usize) -> Vec<isize> {
        let [px, py, _] = self.pdims;
        let p = (kernel / 2) as isize;
        let mut out = Vec::with_capacity(kernel * kernel);
        for kz in 0..kernel as isize {
            for ky in 0..kernel as isize {
                out.push(((kz - p) * py as isize + (ky - p)) * px as isize - p);
            }
        }
        out
    }

    /// Copies the interior of a padded-layout buffer into `out`.
    fn extract(&self, padded: &[f64], out: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let [px, py, _] = self.pdims;
        let p = self.pad;
        for z in 0..nz {
            for y in 0..ny {
                let o = ((z + p) * py + y + p) * px + p;
                out[(z * ny + y) * nx..][..nx].copy_from_slice(&padded[o..o + nx]);
            }
        }
    }
}

/// `acc[j] += sum_kx w[kx] * src[j + kx]` for one kernel row.
#[inline(always)]
fn row_axpy(acc: &mut [f64], src: &[f64], w: &[f64]) {
    let m = acc.len();
    if let [w0, w1, w2] = *w {
        let (s0, s1, s2) = (&src[..m], &src[1..m + 1], &src[2..m + 2]);
        for j in 0..m {
            acc[j] += w0 * s0[j] + w1 * s1[j] + w2 * s2[j];
        }
    } else {
        for (kx, &wk) in w.iter().enumerate() {
            for (a, s) in acc.iter_mut().zip(&src[kx..kx + m]) {
                *a += wk * s;
            }
        }
    }
}

/// One output channel over the padded span; `out` is in padded layout.
#[inline(always)]
fn correlate_channel_kernel(out: &mut [f64], xp: &Padded, in_channels: usize, kernel: usize, weights: &[f64], bias: f64) {
    let (start, end) = xp.span();
    let rows = xp.row_offsets(kernel);
    let k3 = kernel.pow(3);
    for c0 in (start..end).step_by(CHUNK) {
        let acc = &mut out[c0..(c0 + CHUNK).min(end)];
        let m = acc.len();
        acc.fill(bias);
        for ic in 0..in_channels {
            let src = xp.channel(ic);
            let w = &weights[ic * k3..(ic + 1) * k3];
            for (r, &d) in rows.iter().enumerate() {
                let s = (c0 as isize + d) as usize;
                row_axpy(acc, &src[s..s + m + kernel - 1], &w[r * kernel..(r + 1) * kernel]);
            }
        }
    }
}

simd_dispatch!(
    correlate_channel,
    fn(out: &mut [f64], xp: &Padded, in_channels: usize, kernel: usize, weights: &[f64], bias: f64),
    correlate_channel_kernel
);

/// Same-padded cross-correlation of channel-major `x` with
/// `weight[out][in][tap]`, returning channel-major output.
fn correlate(
    x: &[f64],
    in_channels: usize,
    dims: [usize; 3],
    kernel: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let xp = Padded::new(x, in_channels, dims, kernel / 2);
    let n = dims.iter().product::<usize>();
    let per_out = in_channels * kernel.pow(3);
    let mut out = vec![0.0; bias.len() * n];
    par::for_each_chunk_mut(&mut out, n, |oc, plane| {
        let mut padded = vec![0.0; xp.len];
        correlate_channel(&mut padded, &xp, in_channels, kernel, &weight[oc * per_out..][..per_out], bias[oc]);
        xp.extract(&padded, plane);
    });
    out
}

/// `sum a[i] * b[i]` with eight interleaved partial sums.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (p, q) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += p[l] * q[l];
        }
    }
    let mut tail = 0.0;
    for (p, q) in ra.iter().zip(rb) {
        tail += p * q;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// Weight gradient `wg[in][tap]` of one output channel from its padded
/// output gradient `g`. Chunks are added in a fixed order.
#[inline(always)]
fn weight_grad_kernel(wg: &mut [f64], g: &[f64], xp: &Padded, in_channels: usize, kernel: usize) {
    let (start, end) = xp.span();
    let rows = xp.row_offsets(kernel);
    let k3 = kernel.pow(3);
    wg.fill(0.0);
    for c0 in (start..end).step_by(CHUNK) {
        let gc = &g[c0..(c0 + CHUNK).min(end)];
        let m = gc.len();
        for ic in 0..in_channels {
            let src = xp.channel(ic);
            let w = &mut wg[ic * k3..(ic + 1) * k3];
            for (r, &d) in rows.iter().enumerate() {
                let s = (c0 as isize + d) as usize;
                for kx in 0..kernel {
                    w[r * kernel + kx] += dot(gc, &src[s + kx..s + kx + m]);
                }
            }
        }
    }
}

simd_dispatch!(
    weight_grad_channel,
    fn(wg: &mut [f64], g: &[f64], xp: &Padded, in_channels: usize, kernel: usize),
    weight_grad_kernel
);

/// `[out][in][tap]` weight gradient of a same-padded correlation.
fn weight_grad(x: &[f64], in_channels: usize, g: &[f64], oc: usize, dims: [usize; 3], kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let xp = Padded::new(x, in_channels, dims, pad);
    // The padding ring of the gradient is zero, so sums over the padded span
    // only see interior voxels.
    let gp = Padded::new(g, oc, dims, pad);
    let per_out = in_channels * kernel.pow(3);
    let mut out = vec![0.0; oc * per_out];
    par::for_each_chunk_mut(&mut out, per_out, |o, wg| {
        weight_grad_channel(wg, gp.channel(o), &xp, in_channels, kernel);
    });
    out
}

/// Cross-correlation with zero padding; output dims equal input dims.
pub fn conv3d_forward(x: &Tensor4, conv: &Conv3d) -> Result<Tensor4> {
    if x.channels() != conv.in_channels {
        return Err(Error::InvalidParameter(format!(
            "conv expects {} input channels, got {}",
            conv.in_channels,
            x.channels()
        )));
    }
    if conv.kernel.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "kernel size {} must be odd for same padding",
            conv.kernel
        )));
    }
    let out = correlate(x.data(), conv.in_channels, x.dims(), conv.kernel, &conv.weight, &conv.bias);
    Ok(Tensor4::from_raw(conv.out_channels, x.dims(), out))
}

/// Gradients of a convolution given its input and the output gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor4>,
}

pub fn conv3d_backward(x: &Tensor4, conv: &Conv3d, grad_out: &Tensor4, need_input: bool) -> ConvGrads {
    let dims = x.dims();
    let taps = conv.taps();
    let oc = conv.out_channels;
    let g = grad_out.data();

    let weight = weight_grad(x.data(), conv.in_channels, g, oc, dims, conv.kernel);
    let bias = (0..oc).map(|c| grad_out.channel(c).iter().sum()).collect();

    // The input gradient is a correlation of the output gradient with the
    // spatially flipped, channel-transposed kernel.
    let input = need_input.then(|| {
        let ic = conv.in_channels;
        let mut flipped = vec![0.0; conv.weight.len()];
        for o in 0..oc {
            for i in 0..ic {
                for t in 0..taps {
                    flipped[(i * oc + o) * taps + (taps - 1 - t)] = conv.weight[(o * ic + i) * taps + t];
                }
            }
        }
        let gin = correlate(g, oc, dims, conv.kernel, &flipped, &vec![0.0; ic]);
        Tensor4::from_raw(ic, dims, gin)
    });
    ConvGrads {
        weight,
        bias,
        input,
    }
}

pub fn relu_forward(x: &mut Tensor4) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose forward output was not positive.
pub fn relu_backward(out: &Tensor4, grad: &mut Tensor4) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Non-overlapping 2x2x2 max pooling. Returns the pooled tensor and, per
/// output element, the flat index (within its channel) of the winning input.
/// Ties go to the first voxel in x-fastest order.
pub fn maxpool3d_forward(x: &Tensor4) -> Result<(Tensor4, Vec<u32>)> {
    let d = x.dims();
    if d.iter().any(|&v| v % 2 != 0) {
        return Err(Error::InvalidParameter(format!(
            "max pooling needs even dims, got {d:?}"
        )));
    }
    let od = d.map(|v| v / 2);
    let on: usize = od.iter().product();
    let c = x.channels();
    let mut out = vec![0.0; c * on];
    let mut arg = vec![0u32; c * on];
    for ch in 0..c {
        let src = x.channel(ch);
        for z in 0..od[2] {
            for y in 0..od[1] {
                for xo in 0..od[0] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = (2 * xo + dx) + d[0] * ((2 * y + dy) + d[1] * (2 * z + dz));
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = ch * on + xo + od[0] * (y + od[1] * z);
                    out[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
    }
    Ok((Tensor4::from_raw(c, od, out), arg))
}

pub fn maxpool3d_backward(grad_out: &Tensor4, argmax: &[u32], in_dims: [usize; 3]) -> Tensor4 {
    let c = grad_out.channels();
    let n: usize = in_dims.iter().product();
    let on = grad_out.voxels();
    let mut gin = Tensor4::zeros(c, in_dims);
    for ch in 0..c {
        let g = grad_out.channel(ch);
        let dst = gin.channel_mut(ch);
        for o in 0..on {
            dst[argmax[ch * on + o] as usize] += g[o];
        }
        debug_assert_eq!(dst.len(), n);
    }
    gin
}

/// Rule for 2x upsampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    /// Each voxel repeated into a 2x2x2 block.
    #[default]
    Nearest,
    /// Separable linear interpolation at half-voxel offsets, edge-clamped.
    Trilinear,
}

pub fn upsample3d_forward(x: &Tensor4, mode: UpsampleMode) -> Tensor4 {
    match mode {
        UpsampleMode::Nearest => upsample_nearest(x),
        UpsampleMode::Trilinear => {
            let mut t = x.clone();
            for axis in 0..3 {
                t = linear_up_axis(&t, axis);
            }
            t
        }
    }
}

pub fn upsample3d_backward(grad_out: &Tensor4, mode: UpsampleMode) -> Tensor4 {
    match mode {
        UpsampleMode::Nearest => {
            let od = grad_out.dims();
            let id = od.map(|v| v / 2);
            let c = grad_out.channels();
            let mut gin = Tensor4::zeros(c, id);
            for ch in 0..c {
                let g = grad_out.channel(ch);
                let dst = gin.channel_mut(ch);
                for z in 0..od[2] {
                    for y in 0..od[1] {
                        for x in 0..od[0] {
                            dst[x / 2 + id[0] * (y / 2 + id[1] * (z / 2))] +=
                                g[x + od[0] * (y + od[1] * z)];
                        }
                    }
                }
            }
            gin
        }
        UpsampleMode::Trilinear => {
            let mut t = grad_out.clone();
            for axis in (0..3).rev() {
                t = linear_up_axis_backward(&t, axis);
            }
            t
        }
    }
}

fn upsample_nearest(x: &Tensor4) -> Tensor4 {
    let id = x.dims();
    let od = id.map(|v| 2 * v);
    let on: usize = od.iter().product();
    let c = x.channels();
    let mut out = vec![0.0; c * on];
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = &mut out[ch * on..(ch + 1) * on];
        for z in 0..od[2] {
            for y in 0..od[1] {
                let srow = id[0] * (y / 2 + id[1] * (z / 2));
                let drow = od[0] * (y + od[1] * z);
                for xo in 0..od[0] {
                    dst[drow + xo] = src[srow + xo / 2];
                }
            }
        }
    }
    Tensor4::from_raw(c, od, out)
}

/// Stride of `axis` and the dims after doubling it.
fn axis_geometry(dims: [usize; 3], axis: usize) -> (usize, [usize; 3]) {
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut od = dims;
    od[axis] *= 2;
    (stride, od)
}

/// Doubles one axis: `out[2i] = .25 in[i-1] + .75 in[i]`,
/// `out[2i+1] = .75 in[i] + .25 in[i+1]`, indices clamped at the edges.
fn linear_up_axis(x: &Tensor4, axis: usize) -> Tensor4 {
    let id = x.dims();
    let (_, od) = axis_geometry(id, axis);
    let n = id[axis];
    let c = x.channels();
    let on: usize = od.iter().product();
    let mut out = vec![0.0; c * on];
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = &mut out[ch * on..(ch + 1) * on];
        for z in 0..od[2] {
            for y in 0..od[1] {
                for xo in 0..od[0] {
                    let mut p = [xo, y, z];
                    let o = p[axis];
                    let i = o / 2;
                    let j = if o % 2 == 0 { i.saturating_sub(1) } else { (i + 1).min(n - 1) };
                    p[axis] = i;
                    let a = src[p[0] + id[0] * (p[1] + id[1] * p[2])];
                    p[axis] = j;
                    let b = src[p[0] + id[0] * (p[1] + id[1] * p[2])];
                    dst[xo + od[0] * (y + od[1] * z)] = 0.75 * a + 0.25 * b;
                }
            }
        }
    }
    Tensor4::from_raw(c, od, out)
}

fn linear_up_axis_backward(g: &Tensor4, axis: usize) -> Tensor4 {
    let od = g.dims();
    let mut id = od;
    id[axis] /= 2;
    let n = id[axis];
    let c = g.channels();
    let mut gin = Tensor4::zeros(c, id);
    for ch in 0..c {
        let src = g.channel(ch);
        let dst = gin.channel_mut(ch);
        for z in 0..od[2] {
            for y in 0..od[1] {
                for xo in 0..od[0] {
                    let gv = src[xo + od[0] * (y + od[1] * z)];
                    let mut p = [xo, y, z];
                    let o = p[axis];
                    let i = o / 2;
                    let j = if o % 2 == 0 { i.saturating_sub(1) } else { (i + 1).min(n - 1) };
                    p[axis] = i;
                    dst[p[0] + id[0] * (p[1] + id[1] * p[2])] += 0.75 * gv;
                    p[axis] = j;
                    dst[p[0] + id[0] * (p[1] + id[1] * p[2])] += 0.25 * gv;
                }
            }
        }
    }
    gin
}

/// Whether dropout masks values or passes them through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Inverted dropout. In training each value is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; at inference it is the
/// identity. Returns the per-value multiplier for the backward pass
/// (`None` when nothing was masked).
pub fn dropout_forward(x: &mut Tensor4, p: f64, mode: Mode, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
    if mode == Mode::Infer || p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.data().len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    for (v, m) in x.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

/// Channel concatenation, `a` first.
pub fn concat_forward(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidParameter(format!(
            "cannot concatenate spatial dims {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor4::from_raw(a.channels() + b.channels(), a.dims(), data))
}

/// Splits a concatenated tensor back into its first `a_channels` and the rest.
pub fn concat_backward(g: &Tensor4, a_channels: usize) -> (Tensor4, Tensor4) {
    let cut = a_channels * g.voxels();
    let (a, b) = g.data().split_at(cut);
    (
        Tensor4::from_raw(a_channels, g.dims(), a.to_vec()),
        Tensor4::from_raw(g.channels() - a_channels, g.dims(), b.to_vec()),
    )
}
