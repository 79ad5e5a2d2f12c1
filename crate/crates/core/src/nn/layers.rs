use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Dense affine map: `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearParams {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::shape(format!(
                "linear weight has {} outputs but bias has {}",
                weight.rows(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        linear(x, &self.weight, &self.bias)
    }

    /// Apply to a single vector.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim());
        debug_assert_eq!(out.len(), self.out_dim());
        for (o, y) in out.iter_mut().enumerate() {
            *y = dot(self.weight.row(o), x) + self.bias[o];
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y[i] = w · x[i] + b` for every row of `x`.
pub fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols() != w.cols() {
        return Err(Error::shape(format!(
            "linear: input has {} features, weight expects {}",
            x.cols(),
            w.cols()
        )));
    }
    if b.len() != w.rows() {
        return Err(Error::shape(format!(
            "linear: bias length {} != output dim {}",
            b.len(),
            w.rows()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), w.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        let yi = out.row_mut(i);
        for (o, y) in yi.iter_mut().enumerate() {
            *y = dot(w.row(o), xi) + b[o];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayer {
    pub linear: LinearParams,
    pub relu: bool,
}

/// Stack of affine layers, each optionally followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<MlpLayer>,
}

impl MlpParams {
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self> {
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].linear.out_dim() != pair[1].linear.in_dim() {
                return Err(Error::shape(format!(
                    "mlp layer {k} outputs {} but layer {} expects {}",
                    pair[0].linear.out_dim(),
                    k + 1,
                    pair[1].linear.in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.linear.in_dim())
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.linear.out_dim())
    }

    /// Apply to a single vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.linear.out_dim()];
            layer.linear.apply(&cur, &mut next);
            if layer.relu {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur
    }
}

pub fn mlp(x: &Matrix, p: &MlpParams) -> Result<Matrix> {
    let mut cur = x.clone();
    for layer in &p.layers {
        cur = layer.linear.forward(&cur)?;
        if layer.relu {
            cur = cur.map(relu);
        }
    }
    Ok(cur)
}

#[inline]
pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Scale/shift pair shared by layer-norm and batch-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub eps: f64,
}

impl NormParams {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>, eps: f64) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::shape(format!(
                "norm scale length {} != shift length {}",
                scale.len(),
                shift.len()
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::config(format!("norm epsilon must be > 0, got {eps}")));
        }
        Ok(Self { scale, shift, eps })
    }

    /// Unit scale, zero shift.
    pub fn unit(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }
}

/// Per-row normalization with population variance.
pub fn layer_norm(x: &Matrix, p: &NormParams) -> Result<Matrix> {
    if x.cols() != p.dim() {
        return Err(Error::shape(format!(
            "layer_norm: {} columns vs {} parameters",
            x.cols(),
            p.dim()
        )));
    }
    let c = x.cols() as f64;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + p.eps).sqrt();
        for (j, y) in out.row_mut(i).iter_mut().enumerate() {
            *y = (row[j] - mean) * inv * p.scale[j] + p.shift[j];
        }
    }
    Ok(out)
}

/// Inference-mode batch normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub norm: NormParams,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(norm: NormParams, mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != norm.dim() || var.len() != norm.dim() {
            return Err(Error::shape("batch-norm statistics length mismatch"));
        }
        if var.iter().any(|&v| v < 0.0) {
            return Err(Error::data("batch-norm running variance must be >= 0"));
        }
        Ok(Self { norm, mean, var })
    }

    /// mean 0, variance 1, unit scale, zero shift.
    pub fn unit(dim: usize) -> Self {
        Self {
            norm: NormParams {
                eps: BATCH_NORM_EPS,
                ..NormParams::unit(dim)
            },
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.norm.dim()
    }
}

pub fn batch_norm(x: &FeatureMap, p: &BatchNormParams) -> Result<FeatureMap> {
    if x.channels() != p.dim() {
        return Err(Error::shape(format!(
            "batch_norm: {} channels vs {} parameters",
            x.channels(),
            p.dim()
        )));
    }
    let mut out = x.clone();
    for c in 0..x.channels() {
        let a = p.norm.scale[c] / (p.var[c] + p.norm.eps).sqrt();
        let mean = p.mean[c];
        let shift = p.norm.shift[c];
        for v in out.plane_mut(c) {
            *v = (*v - mean) * a + shift;
        }
    }
    Ok(out)
}

/// Softmax of a slice in place, max-subtracted.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Softmax along `axis` (0: down each column, 1: across each row).
pub fn softmax(x: &Matrix, axis: usize) -> Result<Matrix> {
    if !x.is_finite() {
        return Err(Error::data("softmax input contains non-finite values"));
    }
    match axis {
        1 => {
            let mut out = x.clone();
            for i in 0..out.rows() {
                softmax_in_place(out.row_mut(i));
            }
            Ok(out)
        }
        0 => Ok(softmax(&x.transpose(), 1)?.transpose()),
        _ => Err(Error::config(format!("softmax axis must be 0 or 1, got {axis}"))),
    }
}

/// Column-wise maximum over all rows.
pub fn max_pool_points(x: &Matrix) -> Result<Vec<f64>> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput("max_pool_points over zero points".into()));
    }
    let mut out = x.row(0).to_vec();
    for row in x.row_iter().skip(1) {
        for (m, &v) in out.iter_mut().zip(row) {
            if v > *m {
                *m = v;
            }
        }
    }
    Ok(out)
}

/// 3×3 convolution kernels, `weight` laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub c_out: usize,
    pub c_in: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(c_out: usize, c_in: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != c_out * c_in * 9 || bias.len() != c_out {
            return Err(Error::shape(format!(
                "conv3x3 {c_out}x{c_in}: got {} kernel values and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            c_out,
            c_in,
            weight,
            bias,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            c_out,
            c_in,
            weight: vec![0.0; c_out * c_in * 9],
            bias: vec![0.0; c_out],
        }
    }

    /// Kernel that copies input channel `o` to output channel `o`.
    pub fn delta(channels: usize) -> Self {
        let mut p = Self::zeros(channels, channels);
        for o in 0..channels {
            p.weight[(o * channels + o) * 9 + 4] = 1.0;
        }
        p
    }

    #[inline]
    pub fn kernel(&self, o: usize, c: usize) -> &[f64] {
        let base = (o * self.c_in + c) * 9;
        &self.weight[base..base + 9]
    }
}

/// Zero-padded 3×3 cross-correlation, stride 1, padding 1.
pub fn conv3x3(x: &FeatureMap, p: &ConvParams) -> Result<FeatureMap> {
    if x.channels() != p.c_in {
        return Err(Error::shape(format!(
            "conv3x3: input has {} channels, kernels expect {}",
            x.channels(),
            p.c_in
        )));
    }
    let (_, h, w) = x.dims();
    let mut out = FeatureMap::zeros(p.c_out, h, w);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(p.bias[o]);
            for c in 0..p.c_in {
                let src = x.plane(c);
                let k = p.kernel(o, c);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wk = k[ky * 3 + kx];
                        if wk == 0.0 {
                            continue;
                        }
                        accumulate_shifted(plane, src, h, w, ky, kx, wk);
                    }
                }
            }
        });
    Ok(out)
}

/// `dst[r][j] += wk * src[r + ky - 1][j + kx - 1]` over in-range taps.
#[inline]
fn accumulate_shifted(
    dst: &mut [f64],
    src: &[f64],
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    wk: f64,
) {
    let r_lo = if ky == 0 { 1 } else { 0 };
    let r_hi = if ky == 2 { h - 1 } else { h };
    let j_lo = if kx == 0 { 1 } else { 0 };
    let j_hi = if kx == 2 { w - 1 } else { w };
    if j_lo >= j_hi {
        return;
    }
    for r in r_lo..r_hi {
        let sr = r + ky - 1;
        let d = &mut dst[r * w + j_lo..r * w + j_hi];
        let s = &src[sr * w + j_lo + kx - 1..sr * w + j_hi + kx - 1];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += wk * sv;
        }
    }
}

/// Conv 3×3 → inference batch-norm → ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct CbrParams {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

impl CbrParams {
    pub fn in_channels(&self) -> usize {
        self.conv.c_in
    }

    pub fn out_channels(&self) -> usize {
        self.conv.c_out
    }
}

pub fn cbr_block(x: &FeatureMap, p: &CbrParams) -> Result<FeatureMap> {
    if p.bn.dim() != p.conv.c_out {
        return Err(Error::shape(format!(
            "CBR block: conv emits {} channels, batch-norm has {}",
            p.conv.c_out,
            p.bn.dim()
        )));
    }
    let mut y = batch_norm(&conv3x3(x, &p.conv)?, &p.bn)?;
    y.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
    Ok(y)
}

/// Per-pixel channel projection (a 1×1 convolution).
pub fn pointwise(x: &FeatureMap, p: &LinearParams) -> Result<FeatureMap> {
    if x.channels() != p.in_dim() {
        return Err(Error::shape(format!(
            "1x1 projection: input has {} channels, weight expects {}",
            x.channels(),
            p.in_dim()
        )));
    }
    let (_, h, w) = x.dims();
    let n = h * w;
    let mut out = FeatureMap::zeros(p.out_dim(), h, w);
    out.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(o, plane)| {
            if n == 0 {
                return;
            }
            plane.fill(0.0);
            for c in 0..p.in_dim() {
                let wk = p.weight[(o, c)];
                for (dv, sv) in plane.iter_mut().zip(x.plane(c)) {
                    *dv += wk * sv;
                }
            }
            let b = p.bias[o];
            plane.iter_mut().for_each(|v| *v += b);
        });
    Ok(out)
}

/// Bilinear lookup at continuous pixel coordinate (`x` along width, `y`
/// along height). Corners outside the grid contribute zero.
pub fn bilinear_sample(grid: &FeatureMap, x: f64, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; grid.channels()];
    bilinear_accumulate(grid, x, y, 1.0, &mut out);
    out
}

/// `out += scale * bilinear_sample(grid, x, y)` without allocating.
pub fn bilinear_accumulate(grid: &FeatureMap, x: f64, y: f64, scale: f64, out: &mut [f64]) {
    let (c, h, w) = grid.dims();
    debug_assert_eq!(out.len(), c);
    if !(x > -1.0 && y > -1.0 && x < w as f64 && y < h as f64) {
        return;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let n = h * w;
    let data = grid.as_slice();
    for (cx, cy, wt) in corners {
        if wt == 0.0 || cx < 0 || cy < 0 || cx >= w as i64 || cy >= h as i64 {
            continue;
        }
        let idx = cy as usize * w + cx as usize;
        let s = wt * scale;
        for (ch, o) in out.iter_mut().enumerate() {
            *o += s * data[ch * n + idx];
        }
    }
}
