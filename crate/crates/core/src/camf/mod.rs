//! Camera/radar BEV fusion: bidirectional deformable cross-attention followed
//! by a conv fusion stack.

use rayon::prelude::*;

use crate::bev::BevGrid;
use crate::error::{Error, Result};
use crate::nn::{dot, pointwise, softmax_in_place, LinearParams};
use crate::tensor::{FeatureMap, Matrix};

pub use crate::nn::{cbr_block, CbrParams};

/// Multi-head deformable cross-attention.
///
/// `value` stacks the per-head value projections (head `m` owns rows
/// `m·d..(m+1)·d`, `d = C_v / M`); `output` stacks the per-head output maps
/// column-wise the same way. Neither carries a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformAttnParams {
    pub heads: usize,
    pub points: usize,
    /// Maps query features onto the value width when the two differ.
    pub query_proj: Option<LinearParams>,
    /// Query → `2·M·K` pixel offsets, laid out `[m][k][dx, dy]`.
    pub offset: LinearParams,
    /// Query → `M·K` logits, softmaxed over `k` within each head.
    pub attn: LinearParams,
    pub value: Matrix,
    pub output: Matrix,
}

impl DeformAttnParams {
    pub fn value_dim(&self) -> usize {
        self.value.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.value_dim() / self.heads
    }

    pub fn query_dim(&self) -> usize {
        match &self.query_proj {
            Some(p) => p.in_dim(),
            None => self.offset.in_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k, c) = (self.heads, self.points, self.value_dim());
        if m == 0 || k == 0 {
            return Err(Error::config(format!("deformable attention needs M, K >= 1, got M={m}, K={k}")));
        }
        if c % m != 0 {
            return Err(Error::config(format!("value width {c} not divisible by {m} heads")));
        }
        let shapes_ok = self.value.cols() == c
            && self.output.shape() == (c, c)
            && self.offset.in_dim() == c
            && self.offset.out_dim() == 2 * m * k
            && self.attn.in_dim() == c
            && self.attn.out_dim() == m * k
            && self.query_proj.as_ref().map_or(true, |q| q.out_dim() == c);
        if !shapes_ok {
            return Err(Error::shape(format!(
                "deformable attention parameters inconsistent with C={c}, M={m}, K={k}"
            )));
        }
        Ok(())
    }

    /// `M = K = 1`, zero offsets, identity value/output maps.
    pub fn identity(c: usize) -> Self {
        Self {
            heads: 1,
            points: 1,
            query_proj: None,
            offset: LinearParams::zeros(2, c),
            attn: LinearParams::zeros(1, c),
            value: Matrix::identity(c),
            output: Matrix::identity(c),
        }
    }
}

/// Element-wise `F + E`.
pub fn add_pos_embed(f: &BevGrid, e: &FeatureMap) -> Result<BevGrid> {
    if f.map().dims() != e.dims() {
        return Err(Error::shape(format!(
            "position embedding {:?} vs feature {:?}",
            e.dims(),
            f.map().dims()
        )));
    }
    BevGrid::new(f.map().add(e)?, *f.spec())
}

/// One query per pixel of `queries`, sampling `values` around `refs`
/// (continuous `(x, y)` pixel coordinates, default: each query's own pixel).
pub fn deform_attn(
    queries: &FeatureMap,
    refs: Option<&[[f64; 2]]>,
    values: &FeatureMap,
    p: &DeformAttnParams,
) -> Result<FeatureMap> {
    p.validate()?;
    let (cq, h, w) = queries.dims();
    let (cv, vh, vw) = values.dims();
    if (h, w) != (vh, vw) {
        return Err(Error::shape(format!("query grid {h}x{w} vs value grid {vh}x{vw}")));
    }
    if cq != p.query_dim() || cv != p.value_dim() {
        return Err(Error::shape(format!(
            "deformable attention expects {}/{} query/value channels, got {cq}/{cv}",
            p.query_dim(),
            p.value_dim()
        )));
    }
    let n = h * w;
    if let Some(r) = refs {
        if r.len() != n {
            return Err(Error::shape(format!("{} reference points for {n} queries", r.len())));
        }
    }
    let (m, k, d) = (p.heads, p.points, p.head_dim());
    let queries = queries.to_pixel_matrix();
    // values projected once, pixel-major, so each bilinear corner of a head
    // is one contiguous read
    let raw = values.to_pixel_matrix();
    let mut projected = Matrix::zeros(n, cv);
    projected
        .as_mut_slice()
        .par_chunks_mut(cv)
        .zip(raw.as_slice().par_chunks(cv))
        .for_each(|(dst, src)| {
            for (o, v) in dst.iter_mut().enumerate() {
                *v = dot(p.value.row(o), src);
            }
        });
    let projected = projected.as_slice();

    let mut out = Matrix::zeros(n, cv);
    out.as_mut_slice().par_chunks_mut(cv).enumerate().for_each_init(
        || Scratch::new(p, cq),
        |s, (q, out_px)| {
            let (row, col) = (q / w, q % w);
            let [rx, ry] = refs.map_or([col as f64, row as f64], |r| r[q]);
            let z = match &p.query_proj {
                Some(qp) => {
                    qp.apply(queries.row(q), &mut s.z);
                    &s.z[..]
                }
                None => queries.row(q),
            };
            p.offset.apply(z, &mut s.offsets);
            p.attn.apply(z, &mut s.logits);
            for hm in 0..m {
                let logits = &mut s.logits[hm * k..(hm + 1) * k];
                softmax_in_place(logits);
                s.acc.fill(0.0);
                for (kk, &ak) in logits.iter().enumerate() {
                    let base = 2 * (hm * k + kk);
                    let (dx, dy) = (s.offsets[base], s.offsets[base + 1]);
                    sample_pixel_major(projected, cv, hm * d, h, w, rx + dx, ry + dy, ak, &mut s.acc);
                }
                for (o, v) in out_px.iter_mut().enumerate() {
                    *v += dot(&p.output.row(o)[hm * d..(hm + 1) * d], &s.acc);
                }
            }
        },
    );
    FeatureMap::from_pixel_matrix(&out, h, w)
}

struct Scratch {
    z: Vec<f64>,
    offsets: Vec<f64>,
    logits: Vec<f64>,
    acc: Vec<f64>,
}

impl Scratch {
    fn new(p: &DeformAttnParams, cq: usize) -> Self {
        let mk = p.heads * p.points;
        Self {
            z: vec![0.0; if p.query_proj.is_some() { p.value_dim() } else { cq }],
            offsets: vec![0.0; 2 * mk],
            logits: vec![0.0; mk],
            acc: vec![0.0; p.head_dim()],
        }
    }
}

/// `bilinear_accumulate` over channels `first..first + out.len()` of an
/// `[pixel][channel]` buffer with `stride` channels per pixel.
#[allow(clippy::too_many_arguments)]
fn sample_pixel_major(
    data: &[f64],
    stride: usize,
    first: usize,
    h: usize,
    w: usize,
    x: f64,
    y: f64,
    scale: f64,
    out: &mut [f64],
) {
    if !(x > -1.0 && y > -1.0 && x < w as f64 && y < h as f64) {
        return;
    }
    let d = out.len();
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (cx, cy, wt) in corners {
        if wt == 0.0 || cx < 0 || cy < 0 || cx >= w as i64 || cy >= h as i64 {
            continue;
        }
        let at = (cy as usize * w + cx as usize) * stride + first;
        let s = wt * scale;
        for (o, v) in out.iter_mut().zip(&data[at..at + d]) {
            *o += s * v;
        }
    }
}

fn project_queries(queries: &FeatureMap, p: &DeformAttnParams) -> Result<FeatureMap> {
    match &p.query_proj {
        Some(q) => pointwise(queries, q),
        None => Ok(queries.clone()),
    }
}

fn weights_from_queries(z: &FeatureMap, p: &DeformAttnParams) -> Result<FeatureMap> {
    let mut a = pointwise(z, &p.attn)?;
    let n = z.plane_len();
    let k = p.points;
    let data = a.as_mut_slice();
    let mut buf = vec![0.0; k];
    for hm in 0..p.heads {
        for q in 0..n {
            for (kk, b) in buf.iter_mut().enumerate() {
                *b = data[(hm * k + kk) * n + q];
            }
            softmax_in_place(&mut buf);
            for (kk, b) in buf.iter().enumerate() {
                data[(hm * k + kk) * n + q] = *b;
            }
        }
    }
    Ok(a)
}

/// The `M·K` sampling weights per query (plane `m·K + k`), softmaxed over
/// `k` within each head.
pub fn sampling_weights(queries: &FeatureMap, p: &DeformAttnParams) -> Result<FeatureMap> {
    p.validate()?;
    if queries.channels() != p.query_dim() {
        return Err(Error::shape(format!(
            "deformable attention expects {} query channels, got {}",
            p.query_dim(),
            queries.channels()
        )));
    }
    weights_from_queries(&project_queries(queries, p)?, p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossAlignParams {
    pub pos_cam: FeatureMap,
    pub pos_radar: FeatureMap,
    /// Radar queries sampling camera features.
    pub cam_from_radar: DeformAttnParams,
    /// Camera queries sampling radar features.
    pub radar_from_cam: DeformAttnParams,
}

/// Both modalities get their position embedding, then each is updated
/// residually from the other's queries. Both updates read the embedded
/// inputs, never each other's results.
pub fn cross_align(f_c: &BevGrid, f_r: &BevGrid, p: &CrossAlignParams) -> Result<(BevGrid, BevGrid)> {
    if f_c.spec() != f_r.spec() {
        return Err(Error::shape(format!(
            "camera grid {}x{} vs radar grid {}x{}",
            f_c.spec().height(),
            f_c.spec().width(),
            f_r.spec().height(),
            f_r.spec().width()
        )));
    }
    let c_e = add_pos_embed(f_c, &p.pos_cam)?;
    let r_e = add_pos_embed(f_r, &p.pos_radar)?;
    let dc = deform_attn(r_e.map(), None, c_e.map(), &p.cam_from_radar)?;
    let dr = deform_attn(c_e.map(), None, r_e.map(), &p.radar_from_cam)?;
    Ok((
        BevGrid::new(c_e.map().add(&dc)?, *f_c.spec())?,
        BevGrid::new(r_e.map().add(&dr)?, *f_r.spec())?,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuseParams {
    /// 1×1 map from the concatenated width to the fused width; `None` means
    /// the widths already agree.
    pub proj: Option<LinearParams>,
    pub head: CbrParams,
    pub tail: Vec<CbrParams>,
}

/// `y = proj(F) + cbr(F)` over `F = [F_c, F_r]`, then `y += cbr_i(y)` for
/// each tail block.
pub fn channel_spatial_fuse(f_c: &BevGrid, f_r: &BevGrid, p: &FuseParams) -> Result<BevGrid> {
    if f_c.spec() != f_r.spec() {
        return Err(Error::shape("fusion inputs live on different grids"));
    }
    let multi = f_c.map().concat_channels(f_r.map())?;
    let skip = match &p.proj {
        Some(proj) => pointwise(&multi, proj)?,
        None => multi.clone(),
    };
    let mut y = skip.add(&cbr_block(&multi, &p.head)?)?;
    for block in &p.tail {
        y = y.add(&cbr_block(&y, block)?)?;
    }
    BevGrid::new(y, *f_c.spec())
}
