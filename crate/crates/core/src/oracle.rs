//! Slow, direct reference implementations used to check the kernels.
//!
//! Nothing here calls into the optimized code paths beyond reading
//! parameter structs. Loops are written the obvious way with plain
//! left-to-right sums.

use crate::backbone::{AttentionParams, BackboneParams, ExtractionParams, InjectionParams, TransformerBlockParams};
use crate::bev::{BevSpec, ScatterConfig};
use crate::camf::{CrossAlignParams, DeformAttnParams, FuseParams};
use crate::nn::{BatchNormParams, CbrParams, ConvParams, LinearParams, MlpParams, NormParams};
use crate::radar::PointFeatureSet;
use crate::tensor::{FeatureMap, Matrix};

pub fn linear(x: &Matrix, p: &LinearParams) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), p.weight.rows());
    for i in 0..x.rows() {
        for o in 0..p.weight.rows() {
            let mut s = 0.0;
            for k in 0..x.cols() {
                s += p.weight[(o, k)] * x[(i, k)];
            }
            out[(i, o)] = s + p.bias[o];
        }
    }
    out
}

pub fn mlp(x: &Matrix, p: &MlpParams) -> Matrix {
    let mut h = x.clone();
    for layer in p.layers() {
        h = linear(&h, &layer.linear);
        if layer.relu {
            h = h.map(|v| if v > 0.0 { v } else { 0.0 });
        }
    }
    h
}

pub fn layer_norm(x: &Matrix, p: &NormParams) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let n = x.cols() as f64;
    for i in 0..x.rows() {
        let mean = x.row(i).iter().sum::<f64>() / n;
        let var = x.row(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        for c in 0..x.cols() {
            out[(i, c)] = (x[(i, c)] - mean) / (var + p.eps).sqrt() * p.scale[c] + p.shift[c];
        }
    }
    out
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..a.rows() {
        for c in 0..a.cols() {
            out[(i, c)] += b[(i, c)];
        }
    }
    out
}

pub fn point_block(f: &Matrix, p: &MlpParams) -> Matrix {
    let g = mlp(f, p);
    let mut out = Matrix::zeros(g.rows(), 2 * g.cols());
    for c in 0..g.cols() {
        let mut best = f64::NEG_INFINITY;
        for i in 0..g.rows() {
            if g[(i, c)] > best {
                best = g[(i, c)];
            }
        }
        for i in 0..g.rows() {
            out[(i, c)] = g[(i, c)];
            out[(i, g.cols() + c)] = best;
        }
    }
    out
}

/// Vanilla multi-head attention, optionally with a `−β_h·‖x_i − x_j‖²` term.
pub fn multi_head_attention(
    query_src: &Matrix,
    kv_src: &Matrix,
    p: &AttentionParams,
    locality: Option<(&Matrix, &[f64])>,
) -> Matrix {
    let q = linear(query_src, &p.q);
    let k = linear(kv_src, &p.k);
    let v = linear(kv_src, &p.v);
    let c = q.cols();
    let d = c / p.heads;
    let (nq, nk) = (q.rows(), k.rows());
    let mut heads = Matrix::zeros(nq, c);
    for h in 0..p.heads {
        for i in 0..nq {
            let mut logits = vec![0.0; nk];
            for (j, l) in logits.iter_mut().enumerate() {
                let mut s = 0.0;
                for t in h * d..(h + 1) * d {
                    s += q[(i, t)] * k[(j, t)];
                }
                *l = s / (d as f64).sqrt();
                if let Some((coords, betas)) = locality {
                    let dx = coords[(i, 0)] - coords[(j, 0)];
                    let dy = coords[(i, 1)] - coords[(j, 1)];
                    *l -= betas[h] * (dx * dx + dy * dy);
                }
            }
            let weights = softmax(&logits);
            for t in h * d..(h + 1) * d {
                let mut s = 0.0;
                for j in 0..nk {
                    s += weights[j] * v[(j, t)];
                }
                heads[(i, t)] = s;
            }
        }
    }
    linear(&heads, &p.o)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

pub fn transformer_block(f: &Matrix, coords: &Matrix, p: &TransformerBlockParams) -> Matrix {
    let a = multi_head_attention(
        &layer_norm(f, &p.ln_attn),
        &layer_norm(f, &p.ln_attn),
        &p.attn.attn,
        Some((coords, &p.attn.beta)),
    );
    let x = add(f, &a);
    add(&x, &mlp(&layer_norm(&x, &p.ln_ffn), &p.ffn))
}

pub fn inject(f_p: &Matrix, f_t: &Matrix, p: &InjectionParams) -> Matrix {
    let ca = multi_head_attention(&layer_norm(f_p, &p.ln_query), &layer_norm(f_t, &p.ln_kv), &p.attn, None);
    let mut out = f_p.clone();
    for i in 0..out.rows() {
        for c in 0..out.cols() {
            out[(i, c)] += p.gamma[c] * ca[(i, c)];
        }
    }
    out
}

pub fn extract(f_t: &Matrix, f_p: &Matrix, p: &ExtractionParams) -> Matrix {
    let ca = multi_head_attention(&layer_norm(f_t, &p.ln_query), &layer_norm(f_p, &p.ln_kv), &p.attn, None);
    let y = add(f_t, &ca);
    add(&y, &mlp(&layer_norm(&y, &p.ln_ffn), &p.ffn))
}

/// Straight-line stage loop; returns `(f_p, f_t, fused)`.
pub fn backbone(x: &Matrix, coords: &Matrix, p: &BackboneParams) -> (Matrix, Matrix, Matrix) {
    let mut f_p = x.clone();
    let mut f_t = x.clone();
    for s in p.stages() {
        f_p = point_block(&f_p, &s.point);
        f_t = transformer_block(&linear(&f_t, &s.embed), coords, &s.tf);
        f_p = inject(&f_p, &f_t, &s.inject);
        f_t = extract(&f_t, &f_p, &s.extract);
    }
    let mut both = Matrix::zeros(f_p.rows(), f_p.cols() + f_t.cols());
    for i in 0..f_p.rows() {
        for c in 0..f_p.cols() {
            both[(i, c)] = f_p[(i, c)];
            both[(i, f_p.cols() + c)] = f_t[(i, c)];
        }
    }
    let fused = linear(&both, p.merge());
    (f_p, f_t, fused)
}

fn pixel_of(spec: &BevSpec, x: f64, y: f64) -> (f64, f64, i64, i64) {
    let u = (x - spec.x_min()) / spec.resolution();
    let v = (y - spec.y_min()) / spec.resolution();
    let px = (u.floor() as i64).min(spec.width() as i64 - 1);
    let py = (v.floor() as i64).min(spec.height() as i64 - 1);
    (u, v, px, py)
}

fn radius(u: f64, v: f64, v_rcs: f64, cfg: &ScatterConfig) -> f64 {
    let r = cfg.radius_scale() * (u * u + v * v) * v_rcs;
    if r < cfg.radius_cap() {
        r
    } else {
        cfg.radius_cap()
    }
}

/// Every (pixel, point) pair tested; points visited in row order.
pub fn scatter(feats: &PointFeatureSet, spec: &BevSpec, cfg: &ScatterConfig) -> FeatureMap {
    let f = feats.features();
    let (h, w) = (spec.height(), spec.width());
    let located: Vec<_> = (0..feats.len())
        .map(|i| {
            let (u, v, px, py) = pixel_of(spec, feats.coords()[(i, 0)], feats.coords()[(i, 1)]);
            (px, py, radius(u, v, feats.rcs_norm()[i], cfg))
        })
        .collect();
    let mut out = FeatureMap::zeros(f.cols(), h, w);
    for row in 0..h {
        for col in 0..w {
            for (i, &(px, py, r)) in located.iter().enumerate() {
                let dx = (col as i64 - px) as f64;
                let dy = (row as i64 - py) as f64;
                let own = col as i64 == px && row as i64 == py;
                if own || (dx * dx + dy * dy).sqrt() < r {
                    for c in 0..f.cols() {
                        let cur = out.get(c, row, col);
                        out.set(c, row, col, cur + f[(i, c)]);
                    }
                }
            }
        }
    }
    out
}

/// Weight of one point at pixel `(col, row)`, or `None` outside its support.
pub fn gaussian_weight(x: f64, y: f64, v_rcs: f64, col: usize, row: usize, spec: &BevSpec, cfg: &ScatterConfig) -> Option<f64> {
    let (u, v, px, py) = pixel_of(spec, x, y);
    let dx = col as f64 - px as f64;
    let dy = row as f64 - py as f64;
    let own = dx == 0.0 && dy == 0.0;
    let den = (u * u + v * v) * v_rcs / 3.0;
    if den < 1e-9 {
        return own.then_some(1.0);
    }
    if own || (dx * dx + dy * dy).sqrt() < radius(u, v, v_rcs, cfg) {
        Some((-(dx * dx + dy * dy) / den).exp())
    } else {
        None
    }
}

/// Four-corner bilinear lookup with zero outside the grid.
pub fn bilinear(f: &FeatureMap, x: f64, y: f64) -> Vec<f64> {
    let (c, h, w) = f.dims();
    let x0 = x.floor();
    let y0 = y.floor();
    let mut out = vec![0.0; c];
    for (cx, cy) in [(x0, y0), (x0 + 1.0, y0), (x0, y0 + 1.0), (x0 + 1.0, y0 + 1.0)] {
        let wt = (1.0 - (x - cx).abs()) * (1.0 - (y - cy).abs());
        if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
            continue;
        }
        for (ch, o) in out.iter_mut().enumerate() {
            *o += wt * f.get(ch, cy as usize, cx as usize);
        }
    }
    out
}

/// Sum over heads of `W_m Σ_k A_mqk · W'_m F(p_q + Δp_mqk)`, sampling raw `F`
/// first and projecting afterwards.
pub fn deform_attn(queries: &FeatureMap, refs: Option<&[[f64; 2]]>, values: &FeatureMap, p: &DeformAttnParams) -> FeatureMap {
    let (_, h, w) = queries.dims();
    let cv = values.channels();
    let (m, k) = (p.heads, p.points);
    let d = cv / m;
    let z = queries.to_pixel_matrix();
    let z = match &p.query_proj {
        Some(q) => linear(&z, q),
        None => z,
    };
    let offsets = linear(&z, &p.offset);
    let logits = linear(&z, &p.attn);
    let mut out = FeatureMap::zeros(cv, h, w);
    for row in 0..h {
        for col in 0..w {
            let q = row * w + col;
            let (rx, ry) = match refs {
                Some(r) => (r[q][0], r[q][1]),
                None => (col as f64, row as f64),
            };
            for head in 0..m {
                let a = softmax(&(0..k).map(|kk| logits[(q, head * k + kk)]).collect::<Vec<_>>());
                let mut inner = vec![0.0; d];
                for kk in 0..k {
                    let base = 2 * (head * k + kk);
                    let s = bilinear(values, rx + offsets[(q, base)], ry + offsets[(q, base + 1)]);
                    for (t, slot) in inner.iter_mut().enumerate() {
                        let mut proj = 0.0;
                        for (c, sc) in s.iter().enumerate() {
                            proj += p.value[(head * d + t, c)] * sc;
                        }
                        *slot += a[kk] * proj;
                    }
                }
                for o in 0..cv {
                    let mut acc = 0.0;
                    for t in 0..d {
                        acc += p.output[(o, head * d + t)] * inner[t];
                    }
                    let cur = out.get(o, row, col);
                    out.set(o, row, col, cur + acc);
                }
            }
        }
    }
    out
}

pub fn cross_align(f_c: &FeatureMap, f_r: &FeatureMap, p: &CrossAlignParams) -> (FeatureMap, FeatureMap) {
    let add = |a: &FeatureMap, b: &FeatureMap| {
        let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
        FeatureMap::from_vec(a.channels(), a.height(), a.width(), data).expect("same dims")
    };
    let c_e = add(f_c, &p.pos_cam);
    let r_e = add(f_r, &p.pos_radar);
    let dc = deform_attn(&r_e, None, &c_e, &p.cam_from_radar);
    let dr = deform_attn(&c_e, None, &r_e, &p.radar_from_cam);
    (add(&c_e, &dc), add(&r_e, &dr))
}

pub fn conv3x3(x: &FeatureMap, p: &ConvParams) -> FeatureMap {
    let (c_in, h, w) = x.dims();
    let mut out = FeatureMap::zeros(p.c_out, h, w);
    for o in 0..p.c_out {
        for row in 0..h {
            for col in 0..w {
                let mut s = p.bias[o];
                for c in 0..c_in {
                    let kern = p.kernel(o, c);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let r = row as i64 + ky as i64 - 1;
                            let cc = col as i64 + kx as i64 - 1;
                            if r >= 0 && cc >= 0 && r < h as i64 && cc < w as i64 {
                                s += kern[ky * 3 + kx] * x.get(c, r as usize, cc as usize);
                            }
                        }
                    }
                }
                out.set(o, row, col, s);
            }
        }
    }
    out
}

pub fn batch_norm(x: &FeatureMap, p: &BatchNormParams) -> FeatureMap {
    let (c, h, w) = x.dims();
    let mut out = x.clone();
    for ch in 0..c {
        let inv = 1.0 / (p.var[ch] + p.norm.eps).sqrt();
        for row in 0..h {
            for col in 0..w {
                let v = (x.get(ch, row, col) - p.mean[ch]) * inv * p.norm.scale[ch] + p.norm.shift[ch];
                out.set(ch, row, col, v);
            }
        }
    }
    out
}

pub fn cbr(x: &FeatureMap, p: &CbrParams) -> FeatureMap {
    let mut y = batch_norm(&conv3x3(x, &p.conv), &p.bn);
    y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

fn pointwise(x: &FeatureMap, p: &LinearParams) -> FeatureMap {
    let m = linear(&x.to_pixel_matrix(), p);
    FeatureMap::from_pixel_matrix(&m, x.height(), x.width()).expect("pixel count preserved")
}

fn fm_add(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
    FeatureMap::from_vec(a.channels(), a.height(), a.width(), data).expect("same dims")
}

pub fn fuse(f_c: &FeatureMap, f_r: &FeatureMap, p: &FuseParams) -> FeatureMap {
    let mut data = f_c.as_slice().to_vec();
    data.extend_from_slice(f_r.as_slice());
    let multi = FeatureMap::from_vec(f_c.channels() + f_r.channels(), f_c.height(), f_c.width(), data)
        .expect("same grid");
    let skip = match &p.proj {
        Some(proj) => pointwise(&multi, proj),
        None => multi.clone(),
    };
    let mut y = fm_add(&skip, &cbr(&multi, &p.head));
    for b in &p.tail {
        y = fm_add(&y, &cbr(&y, b));
    }
    y
}

/// Single-head dense cross-attention `softmax(QKᵀ/√C)·V`, one query row at a
/// time so memory stays linear in the key count.
pub fn dense_cross_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    let mut logits = vec![0.0; k.rows()];
    for i in 0..q.rows() {
        let qi = q.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, l) in logits.iter_mut().enumerate() {
            let kj = k.row(j);
            let mut s = 0.0;
            for t in 0..qi.len() {
                s += qi[t] * kj[t];
            }
            *l = s * scale;
            max = max.max(*l);
        }
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        let row = out.row_mut(i);
        for (j, &e) in logits.iter().enumerate() {
            let wj = e / total;
            for (o, vv) in row.iter_mut().zip(v.row(j)) {
                *o += wj * vv;
            }
        }
    }
    out
}
