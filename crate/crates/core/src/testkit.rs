//! Seeded generators for random parameters and inputs, shared by the
//! self-check, unit tests and the acceptance suite.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    AttentionParams, BackboneParams, DmsaParams, ExtractionParams, InjectionParams, StageParams,
    TransformerBlockParams,
};
use crate::bev::BevSpec;
use crate::camf::{CrossAlignParams, DeformAttnParams, FuseParams};
use crate::nn::{BatchNormParams, CbrParams, ConvParams, LinearParams, MlpLayer, MlpParams, NormParams, LAYER_NORM_EPS};
use crate::radar::PointFeatureSet;
use crate::tensor::{FeatureMap, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn values(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, values(rng, rows * cols, scale)).expect("sized")
}

pub fn feature_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, scale: f64) -> FeatureMap {
    FeatureMap::from_vec(c, h, w, values(rng, c * h * w, scale)).expect("sized")
}

/// Glorot-scaled weights with small random biases.
pub fn linear(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> LinearParams {
    let a = (6.0 / (out + inp) as f64).sqrt();
    LinearParams::new(matrix(rng, out, inp, a), values(rng, out, 0.1)).expect("sized")
}

pub fn norm(rng: &mut ChaCha8Rng, c: usize) -> NormParams {
    let scale = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    NormParams::new(scale, values(rng, c, 0.2), LAYER_NORM_EPS).expect("valid")
}

pub fn mlp(rng: &mut ChaCha8Rng, dims: &[usize], relu: &[bool]) -> MlpParams {
    MlpParams::new(
        dims.windows(2)
            .zip(relu)
            .map(|(d, &r)| MlpLayer {
                linear: linear(rng, d[1], d[0]),
                relu: r,
            })
            .collect(),
    )
    .expect("chained")
}

pub fn attention(rng: &mut ChaCha8Rng, c: usize, heads: usize) -> AttentionParams {
    AttentionParams {
        q: linear(rng, c, c),
        k: linear(rng, c, c),
        v: linear(rng, c, c),
        o: linear(rng, c, c),
        heads,
    }
}

/// Random DMSA; `beta_max = 0` gives all-zero locality coefficients.
pub fn dmsa(rng: &mut ChaCha8Rng, c: usize, heads: usize, beta_max: f64) -> DmsaParams {
    let beta = (0..heads)
        .map(|_| if beta_max > 0.0 { rng.gen_range(0.0..beta_max) } else { 0.0 })
        .collect();
    DmsaParams::new(attention(rng, c, heads), beta).expect("sized")
}

fn ffn(rng: &mut ChaCha8Rng, c: usize) -> MlpParams {
    mlp(rng, &[c, 2 * c, c], &[true, false])
}

pub fn transformer(rng: &mut ChaCha8Rng, c: usize, heads: usize) -> TransformerBlockParams {
    TransformerBlockParams {
        ln_attn: norm(rng, c),
        attn: dmsa(rng, c, heads, 0.5),
        ln_ffn: norm(rng, c),
        ffn: ffn(rng, c),
    }
}

pub fn injection(rng: &mut ChaCha8Rng, c: usize, heads: usize) -> InjectionParams {
    InjectionParams {
        ln_query: norm(rng, c),
        ln_kv: norm(rng, c),
        attn: attention(rng, c, heads),
        gamma: values(rng, c, 1.0),
    }
}

pub fn extraction(rng: &mut ChaCha8Rng, c: usize, heads: usize) -> ExtractionParams {
    ExtractionParams {
        ln_query: norm(rng, c),
        ln_kv: norm(rng, c),
        attn: attention(rng, c, heads),
        ln_ffn: norm(rng, c),
        ffn: ffn(rng, c),
    }
}

/// Stages with point-MLP widths `point_widths` (stream width doubles them).
pub fn backbone(rng: &mut ChaCha8Rng, in_c: usize, point_widths: &[usize], heads: usize) -> BackboneParams {
    let mut c_in = in_c;
    let stages = point_widths
        .iter()
        .map(|&pw| {
            let c = 2 * pw;
            let s = StageParams {
                point: mlp(rng, &[c_in, pw], &[true]),
                embed: linear(rng, c, c_in),
                tf: transformer(rng, c, heads),
                inject: injection(rng, c, 1),
                extract: extraction(rng, c, 1),
            };
            c_in = c;
            s
        })
        .collect();
    BackboneParams::new(stages, linear(rng, c_in, 2 * c_in)).expect("chained")
}

/// `n` points uniformly inside `spec`, random features and RCS.
pub fn feature_set(rng: &mut ChaCha8Rng, n: usize, channels: usize, spec: &BevSpec) -> PointFeatureSet {
    let mut coords = Matrix::zeros(n, 2);
    for i in 0..n {
        coords[(i, 0)] = rng.gen_range(spec.x_min()..spec.x_max());
        coords[(i, 1)] = rng.gen_range(spec.y_min()..spec.y_max());
    }
    let rcs = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    PointFeatureSet::new(matrix(rng, n, channels, 1.0), coords, rcs).expect("sized")
}

pub fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Offsets reach a few pixels so samples straddle borders.
pub fn deform(rng: &mut ChaCha8Rng, c_q: usize, c_v: usize, heads: usize, points: usize) -> DeformAttnParams {
    let mut offset = linear(rng, 2 * heads * points, c_v);
    offset.bias = values(rng, 2 * heads * points, 2.0);
    DeformAttnParams {
        heads,
        points,
        query_proj: (c_q != c_v).then(|| linear(rng, c_v, c_q)),
        offset,
        attn: linear(rng, heads * points, c_v),
        value: matrix(rng, c_v, c_v, 1.0),
        output: matrix(rng, c_v, c_v, 1.0),
    }
}

pub fn conv(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> ConvParams {
    let a = (6.0 / (9 * (out + inp)) as f64).sqrt();
    ConvParams::new(out, inp, values(rng, out * inp * 9, a), values(rng, out, 0.1)).expect("sized")
}

pub fn cbr(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> CbrParams {
    let var = (0..out).map(|_| rng.gen_range(0.5..2.0)).collect();
    CbrParams {
        conv: conv(rng, out, inp),
        bn: BatchNormParams::new(norm(rng, out), values(rng, out, 0.2), var).expect("valid"),
    }
}

pub fn cross_align(rng: &mut ChaCha8Rng, cc: usize, cr: usize, h: usize, w: usize, heads: usize, points: usize) -> CrossAlignParams {
    CrossAlignParams {
        pos_cam: feature_map(rng, cc, h, w, 0.5),
        pos_radar: feature_map(rng, cr, h, w, 0.5),
        cam_from_radar: deform(rng, cr, cc, heads, points),
        radar_from_cam: deform(rng, cc, cr, heads, points),
    }
}

pub fn fuse(rng: &mut ChaCha8Rng, c_in: usize, c_f: usize, tail: usize) -> FuseParams {
    FuseParams {
        proj: (c_in != c_f).then(|| linear(rng, c_f, c_in)),
        head: cbr(rng, c_f, c_in),
        tail: (0..tail).map(|_| cbr(rng, c_f, c_f)).collect(),
    }
}
