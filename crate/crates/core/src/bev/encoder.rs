use rayon::prelude::*;

use crate::bev::grid::BevGrid;
use crate::error::{Error, Result};
use crate::nn::{cbr_block, pointwise, CbrParams, LinearParams, MlpParams};
use crate::tensor::FeatureMap;

/// Per-pixel MLP over `[f_rcs; g_rcs]`.
pub fn rcs_bev_feature(f_rcs: &BevGrid, g_rcs: &BevGrid, mlp: &MlpParams) -> Result<BevGrid> {
    let input = f_rcs.map().concat_channels(g_rcs.map())?;
    let in_dim = mlp
        .in_dim()
        .ok_or_else(|| Error::config("RCS MLP has no layers"))?;
    if input.channels() != in_dim {
        return Err(Error::shape(format!(
            "RCS MLP expects {in_dim} channels, got {} feature + {} weight channels",
            f_rcs.channels(),
            g_rcs.channels()
        )));
    }
    let out = map_pixels(&input, mlp)?;
    BevGrid::new(out, *f_rcs.spec())
}

/// Apply `mlp` independently at every pixel.
pub fn map_pixels(input: &FeatureMap, mlp: &MlpParams) -> Result<FeatureMap> {
    let (c_in, h, w) = input.dims();
    let c_out = mlp.out_dim().unwrap_or(c_in);
    let n = h * w;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let x: Vec<f64> = (0..c_in).map(|c| input.as_slice()[c * n + p]).collect();
            mlp.apply(&x)
        })
        .collect();
    let mut out = FeatureMap::zeros(c_out, h, w);
    for (p, y) in rows.iter().enumerate() {
        for (c, &v) in y.iter().enumerate() {
            out.as_mut_slice()[c * n + p] = v;
        }
    }
    Ok(out)
}

/// Residual conv stack standing in for a SECOND-style BEV encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct BevEncoderParams {
    /// 1×1 projection onto the block width, absent when widths already match.
    pub proj: Option<LinearParams>,
    pub blocks: Vec<CbrParams>,
}

/// `x = proj([f'_rcs; base])`, then `x += cbr(x)` per block. With no blocks
/// the raw concatenation is returned.
pub fn bev_encode(f_rcs_prime: &BevGrid, base: &BevGrid, p: &BevEncoderParams) -> Result<BevGrid> {
    let mut x = f_rcs_prime.map().concat_channels(base.map())?;
    if p.blocks.is_empty() {
        return BevGrid::new(x, *f_rcs_prime.spec());
    }
    if let Some(proj) = &p.proj {
        x = pointwise(&x, proj)?;
    }
    for block in &p.blocks {
        x = x.add(&cbr_block(&x, block)?)?;
    }
    BevGrid::new(x, *f_rcs_prime.spec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::BevSpec;
    use crate::nn::{BatchNormParams, ConvParams, MlpLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec3() -> BevSpec {
        BevSpec::new(0.0, 3.0, 0.0, 3.0, 1.0).unwrap()
    }

    fn rand_grid(rng: &mut ChaCha8Rng, c: usize, spec: BevSpec) -> BevGrid {
        let n = c * spec.height() * spec.width();
        BevGrid::new(
            FeatureMap::from_vec(
                c,
                spec.height(),
                spec.width(),
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            spec,
        )
        .unwrap()
    }

    #[test]
    fn identity_mlp_returns_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = rand_grid(&mut rng, 2, spec3());
        let g = rand_grid(&mut rng, 1, spec3());
        let mlp = MlpParams::new(vec![MlpLayer {
            linear: LinearParams::identity(3),
            relu: false,
        }])
        .unwrap();
        let out = rcs_bev_feature(&f, &g, &mlp).unwrap();
        assert_eq!(out.map(), &f.map().concat_channels(g.map()).unwrap());
    }

    #[test]
    fn zero_inputs_zero_bias_give_zero() {
        let f = BevGrid::zeros(2, spec3());
        let g = BevGrid::zeros(1, spec3());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = crate::tensor::Matrix::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let mlp = MlpParams::new(vec![MlpLayer {
            linear: LinearParams::new(w, vec![0.0; 4]).unwrap(),
            relu: true,
        }])
        .unwrap();
        let out = rcs_bev_feature(&f, &g, &mlp).unwrap();
        assert!(out.map().as_slice().iter().all(|&v| v == 0.0));
        let bad = MlpParams::new(vec![MlpLayer {
            linear: LinearParams::identity(5),
            relu: false,
        }])
        .unwrap();
        assert!(matches!(rcs_bev_feature(&f, &g, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn random_grid_matches_per_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = rand_grid(&mut rng, 3, spec3());
        let g = rand_grid(&mut rng, 1, spec3());
        let w1 = crate::tensor::Matrix::from_vec(5, 4, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let b1: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mlp = MlpParams::new(vec![MlpLayer {
            linear: LinearParams::new(w1.clone(), b1.clone()).unwrap(),
            relu: true,
        }])
        .unwrap();
        let out = rcs_bev_feature(&f, &g, &mlp).unwrap();
        for row in 0..3 {
            for col in 0..3 {
                let mut x = f.map().pixel(row, col);
                x.push(g.map().get(0, row, col));
                for o in 0..5 {
                    let mut s = b1[o];
                    for k in 0..4 {
                        s += w1[(o, k)] * x[k];
                    }
                    assert!((out.map().get(o, row, col) - s.max(0.0)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn encoder_zero_blocks_and_zero_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_grid(&mut rng, 2, spec3());
        let b = rand_grid(&mut rng, 1, spec3());
        let none = BevEncoderParams {
            proj: None,
            blocks: vec![],
        };
        let out = bev_encode(&a, &b, &none).unwrap();
        assert_eq!(out.map(), &a.map().concat_channels(b.map()).unwrap());

        let proj = LinearParams::new(
            crate::tensor::Matrix::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap(),
            vec![0.1, 0.0, -0.2, 0.3],
        )
        .unwrap();
        let zero = BevEncoderParams {
            proj: Some(proj.clone()),
            blocks: vec![
                CbrParams {
                    conv: ConvParams::zeros(4, 4),
                    bn: BatchNormParams::unit(4),
                };
                2
            ],
        };
        let out = bev_encode(&a, &b, &zero).unwrap();
        let expect = pointwise(&a.map().concat_channels(b.map()).unwrap(), &proj).unwrap();
        assert_eq!(out.map(), &expect);
    }
}
