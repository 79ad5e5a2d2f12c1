use proptest::prelude::*;
use rand::Rng;

use rcbev::bev::{gaussian_bev_map, locate_points, rcs_scatter, BevSpec, ScatterConfig};
use rcbev::camf::{deform_attn, sampling_weights, DeformAttnParams};
use rcbev::oracle;
use rcbev::testkit as tk;
use rcbev::{Matrix, PointFeatureSet};

fn grid_spec(h: usize, w: usize, res: f64) -> BevSpec {
    BevSpec::new(-(w as f64) * res / 2.0, w as f64 * res / 2.0, 0.0, h as f64 * res, res).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scatter_is_bit_equal_to_brute_force(
        seed in any::<u64>(),
        n in 0usize..=120,
        h in 1usize..=40,
        w in 1usize..=40,
        scale in 0.0f64..0.2,
        cap in 0.0f64..6.0,
    ) {
        let mut rng = tk::rng(seed);
        let spec = grid_spec(h, w, 0.5);
        let feats = tk::feature_set(&mut rng, n, 3, &spec);
        let cfg = ScatterConfig::new(scale, cap).unwrap();
        let got = rcs_scatter(&feats, &spec, &cfg).unwrap();
        let want = oracle::scatter(&feats, &spec, &cfg);
        prop_assert!(got.map().as_slice().iter().zip(want.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn gaussian_map_is_max_of_scalar_evaluations(
        seed in any::<u64>(),
        n in 1usize..=6,
        scale in 0.0f64..0.2,
        cap in 0.0f64..5.0,
    ) {
        let mut rng = tk::rng(seed);
        let spec = grid_spec(12, 14, 1.0);
        let feats = tk::feature_set(&mut rng, n, 1, &spec);
        let cfg = ScatterConfig::new(scale, cap).unwrap();
        let pts = locate_points(&feats, &spec).unwrap();
        let g = gaussian_bev_map(&pts, &spec, &cfg).unwrap();
        for row in 0..spec.height() {
            for col in 0..spec.width() {
                let want = (0..n)
                    .filter_map(|i| {
                        let (x, y) = (feats.coords()[(i, 0)], feats.coords()[(i, 1)]);
                        oracle::gaussian_weight(x, y, feats.rcs_norm()[i], col, row, &spec, &cfg)
                    })
                    .fold(0.0, f64::max);
                prop_assert!((g.map().get(0, row, col) - want).abs() <= 1e-12);
            }
        }
        for p in &pts {
            prop_assert_eq!(g.map().get(0, p.py, p.px), 1.0);
        }
    }

    #[test]
    fn deform_attn_matches_nested_loops(
        seed in any::<u64>(),
        s in 1usize..=8,
        m in 1usize..=2,
        k in 1usize..=4,
        per in 1usize..=4,
        cq in 1usize..=8,
        with_refs in any::<bool>(),
    ) {
        let mut rng = tk::rng(seed);
        let cv = m * per;
        let z = tk::feature_map(&mut rng, cq, s, s, 1.0);
        let f = tk::feature_map(&mut rng, cv, s, s, 1.0);
        let p = tk::deform(&mut rng, cq, cv, m, k);
        let refs: Vec<[f64; 2]> = (0..s * s).map(|_| [rng.gen_range(-1.0..s as f64), rng.gen_range(-1.0..s as f64)]).collect();
        let refs = with_refs.then_some(&refs[..]);
        let got = deform_attn(&z, refs, &f, &p).unwrap();
        let want = oracle::deform_attn(&z, refs, &f, &p);
        prop_assert!(got.max_abs_diff(&want) <= 1e-10);

        let a = sampling_weights(&z, &p).unwrap();
        let n = s * s;
        for hm in 0..m {
            for q in 0..n {
                let sum: f64 = (0..k).map(|kk| a.as_slice()[(hm * k + kk) * n + q]).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn single_point_identity_deform_reproduces_values(seed in any::<u64>(), c in 1usize..=8, h in 1usize..=9, w in 1usize..=9) {
        let mut rng = tk::rng(seed);
        let f = tk::feature_map(&mut rng, c, h, w, 5.0);
        let z = tk::feature_map(&mut rng, c, h, w, 5.0);
        let got = deform_attn(&z, None, &f, &DeformAttnParams::identity(c)).unwrap();
        prop_assert!(got.max_abs_diff(&f) <= 1e-12);
    }
}

#[test]
fn scatter_rejects_points_outside_the_grid() {
    let spec = grid_spec(4, 4, 1.0);
    let feats = PointFeatureSet::new(
        Matrix::from_rows(&[[1.0], [2.0]]).unwrap(),
        Matrix::from_rows(&[[0.5, 1.0], [9.0, 1.0]]).unwrap(),
        vec![0.5, 0.5],
    )
    .unwrap();
    assert!(rcs_scatter(&feats, &spec, &ScatterConfig::default()).is_err());
}
