use crate::backbone::attention::{cross_attention, multi_head_dmsa, AttentionParams, DmsaParams};
use crate::error::{Error, Result};
use crate::nn::{layer_norm, max_pool_points, mlp, MlpParams, NormParams};
use crate::tensor::Matrix;

/// `[MLP(f), MaxPool(MLP(f))]` with the pooled vector broadcast to every row.
pub fn point_block(f: &Matrix, p: &MlpParams) -> Result<Matrix> {
    if f.rows() == 0 {
        return Err(Error::EmptyInput("point_block over zero points".into()));
    }
    let g = mlp(f, p)?;
    let pooled = max_pool_points(&g)?;
    let width = g.cols();
    let mut out = Matrix::zeros(g.rows(), 2 * width);
    for i in 0..g.rows() {
        let row = out.row_mut(i);
        row[..width].copy_from_slice(g.row(i));
        row[width..].copy_from_slice(&pooled);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlockParams {
    pub ln_attn: NormParams,
    pub attn: DmsaParams,
    pub ln_ffn: NormParams,
    pub ffn: MlpParams,
}

/// Pre-norm residual block: `x = f + DMSA(LN(f))`, `x + FFN(LN(x))`.
pub fn transformer_block(f: &Matrix, coords: &Matrix, p: &TransformerBlockParams) -> Result<Matrix> {
    let attn = multi_head_dmsa(&layer_norm(f, &p.ln_attn)?, coords, &p.attn)?;
    let x = add(f, &attn)?;
    let ffn = mlp(&layer_norm(&x, &p.ln_ffn)?, &p.ffn)?;
    add(&x, &ffn)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InjectionParams {
    pub ln_query: NormParams,
    pub ln_kv: NormParams,
    pub attn: AttentionParams,
    /// Per-channel scale on the injected term.
    pub gamma: Vec<f64>,
}

/// `f_p + γ ⊙ CrossAttention(LN(f_p), LN(f_t))`.
///
/// Channels with `γ = 0` are copied untouched, so a zero `γ` returns `f_p`
/// bit-for-bit.
pub fn inject(f_p: &Matrix, f_t: &Matrix, p: &InjectionParams) -> Result<Matrix> {
    check_pair(f_p, f_t, "inject")?;
    if p.gamma.len() != f_p.cols() {
        return Err(Error::shape(format!(
            "inject: gamma has {} entries for {} channels",
            p.gamma.len(),
            f_p.cols()
        )));
    }
    let mut out = f_p.clone();
    if p.gamma.iter().all(|&g| g == 0.0) {
        return Ok(out);
    }
    let ca = cross_attention(
        &layer_norm(f_p, &p.ln_query)?,
        &layer_norm(f_t, &p.ln_kv)?,
        &p.attn,
    )?;
    for i in 0..out.rows() {
        for (c, &g) in p.gamma.iter().enumerate() {
            if g != 0.0 {
                out[(i, c)] += g * ca[(i, c)];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionParams {
    pub ln_query: NormParams,
    pub ln_kv: NormParams,
    pub attn: AttentionParams,
    pub ln_ffn: NormParams,
    pub ffn: MlpParams,
}

/// `y = f_t + CrossAttention(LN(f_t), LN(f_p))`, then `y + FFN(LN(y))`.
pub fn extract(f_t: &Matrix, f_p: &Matrix, p: &ExtractionParams) -> Result<Matrix> {
    check_pair(f_t, f_p, "extract")?;
    let ca = cross_attention(
        &layer_norm(f_t, &p.ln_query)?,
        &layer_norm(f_p, &p.ln_kv)?,
        &p.attn,
    )?;
    let y = add(f_t, &ca)?;
    let ffn = mlp(&layer_norm(&y, &p.ln_ffn)?, &p.ffn)?;
    add(&y, &ffn)
}

fn check_pair(a: &Matrix, b: &Matrix, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: stream shapes differ, {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub(crate) fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "residual add {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x + y)
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LinearParams, MlpLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_mlp(c: usize) -> MlpParams {
        MlpParams::new(vec![MlpLayer {
            linear: LinearParams::identity(c),
            relu: false,
        }])
        .unwrap()
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn zero_tf(c: usize, heads: usize) -> TransformerBlockParams {
        TransformerBlockParams {
            ln_attn: NormParams::unit(c),
            attn: DmsaParams::new(AttentionParams::zeros(c, heads), vec![1.0; heads]).unwrap(),
            ln_ffn: NormParams::unit(c),
            ffn: MlpParams::new(vec![
                MlpLayer {
                    linear: LinearParams::zeros(2 * c, c),
                    relu: true,
                },
                MlpLayer {
                    linear: LinearParams::zeros(c, 2 * c),
                    relu: false,
                },
            ])
            .unwrap(),
        }
    }

    #[test]
    fn point_block_examples() {
        let f = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let out = point_block(&f, &identity_mlp(1)).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 3.0, 3.0, 3.0]);

        let f = Matrix::from_rows(&[[0.5, -2.0]]).unwrap();
        let out = point_block(&f, &identity_mlp(2)).unwrap();
        assert_eq!(out.as_slice(), &[0.5, -2.0, 0.5, -2.0]);

        assert!(matches!(
            point_block(&Matrix::zeros(0, 2), &identity_mlp(2)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn zero_weight_transformer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = rand_matrix(&mut rng, 5, 8);
        let coords = rand_matrix(&mut rng, 5, 2);
        assert_eq!(transformer_block(&f, &coords, &zero_tf(8, 2)).unwrap(), f);
        let one = rand_matrix(&mut rng, 1, 8);
        assert!(transformer_block(&one, &Matrix::zeros(1, 2), &zero_tf(8, 4)).is_ok());
    }

    #[test]
    fn inject_gamma_zero_is_bit_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f_p = rand_matrix(&mut rng, 4, 4);
        f_p[(0, 0)] = -0.0;
        let f_t = rand_matrix(&mut rng, 4, 4);
        let mut attn = AttentionParams::zeros(4, 1);
        attn.o = LinearParams::identity(4);
        attn.v = LinearParams::identity(4);
        let p = InjectionParams {
            ln_query: NormParams::unit(4),
            ln_kv: NormParams::unit(4),
            attn,
            gamma: vec![0.0; 4],
        };
        let out = inject(&f_p, &f_t, &p).unwrap();
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out), bits(&f_p));
        assert!(inject(&f_p, &Matrix::zeros(3, 4), &p).is_err());
    }

    #[test]
    fn inject_constant_keys_adds_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f_p = rand_matrix(&mut rng, 3, 2);
        let f_t = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        let mut attn = AttentionParams::zeros(2, 1);
        attn.q = LinearParams::new(rand_matrix(&mut rng, 2, 2), vec![0.0; 2]).unwrap();
        attn.k = LinearParams::new(rand_matrix(&mut rng, 2, 2), vec![0.0; 2]).unwrap();
        attn.v = LinearParams::identity(2);
        attn.o = LinearParams::identity(2);
        let p = InjectionParams {
            ln_query: NormParams::unit(2),
            ln_kv: NormParams::unit(2),
            attn,
            gamma: vec![0.5, 2.0],
        };
        let out = inject(&f_p, &f_t, &p).unwrap();
        // LN of [1, 2] is [-1, 1] up to epsilon
        let ln = layer_norm(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap(), &NormParams::unit(2)).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                let expect = f_p[(i, c)] + p.gamma[c] * ln[(0, c)];
                assert!((out[(i, c)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extract_zero_weights_and_single_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f_t = rand_matrix(&mut rng, 4, 4);
        let f_p = rand_matrix(&mut rng, 4, 4);
        let zero = ExtractionParams {
            ln_query: NormParams::unit(4),
            ln_kv: NormParams::unit(4),
            attn: AttentionParams::zeros(4, 1),
            ln_ffn: NormParams::unit(4),
            ffn: zero_tf(4, 1).ffn,
        };
        assert_eq!(extract(&f_t, &f_p, &zero).unwrap(), f_t);

        // one key: attention returns its (projected) value exactly
        let t1 = rand_matrix(&mut rng, 1, 4);
        let p1 = rand_matrix(&mut rng, 1, 4);
        let mut attn = AttentionParams::zeros(4, 1);
        attn.q = LinearParams::new(rand_matrix(&mut rng, 4, 4), vec![0.0; 4]).unwrap();
        attn.k = LinearParams::new(rand_matrix(&mut rng, 4, 4), vec![0.0; 4]).unwrap();
        attn.v = LinearParams::identity(4);
        attn.o = LinearParams::identity(4);
        let p = ExtractionParams { attn, ..zero };
        let out = extract(&t1, &p1, &p).unwrap();
        let ln_p = layer_norm(&p1, &NormParams::unit(4)).unwrap();
        for c in 0..4 {
            assert!((out[(0, c)] - (t1[(0, c)] + ln_p[(0, c)])).abs() < 1e-12);
        }
    }
}
