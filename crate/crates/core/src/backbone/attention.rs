//! Dense scaled dot-product attention with an optional distance penalty.
//!
//! Every sum over keys goes through [`order_free_sum`], so permuting the
//! points permutes the outputs bit-for-bit.

use crate::error::{Error, Result};
use crate::nn::layers::dot;
use crate::nn::LinearParams;
use crate::tensor::{order_free_sum, Matrix};

/// Squared Euclidean distances between all pairs of BEV coordinates.
pub fn pairwise_sq_dist(coords: &Matrix) -> Matrix {
    let n = coords.rows();
    let mut d2 = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = coords.row(i);
            let b = coords.row(j);
            d2[(i, j)] = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    d2
}

/// `exp(-D² / σ²)` elementwise.
pub fn gaussian_modulation(d2: &Matrix, sigma: f64) -> Result<Matrix> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("sigma must be > 0, got {sigma}")));
    }
    let s2 = sigma * sigma;
    Ok(d2.map(|d| (-d / s2).exp()))
}

/// Row-stochastic attention matrix `softmax(QKᵀ/√d − β·D²)`.
///
/// `d2 = None` means no distance penalty (plain attention).
pub fn attention_weights(q: &Matrix, k: &Matrix, d2: Option<&Matrix>, beta: f64) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::shape(format!(
            "attention: query dim {} != key dim {}",
            q.cols(),
            k.cols()
        )));
    }
    if let Some(d2) = d2 {
        if d2.shape() != (q.rows(), k.rows()) {
            return Err(Error::shape(format!(
                "attention: distance matrix {:?} vs {}x{} logits",
                d2.shape(),
                q.rows(),
                k.rows()
            )));
        }
    }
    if beta < 0.0 {
        return Err(Error::config(format!("beta must be >= 0, got {beta}")));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let (nq, nk) = (q.rows(), k.rows());
    let mut w = Matrix::zeros(nq, nk);
    let mut scratch = vec![0.0; nk];
    for i in 0..nq {
        let qi = q.row(i);
        let row = w.row_mut(i);
        for j in 0..nk {
            let mut logit = dot(qi, k.row(j)) * scale;
            if let Some(d2) = d2 {
                if beta != 0.0 {
                    logit -= beta * d2[(i, j)];
                }
            }
            row[j] = logit;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
        }
        scratch.copy_from_slice(row);
        let denom = order_free_sum(&mut scratch);
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    Ok(w)
}

/// `weights · V` with order-independent summation over keys.
pub fn apply_weights(weights: &Matrix, v: &Matrix) -> Result<Matrix> {
    if weights.cols() != v.rows() {
        return Err(Error::shape(format!(
            "attention: {} keys but {} value rows",
            weights.cols(),
            v.rows()
        )));
    }
    let mut out = Matrix::zeros(weights.rows(), v.cols());
    let mut terms = vec![0.0; v.rows()];
    for i in 0..weights.rows() {
        let wi = weights.row(i);
        for c in 0..v.cols() {
            for (j, t) in terms.iter_mut().enumerate() {
                *t = wi[j] * v[(j, c)];
            }
            out[(i, c)] = order_free_sum(&mut terms);
        }
    }
    Ok(out)
}

/// One distance-modulated head: `softmax(QKᵀ/√d − β·D²)·V`.
pub fn dmsa_head(q: &Matrix, k: &Matrix, v: &Matrix, d2: &Matrix, beta: f64) -> Result<Matrix> {
    if k.rows() != v.rows() {
        return Err(Error::shape(format!(
            "dmsa_head: {} keys vs {} values",
            k.rows(),
            v.rows()
        )));
    }
    apply_weights(&attention_weights(q, k, Some(d2), beta)?, v)
}

/// Query/key/value/output projections shared by self- and cross-attention.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub o: LinearParams,
    pub heads: usize,
}

impl AttentionParams {
    pub fn dim(&self) -> usize {
        self.q.out_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    fn validate(&self) -> Result<()> {
        let c = self.dim();
        if self.heads == 0 || c % self.heads != 0 {
            return Err(Error::config(format!(
                "attention width {c} is not divisible by {} heads",
                self.heads
            )));
        }
        for (name, p) in [("k", &self.k), ("v", &self.v)] {
            if p.out_dim() != c {
                return Err(Error::shape(format!(
                    "attention {name} projection emits {} but q emits {c}",
                    p.out_dim()
                )));
            }
        }
        if self.o.in_dim() != c {
            return Err(Error::shape(format!(
                "attention output projection expects {} inputs, heads give {c}",
                self.o.in_dim()
            )));
        }
        Ok(())
    }

    /// Zero-initialized projections of width `dim` (output is all zeros).
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            q: LinearParams::zeros(dim, dim),
            k: LinearParams::zeros(dim, dim),
            v: LinearParams::zeros(dim, dim),
            o: LinearParams::zeros(dim, dim),
            heads,
        }
    }
}

/// Attention heads from `query_src` onto `kv_src`, concatenated and
/// output-projected. `betas`, when given, adds a per-head `−β_h·D²` term.
fn multi_head(
    query_src: &Matrix,
    kv_src: &Matrix,
    p: &AttentionParams,
    penalty: Option<(&Matrix, &[f64])>,
) -> Result<Matrix> {
    p.validate()?;
    let q = p.q.forward(query_src)?;
    let k = p.k.forward(kv_src)?;
    let v = p.v.forward(kv_src)?;
    let d = p.head_dim();
    let mut concat = Matrix::zeros(query_src.rows(), p.dim());
    for h in 0..p.heads {
        let (qh, kh, vh) = (q.columns(h * d, d), k.columns(h * d, d), v.columns(h * d, d));
        let w = match penalty {
            Some((d2, betas)) => attention_weights(&qh, &kh, Some(d2), betas[h])?,
            None => attention_weights(&qh, &kh, None, 0.0)?,
        };
        let out = apply_weights(&w, &vh)?;
        for i in 0..out.rows() {
            concat.row_mut(i)[h * d..(h + 1) * d].copy_from_slice(out.row(i));
        }
    }
    p.o.forward(&concat)
}

/// Multi-head distance-modulated self-attention parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DmsaParams {
    pub attn: AttentionParams,
    /// One nonnegative locality coefficient per head.
    pub beta: Vec<f64>,
}

impl DmsaParams {
    /// Clamps negative `beta` entries to zero.
    pub fn new(attn: AttentionParams, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != attn.heads {
            return Err(Error::shape(format!(
                "{} beta values for {} heads",
                beta.len(),
                attn.heads
            )));
        }
        Ok(Self {
            attn,
            beta: beta.into_iter().map(|b| b.max(0.0)).collect(),
        })
    }
}

pub fn multi_head_dmsa(f: &Matrix, coords: &Matrix, p: &DmsaParams) -> Result<Matrix> {
    if coords.rows() != f.rows() {
        return Err(Error::shape(format!(
            "dmsa: {} feature rows vs {} coordinates",
            f.rows(),
            coords.rows()
        )));
    }
    let d2 = pairwise_sq_dist(coords);
    multi_head(f, f, &p.attn, Some((&d2, &p.beta)))
}

/// Plain multi-head cross-attention, queries from `query_src`.
pub fn cross_attention(query_src: &Matrix, kv_src: &Matrix, p: &AttentionParams) -> Result<Matrix> {
    multi_head(query_src, kv_src, p, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn pairwise_distances() {
        let d2 = pairwise_sq_dist(&m(&[&[0.0, 0.0], &[3.0, 4.0]]));
        assert_eq!(d2.as_slice(), &[0.0, 25.0, 25.0, 0.0]);
        let same = pairwise_sq_dist(&m(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]));
        assert!(same.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_modulation_cases() {
        let d2 = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let g = gaussian_modulation(&d2, 1.0).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert!((g[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
        let g = gaussian_modulation(&d2, 1e9).unwrap();
        assert!(g.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(matches!(gaussian_modulation(&d2, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn dmsa_head_worked_examples() {
        let q = m(&[&[1.0], &[1.0]]);
        let v = m(&[&[2.0], &[4.0]]);
        let d2 = m(&[&[0.0, 4.0], &[4.0, 0.0]]);
        let out = dmsa_head(&q, &q, &v, &d2, 0.0).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 3.0]);

        let out = dmsa_head(&q, &q, &v, &d2, 0.5).unwrap();
        let (e, ei) = (1f64.exp(), (-1f64).exp());
        let expect = (2.0 * e + 4.0 * ei) / (e + ei);
        assert!((out[(0, 0)] - expect).abs() < 1e-12);
        assert!((out[(0, 0)] - 2.2384).abs() < 1e-4);

        let out = dmsa_head(&q, &q, &v, &d2, 1e9).unwrap();
        assert_eq!(out, v);

        assert!(matches!(
            dmsa_head(&q, &q, &m(&[&[1.0]]), &d2, 0.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn beta_zero_equals_plain_attention() {
        let q = m(&[&[0.3, -1.0], &[0.7, 0.2], &[-0.5, 0.9]]);
        let k = m(&[&[1.0, 0.1], &[0.0, -0.4], &[0.6, 0.6]]);
        let d2 = pairwise_sq_dist(&m(&[&[0.0, 0.0], &[10.0, 0.0], &[0.0, 3.0]]));
        let a = attention_weights(&q, &k, Some(&d2), 0.0).unwrap();
        let b = attention_weights(&q, &k, None, 0.0).unwrap();
        assert_eq!(a, b);
        for row in a.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_beta_clamped_at_construction() {
        let p = DmsaParams::new(AttentionParams::zeros(4, 2), vec![-1.0, 0.5]).unwrap();
        assert_eq!(p.beta, vec![0.0, 0.5]);
        assert!(DmsaParams::new(AttentionParams::zeros(4, 2), vec![1.0]).is_err());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let p = DmsaParams::new(AttentionParams::zeros(6, 4), vec![1.0; 4]).unwrap();
        let f = Matrix::zeros(3, 6);
        assert!(matches!(
            multi_head_dmsa(&f, &Matrix::zeros(3, 2), &p),
            Err(Error::Config(_))
        ));
    }
}
