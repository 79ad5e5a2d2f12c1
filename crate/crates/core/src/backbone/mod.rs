//! Two radar point streams (PointNet-style and transformer-style) exchanging
//! features through cross-attention after every stage.

pub mod attention;
pub mod blocks;

pub use attention::{
    apply_weights, attention_weights, cross_attention, dmsa_head, gaussian_modulation, multi_head_dmsa,
    pairwise_sq_dist, AttentionParams, DmsaParams,
};
pub use blocks::{
    extract, inject, point_block, transformer_block, ExtractionParams, InjectionParams, TransformerBlockParams,
};

use crate::error::{Error, Result};
use crate::nn::{LinearParams, MlpParams};
use crate::radar::PointFeatureSet;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    /// Point-stream MLP; the block doubles its width by pooled concatenation.
    pub point: MlpParams,
    /// Linear lift of the transformer stream onto this stage's width.
    pub embed: LinearParams,
    pub tf: TransformerBlockParams,
    pub inject: InjectionParams,
    pub extract: ExtractionParams,
}

impl StageParams {
    pub fn width(&self) -> usize {
        self.embed.out_dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    stages: Vec<StageParams>,
    /// `2·C_S → C_S` projection over `[f_p, f_t]`.
    merge: LinearParams,
}

impl BackboneParams {
    pub fn new(stages: Vec<StageParams>, merge: LinearParams) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::config("backbone needs at least one stage"));
        }
        let mut c_in = stages[0].embed.in_dim();
        for (i, s) in stages.iter().enumerate() {
            let c = s.width();
            let point_in = s.point.in_dim().unwrap_or(c_in);
            let point_out = 2 * s.point.out_dim().unwrap_or(c_in);
            if s.embed.in_dim() != c_in || point_in != c_in || point_out != c {
                return Err(Error::shape(format!(
                    "stage {i}: widths do not chain (input {c_in}, embed {}→{c}, point {point_in}→{point_out})",
                    s.embed.in_dim()
                )));
            }
            c_in = c;
        }
        if merge.in_dim() != 2 * c_in || merge.out_dim() != c_in {
            return Err(Error::shape(format!(
                "merge projection is {}→{}, expected {}→{c_in}",
                merge.in_dim(),
                merge.out_dim(),
                2 * c_in
            )));
        }
        Ok(Self { stages, merge })
    }

    pub fn stages(&self) -> &[StageParams] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [StageParams] {
        &mut self.stages
    }

    pub fn merge(&self) -> &LinearParams {
        &self.merge
    }

    pub fn in_dim(&self) -> usize {
        self.stages[0].embed.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.merge.out_dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneOutput {
    pub f_p: Matrix,
    pub f_t: Matrix,
    pub fused: Matrix,
    pub stages_run: usize,
    pub inject_calls: usize,
    pub extract_calls: usize,
}

/// Run every stage: point block and transformer block, then inject, then
/// extract (which sees the already-injected point stream). The two final
/// streams are merged by a linear map over their concatenation.
pub fn dual_backbone_forward(feats: &PointFeatureSet, p: &BackboneParams) -> Result<BackboneOutput> {
    if feats.is_empty() {
        return Err(Error::EmptyInput("backbone over zero points".into()));
    }
    let x = feats.features();
    if x.cols() != p.in_dim() {
        return Err(Error::shape(format!(
            "backbone expects {} input channels, got {}",
            p.in_dim(),
            x.cols()
        )));
    }
    let coords = feats.coords();
    let mut f_p = x.clone();
    let mut f_t = x.clone();
    let mut out = BackboneOutput {
        f_p: Matrix::zeros(0, 0),
        f_t: Matrix::zeros(0, 0),
        fused: Matrix::zeros(0, 0),
        stages_run: 0,
        inject_calls: 0,
        extract_calls: 0,
    };
    for s in &p.stages {
        f_p = point_block(&f_p, &s.point)?;
        f_t = transformer_block(&s.embed.forward(&f_t)?, coords, &s.tf)?;
        f_p = inject(&f_p, &f_t, &s.inject)?;
        out.inject_calls += 1;
        f_t = extract(&f_t, &f_p, &s.extract)?;
        out.extract_calls += 1;
        out.stages_run += 1;
    }
    out.fused = p.merge.forward(&f_p.hconcat(&f_t)?)?;
    out.f_p = f_p;
    out.f_t = f_t;
    Ok(out)
}
