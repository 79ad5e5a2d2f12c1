//! Model dimensions, the parameter naming scheme, and builders that turn a
//! [`WeightSet`] into typed layer parameters.

use serde::{Deserialize, Serialize};

use crate::backbone::{
    AttentionParams, BackboneParams, DmsaParams, ExtractionParams, InjectionParams, StageParams,
    TransformerBlockParams,
};
use crate::bev::BevEncoderParams;
use crate::camf::{CrossAlignParams, DeformAttnParams, FuseParams};
use crate::error::{Error, Result};
use crate::nn::{CbrParams, Init, MlpParams, ParamDecl, ParamLayout, WeightSet};
use crate::radar::FEATURE_CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Point-MLP width per stage; the stage width is twice this.
    pub point_widths: Vec<usize>,
    pub dmsa_heads: usize,
    pub cross_heads: usize,
    pub ffn_ratio: usize,
    /// Hidden/output widths of the per-pixel RCS MLP.
    pub rcs_widths: Vec<usize>,
    pub encoder_blocks: usize,
    pub radar_channels: usize,
    pub camera_channels: usize,
    pub deform_heads: usize,
    pub deform_points: usize,
    pub fused_channels: usize,
    pub fuse_tail_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: FEATURE_CHANNELS,
            point_widths: vec![16, 32, 32],
            dmsa_heads: 4,
            cross_heads: 1,
            ffn_ratio: 2,
            rcs_widths: vec![64],
            encoder_blocks: 2,
            radar_channels: 64,
            camera_channels: 64,
            deform_heads: 4,
            deform_points: 4,
            fused_channels: 128,
            fuse_tail_blocks: 3,
        }
    }
}

/// A model configuration bound to a grid size (position embeddings are
/// per pixel).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    pub model: ModelConfig,
    pub height: usize,
    pub width: usize,
}

fn uniform(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform { fan_in, fan_out }
}

fn linear_decls(out: &mut Vec<ParamDecl>, prefix: &str, o: usize, i: usize) {
    out.push(ParamDecl::new(format!("{prefix}.weight"), vec![o, i], uniform(i, o)));
    out.push(ParamDecl::new(format!("{prefix}.bias"), vec![o], Init::Zeros));
}

fn norm_decls(out: &mut Vec<ParamDecl>, prefix: &str, c: usize) {
    out.push(ParamDecl::new(format!("{prefix}.scale"), vec![c], Init::Ones));
    out.push(ParamDecl::new(format!("{prefix}.shift"), vec![c], Init::Zeros));
}

fn attn_decls(out: &mut Vec<ParamDecl>, prefix: &str, c: usize) {
    for part in ["q", "k", "v", "o"] {
        linear_decls(out, &format!("{prefix}.{part}"), c, c);
    }
}

fn cbr_decls(out: &mut Vec<ParamDecl>, prefix: &str, o: usize, i: usize) {
    out.push(ParamDecl::new(
        format!("{prefix}.conv.weight"),
        vec![o, i, 3, 3],
        uniform(9 * i, 9 * o),
    ));
    out.push(ParamDecl::new(format!("{prefix}.conv.bias"), vec![o], Init::Zeros));
    norm_decls(out, &format!("{prefix}.bn"), o);
    out.push(ParamDecl::new(format!("{prefix}.bn.mean"), vec![o], Init::Zeros));
    out.push(ParamDecl::new(format!("{prefix}.bn.var"), vec![o], Init::Ones));
}

fn deform_decls(out: &mut Vec<ParamDecl>, prefix: &str, c_q: usize, c_v: usize, m: usize, k: usize) {
    if c_q != c_v {
        linear_decls(out, &format!("{prefix}.query_proj"), c_v, c_q);
    }
    linear_decls(out, &format!("{prefix}.offset"), 2 * m * k, c_v);
    linear_decls(out, &format!("{prefix}.attn"), m * k, c_v);
    for part in ["value", "output"] {
        out.push(ParamDecl::new(
            format!("{prefix}.{part}.weight"),
            vec![c_v, c_v],
            uniform(c_v, c_v),
        ));
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.point_widths.len()
    }

    /// Width of both streams after stage `i`.
    pub fn stage_width(&self, i: usize) -> usize {
        2 * self.point_widths[i]
    }

    pub fn backbone_width(&self) -> usize {
        self.stage_width(self.stages() - 1)
    }

    pub fn rcs_out(&self) -> usize {
        *self.rcs_widths.last().unwrap_or(&(self.backbone_width() + 1))
    }

    fn encoder_in(&self) -> usize {
        self.rcs_out() + self.backbone_width()
    }

    /// Channels of the radar BEV feature handed to fusion.
    pub fn radar_width(&self) -> usize {
        if self.encoder_blocks == 0 {
            self.encoder_in()
        } else {
            self.radar_channels
        }
    }

    fn fuse_in(&self) -> usize {
        self.camera_channels + self.radar_width()
    }

    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("in_channels", self.in_channels),
            ("dmsa_heads", self.dmsa_heads),
            ("cross_heads", self.cross_heads),
            ("ffn_ratio", self.ffn_ratio),
            ("radar_channels", self.radar_channels),
            ("camera_channels", self.camera_channels),
            ("deform_heads", self.deform_heads),
            ("deform_points", self.deform_points),
            ("fused_channels", self.fused_channels),
        ];
        for (name, v) in nonzero {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be >= 1")));
            }
        }
        if self.point_widths.is_empty() {
            return Err(Error::config("model.point_widths needs at least one stage"));
        }
        if self.rcs_widths.is_empty() {
            return Err(Error::config("model.rcs_widths needs at least one layer"));
        }
        if self.point_widths.contains(&0) || self.rcs_widths.contains(&0) {
            return Err(Error::config("model widths must be >= 1"));
        }
        for i in 0..self.stages() {
            let c = self.stage_width(i);
            for (name, h) in [("dmsa_heads", self.dmsa_heads), ("cross_heads", self.cross_heads)] {
                if c % h != 0 {
                    return Err(Error::config(format!(
                        "stage {i} width {c} not divisible by model.{name} = {h}"
                    )));
                }
            }
        }
        for (name, c) in [("camera", self.camera_channels), ("radar", self.radar_width())] {
            if c % self.deform_heads != 0 {
                return Err(Error::config(format!(
                    "{name} width {c} not divisible by model.deform_heads = {}",
                    self.deform_heads
                )));
            }
        }
        Ok(())
    }

    /// Typed backbone parameters from `w`.
    pub fn backbone(&self, w: &WeightSet) -> Result<BackboneParams> {
        let mut stages = Vec::with_capacity(self.stages());
        let mut c_in = self.in_channels;
        for i in 0..self.stages() {
            let c = self.stage_width(i);
            let s = format!("stage{i}");
            let hidden = self.ffn_ratio * c;
            let attn = |prefix: &str, heads| -> Result<AttentionParams> {
                Ok(AttentionParams {
                    q: w.linear(&format!("{prefix}.q"), c, c)?,
                    k: w.linear(&format!("{prefix}.k"), c, c)?,
                    v: w.linear(&format!("{prefix}.v"), c, c)?,
                    o: w.linear(&format!("{prefix}.o"), c, c)?,
                    heads,
                })
            };
            let ffn = |prefix: &str| w.mlp(prefix, &[c, hidden, c], &[true, false]);
            stages.push(StageParams {
                point: w.mlp(&format!("{s}.point.mlp"), &[c_in, self.point_widths[i]], &[true])?,
                embed: w.linear(&format!("{s}.tf.embed"), c, c_in)?,
                tf: TransformerBlockParams {
                    ln_attn: w.layer_norm(&format!("{s}.tf.ln1"), c)?,
                    attn: DmsaParams::new(
                        attn(&format!("{s}.tf.attn"), self.dmsa_heads)?,
                        w.vector(&format!("{s}.tf.attn.beta"), self.dmsa_heads)?,
                    )?,
                    ln_ffn: w.layer_norm(&format!("{s}.tf.ln2"), c)?,
                    ffn: ffn(&format!("{s}.tf.ffn"))?,
                },
                inject: InjectionParams {
                    ln_query: w.layer_norm(&format!("{s}.inject.ln_q"), c)?,
                    ln_kv: w.layer_norm(&format!("{s}.inject.ln_kv"), c)?,
                    attn: attn(&format!("{s}.inject.attn"), self.cross_heads)?,
                    gamma: w.vector(&format!("{s}.inject.gamma"), c)?,
                },
                extract: ExtractionParams {
                    ln_query: w.layer_norm(&format!("{s}.extract.ln_q"), c)?,
                    ln_kv: w.layer_norm(&format!("{s}.extract.ln_kv"), c)?,
                    attn: attn(&format!("{s}.extract.attn"), self.cross_heads)?,
                    ln_ffn: w.layer_norm(&format!("{s}.extract.ln_ffn"), c)?,
                    ffn: ffn(&format!("{s}.extract.ffn"))?,
                },
            });
            c_in = c;
        }
        BackboneParams::new(stages, w.linear("merge", c_in, 2 * c_in)?)
    }

    pub fn rcs_mlp(&self, w: &WeightSet) -> Result<MlpParams> {
        let mut dims = vec![self.backbone_width() + 1];
        dims.extend(&self.rcs_widths);
        let relu = vec![true; dims.len() - 1];
        w.mlp("rcs.mlp", &dims, &relu)
    }

    pub fn encoder(&self, w: &WeightSet) -> Result<BevEncoderParams> {
        if self.encoder_blocks == 0 {
            return Ok(BevEncoderParams {
                proj: None,
                blocks: vec![],
            });
        }
        let c = self.radar_channels;
        let proj = if self.encoder_in() != c {
            Some(w.linear("encoder.proj", c, self.encoder_in())?)
        } else {
            None
        };
        let blocks = (0..self.encoder_blocks)
            .map(|b| cbr_params(w, &format!("encoder.block{b}"), c, c))
            .collect::<Result<_>>()?;
        Ok(BevEncoderParams { proj, blocks })
    }

    pub fn cross_align(&self, w: &WeightSet, height: usize, width: usize) -> Result<CrossAlignParams> {
        let (cc, cr) = (self.camera_channels, self.radar_width());
        Ok(CrossAlignParams {
            pos_cam: w.feature_map("camf.pos_cam", cc, height, width)?,
            pos_radar: w.feature_map("camf.pos_radar", cr, height, width)?,
            cam_from_radar: self.deform(w, "camf.cam_from_radar", cr, cc)?,
            radar_from_cam: self.deform(w, "camf.radar_from_cam", cc, cr)?,
        })
    }

    fn deform(&self, w: &WeightSet, prefix: &str, c_q: usize, c_v: usize) -> Result<DeformAttnParams> {
        let (m, k) = (self.deform_heads, self.deform_points);
        let p = DeformAttnParams {
            heads: m,
            points: k,
            query_proj: if c_q != c_v {
                Some(w.linear(&format!("{prefix}.query_proj"), c_v, c_q)?)
            } else {
                None
            },
            offset: w.linear(&format!("{prefix}.offset"), 2 * m * k, c_v)?,
            attn: w.linear(&format!("{prefix}.attn"), m * k, c_v)?,
            value: w.matrix(&format!("{prefix}.value.weight"), c_v, c_v)?,
            output: w.matrix(&format!("{prefix}.output.weight"), c_v, c_v)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn fuse(&self, w: &WeightSet) -> Result<FuseParams> {
        let (c_in, c_f) = (self.fuse_in(), self.fused_channels);
        Ok(FuseParams {
            proj: if c_in != c_f {
                Some(w.linear("camf.fuse.proj", c_f, c_in)?)
            } else {
                None
            },
            head: cbr_params(w, "camf.fuse.cbr0", c_f, c_in)?,
            tail: (1..=self.fuse_tail_blocks)
                .map(|b| cbr_params(w, &format!("camf.fuse.cbr{b}"), c_f, c_f))
                .collect::<Result<_>>()?,
        })
    }
}

fn cbr_params(w: &WeightSet, prefix: &str, o: usize, i: usize) -> Result<CbrParams> {
    Ok(CbrParams {
        conv: w.conv3x3(&format!("{prefix}.conv"), o, i)?,
        bn: w.batch_norm(&format!("{prefix}.bn"), o)?,
    })
}

impl ParamLayout for ModelLayout {
    fn param_decls(&self) -> Result<Vec<ParamDecl>> {
        let m = &self.model;
        m.validate()?;
        let mut out = Vec::new();
        let mut c_in = m.in_channels;
        for i in 0..m.stages() {
            let c = m.stage_width(i);
            let s = format!("stage{i}");
            let hidden = m.ffn_ratio * c;
            linear_decls(&mut out, &format!("{s}.point.mlp.0"), m.point_widths[i], c_in);
            linear_decls(&mut out, &format!("{s}.tf.embed"), c, c_in);
            norm_decls(&mut out, &format!("{s}.tf.ln1"), c);
            attn_decls(&mut out, &format!("{s}.tf.attn"), c);
            out.push(ParamDecl::new(format!("{s}.tf.attn.beta"), vec![m.dmsa_heads], Init::Ones));
            norm_decls(&mut out, &format!("{s}.tf.ln2"), c);
            linear_decls(&mut out, &format!("{s}.tf.ffn.0"), hidden, c);
            linear_decls(&mut out, &format!("{s}.tf.ffn.1"), c, hidden);

            norm_decls(&mut out, &format!("{s}.inject.ln_q"), c);
            norm_decls(&mut out, &format!("{s}.inject.ln_kv"), c);
            attn_decls(&mut out, &format!("{s}.inject.attn"), c);
            // seeded nonzero so injection takes part in untrained runs
            out.push(ParamDecl::new(format!("{s}.inject.gamma"), vec![c], uniform(c, c)));

            norm_decls(&mut out, &format!("{s}.extract.ln_q"), c);
            norm_decls(&mut out, &format!("{s}.extract.ln_kv"), c);
            attn_decls(&mut out, &format!("{s}.extract.attn"), c);
            norm_decls(&mut out, &format!("{s}.extract.ln_ffn"), c);
            linear_decls(&mut out, &format!("{s}.extract.ffn.0"), hidden, c);
            linear_decls(&mut out, &format!("{s}.extract.ffn.1"), c, hidden);
            c_in = c;
        }
        linear_decls(&mut out, "merge", c_in, 2 * c_in);

        let mut prev = m.backbone_width() + 1;
        for (k, &wd) in m.rcs_widths.iter().enumerate() {
            linear_decls(&mut out, &format!("rcs.mlp.{k}"), wd, prev);
            prev = wd;
        }
        if m.encoder_blocks > 0 {
            let c = m.radar_channels;
            if m.encoder_in() != c {
                linear_decls(&mut out, "encoder.proj", c, m.encoder_in());
            }
            for b in 0..m.encoder_blocks {
                cbr_decls(&mut out, &format!("encoder.block{b}"), c, c);
            }
        }

        let (cc, cr, cf) = (m.camera_channels, m.radar_width(), m.fused_channels);
        let (h, w) = (self.height, self.width);
        out.push(ParamDecl::new("camf.pos_cam", vec![cc, h, w], uniform(cc, cc)));
        out.push(ParamDecl::new("camf.pos_radar", vec![cr, h, w], uniform(cr, cr)));
        deform_decls(&mut out, "camf.cam_from_radar", cr, cc, m.deform_heads, m.deform_points);
        deform_decls(&mut out, "camf.radar_from_cam", cc, cr, m.deform_heads, m.deform_points);
        if m.fuse_in() != cf {
            linear_decls(&mut out, "camf.fuse.proj", cf, m.fuse_in());
        }
        cbr_decls(&mut out, "camf.fuse.cbr0", cf, m.fuse_in());
        for b in 1..=m.fuse_tail_blocks {
            cbr_decls(&mut out, &format!("camf.fuse.cbr{b}"), cf, cf);
        }
        Ok(out)
    }
}

/// All typed parameters of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: BackboneParams,
    pub rcs_mlp: MlpParams,
    pub encoder: BevEncoderParams,
    pub align: CrossAlignParams,
    pub fuse: FuseParams,
}

impl Model {
    pub fn from_weights(config: &ModelConfig, w: &WeightSet, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            backbone: config.backbone(w)?,
            rcs_mlp: config.rcs_mlp(w)?,
            encoder: config.encoder(w)?,
            align: config.cross_align(w, height, width)?,
            fuse: config.fuse(w)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;

    fn tiny() -> ModelLayout {
        ModelLayout {
            model: ModelConfig {
                point_widths: vec![4, 4],
                dmsa_heads: 2,
                rcs_widths: vec![8],
                radar_channels: 8,
                camera_channels: 4,
                deform_heads: 2,
                deform_points: 2,
                fused_channels: 8,
                ..ModelConfig::default()
            },
            height: 6,
            width: 5,
        }
    }

    #[test]
    fn every_declared_parameter_is_consumed() {
        let layout = tiny();
        let w = init_weights(&layout, 3).unwrap();
        let model = Model::from_weights(&layout.model, &w, 6, 5).unwrap();
        assert_eq!(model.backbone.stages().len(), 2);
        assert!(model.align.cam_from_radar.query_proj.is_some());
        assert!(model.fuse.proj.is_some());
        assert_eq!(model.fuse.tail.len(), 3);
        // a removed tensor is reported by name
        let mut names: Vec<String> = w.names().map(String::from).collect();
        names.sort();
        let mut partial = WeightSet::new();
        for n in names.iter().filter(|n| n.as_str() != "stage1.inject.gamma") {
            partial.insert(n.clone(), w.get(n).unwrap().clone()).unwrap();
        }
        match Model::from_weights(&layout.model, &partial, 6, 5) {
            Err(Error::MissingWeight(name)) => assert_eq!(name, "stage1.inject.gamma"),
            other => panic!("expected missing weight, got {other:?}"),
        }
    }

    #[test]
    fn default_dims() {
        let m = ModelConfig::default();
        m.validate().unwrap();
        assert_eq!(m.stages(), 3);
        assert_eq!(m.backbone_width(), 64);
        assert_eq!(m.radar_width(), 64);
        assert_eq!(m.fuse_in(), 128);
    }

    #[test]
    fn bad_heads_rejected() {
        let m = ModelConfig {
            dmsa_heads: 3,
            ..ModelConfig::default()
        };
        assert!(matches!(m.validate(), Err(Error::Config(_))));
        let m = ModelConfig {
            point_widths: vec![],
            ..ModelConfig::default()
        };
        assert!(m.validate().is_err());
    }
}
