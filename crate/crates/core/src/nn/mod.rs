//! Numerical layers and parameter storage shared by every other module.

pub mod layers;
pub mod weights;

pub use layers::{
    batch_norm, bilinear_accumulate, bilinear_sample, cbr_block, conv3x3, dot, layer_norm, linear, max_pool_points,
    mlp, pointwise, relu, softmax, softmax_in_place, BatchNormParams, CbrParams, ConvParams, LinearParams,
    MlpLayer, MlpParams, NormParams, BATCH_NORM_EPS, LAYER_NORM_EPS,
};
pub use weights::{init_weights, load_weights, Init, ParamDecl, ParamLayout, Tensor, WeightSet};
