//! Dense tensors, the convolution kernels built on them, and the temporal
//! stages of the network: pyramid, proposals, long-term augmentation and
//! dynamic temporal sampling.

pub mod conv;
pub mod dts;
pub mod lfa;
pub mod pyramid;
pub mod tensor;

pub use conv::{
    conv_output_len, convolve, transposed_convolve, transposed_output_len, ConvParams, PaddingMode,
};
pub use dts::{dts_sample, sample_at, sample_positions};
pub use lfa::{lfa_augment, lfa_weight_map, temporal_recombine, LfaBlock, NormParams, WeightMap};
pub use pyramid::{
    build_temporal_pyramid, decode_temporal_proposals, predict_temporal, spatial_avg_pool,
    temporal_anchors, TemporalAnchor, TemporalPrediction, TemporalPyramid,
};
pub use tensor::{FeatureMap, FeatureVolume, TemporalFeature, Tensor};
