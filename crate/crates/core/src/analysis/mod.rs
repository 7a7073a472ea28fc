//! Disentanglement and efficiency instrumentation: pre-fusion feature
//! capture, first canonical correlation between the two streams, and
//! parameter/FLOP accounting.

mod cca;
mod cost;
mod features;

pub use cca::{canonical_scores, first_canonical_correlation, scatter_csv, Cca, DEFAULT_RIDGE};
pub use cost::{
    attention_core_flops, count_flops, count_params, dwconv_flops, linear_flops, CostItem, CostReport,
    FLOP_CONVENTION,
};
pub use features::{default_site, dump_features, DumpConfig, DumpMeta, FeatureDump, FEATURE_MAGIC};
