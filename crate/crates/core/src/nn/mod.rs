//! Parameterized layers: linear projections, layer norm, depthwise
//! convolution, multi-head self-attention and the pre-norm encoder layer.

mod attention;
mod layers;
mod params;

pub use attention::{EncoderLayer, MultiHeadAttention};
pub use layers::{DepthwiseConv, LayerNorm, Linear, LAYER_NORM_EPS};
pub use params::{Ctx, Initializer, ParamId, ParamStore};
