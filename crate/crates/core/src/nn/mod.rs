//! Parameter storage and the small layers shared by every network.

mod layers;
mod params;

pub use layers::{glorot, uniform, LayerNorm, Linear, Mlp};
pub use params::{Bound, ParamId, ParamStore};
