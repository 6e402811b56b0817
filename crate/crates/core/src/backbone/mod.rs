//! Dual-mask Siamese transformer autoencoder.

mod autoencoder;
pub mod checkpoint;
mod masks;
mod vit;

pub use autoencoder::{
    decode, decoder_input, encode, EncodedView, MaskedAutoencoder, ReconstructedFeatures,
};
pub use masks::{masked_count, sample_masks, MaskPair};
pub use vit::{Attention, Block, ViTStack, MLP_RATIO};
