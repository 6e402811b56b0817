use rand::Rng;

use super::masks::positions;
use super::vit::ViTStack;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{uniform, Bound, ParamId, ParamStore};

/// Encoder output for one masked view.
#[derive(Clone, Debug)]
pub struct EncodedView<'t> {
    /// Class-token output, `1×d`.
    pub f_cls: Var<'t>,
    /// Encoder outputs of the visible tokens, in `visible_indices` order.
    pub visible_features: Var<'t>,
    /// Unmasked patch positions, ascending.
    pub visible_indices: Vec<usize>,
}

/// Decoder output: one feature row per patch, in original patch order.
#[derive(Clone, Debug)]
pub struct ReconstructedFeatures<'t> {
    pub features: Var<'t>,
}

/// Shared encoder, shared decoder and the learnable mask token. Both
/// Siamese views run through the same parameters.
#[derive(Clone, Debug)]
pub struct MaskedAutoencoder {
    pub encoder: ViTStack,
    pub decoder: ViTStack,
    pub mask_token: ParamId,
}

impl MaskedAutoencoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        dim: usize,
        encoder_depth: usize,
        decoder_depth: usize,
        heads: usize,
    ) -> Result<Self> {
        let encoder = ViTStack::new(store, rng, "encoder", dim, encoder_depth, heads, true)?;
        let decoder = ViTStack::new(store, rng, "decoder", dim, decoder_depth, heads, false)?;
        let mask_token = store.add("decoder.mask_token", uniform(rng, &[1, dim], 0.02));
        Ok(Self {
            encoder,
            decoder,
            mask_token,
        })
    }

    pub fn encode<'t>(
        &self,
        p: &Bound<'t>,
        tokens: &Var<'t>,
        centers: &[[f64; 3]],
        mask: &[bool],
    ) -> Result<EncodedView<'t>> {
        encode(p, tokens, centers, mask, &self.encoder)
    }

    pub fn decode<'t>(
        &self,
        p: &Bound<'t>,
        view: &EncodedView<'t>,
        centers: &[[f64; 3]],
        mask: &[bool],
    ) -> Result<ReconstructedFeatures<'t>> {
        decode(p, view, centers, mask, &self.decoder, self.mask_token)
    }
}

fn check_lengths(tokens: usize, centers: usize, mask: usize) -> Result<()> {
    if tokens != centers || centers != mask {
        return Err(Error::Shape {
            op: "masked view",
            left: vec![tokens, centers],
            right: vec![mask],
        });
    }
    Ok(())
}

/// Encodes the unmasked tokens (plus their positional embeddings) behind a
/// class token.
pub fn encode<'t>(
    p: &Bound<'t>,
    tokens: &Var<'t>,
    centers: &[[f64; 3]],
    mask: &[bool],
    vit: &ViTStack,
) -> Result<EncodedView<'t>> {
    check_lengths(tokens.rows(), centers.len(), mask.len())?;
    let cls = vit
        .cls_token
        .ok_or_else(|| Error::Config("encoder stack has no class token".into()))?;
    let visible = positions(mask, false);
    if visible.is_empty() {
        return Err(Error::Parameter("every token is masked".into()));
    }
    let vis_centers: Vec<[f64; 3]> = visible.iter().map(|&i| centers[i]).collect();
    let x = tokens
        .select_rows(&visible)?
        .add(&vit.embed_positions(p, &vis_centers)?)?;
    let seq = p.tape().concat_rows(&[p.var(cls), x])?;
    let out = vit.forward(p, &seq)?;
    let rest: Vec<usize> = (1..=visible.len()).collect();
    Ok(EncodedView {
        f_cls: out.select_rows(&[0])?,
        visible_features: out.select_rows(&rest)?,
        visible_indices: visible,
    })
}

/// Builds the decoder input sequence: visible features followed by one
/// mask token per hidden patch, each plus the positional embedding of its
/// center. Returns the sequence and the patch index of every row.
pub fn decoder_input<'t>(
    p: &Bound<'t>,
    view: &EncodedView<'t>,
    centers: &[[f64; 3]],
    mask: &[bool],
    decoder: &ViTStack,
    mask_token: ParamId,
) -> Result<(Var<'t>, Vec<usize>)> {
    if centers.len() != mask.len() {
        return Err(Error::Shape {
            op: "decode",
            left: vec![centers.len()],
            right: vec![mask.len()],
        });
    }
    let visible = positions(mask, false);
    if visible != view.visible_indices {
        return Err(Error::Contract("mask does not match the encoded view".into()));
    }
    let hidden = positions(mask, true);
    let pick = |idx: &[usize]| idx.iter().map(|&i| centers[i]).collect::<Vec<_>>();
    let mut parts = vec![view
        .visible_features
        .add(&decoder.embed_positions(p, &pick(&visible))?)?];
    if !hidden.is_empty() {
        let tokens = p.var(mask_token).repeat_rows(hidden.len());
        parts.push(tokens.add(&decoder.embed_positions(p, &pick(&hidden))?)?);
    }
    let seq = p.tape().concat_rows(&parts)?;
    let mut order = visible;
    order.extend(hidden);
    Ok((seq, order))
}

/// Decodes a view into features for all `N` patches, in patch order.
pub fn decode<'t>(
    p: &Bound<'t>,
    view: &EncodedView<'t>,
    centers: &[[f64; 3]],
    mask: &[bool],
    decoder: &ViTStack,
    mask_token: ParamId,
) -> Result<ReconstructedFeatures<'t>> {
    let (seq, order) = decoder_input(p, view, centers, mask, decoder, mask_token)?;
    let out = decoder.forward(p, &seq)?;
    let mut inverse = vec![0; order.len()];
    for (row, &patch) in order.iter().enumerate() {
        inverse[patch] = row;
    }
    Ok(ReconstructedFeatures {
        features: out.select_rows(&inverse)?,
    })
}
