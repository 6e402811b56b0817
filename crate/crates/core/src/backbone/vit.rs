use std::rc::Rc;

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{uniform, Bound, LayerNorm, Linear, Mlp, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const MLP_RATIO: usize = 4;

/// Multi-head scaled dot-product self-attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
        trace: Option<&mut Vec<Rc<Tensor>>>,
    ) -> Result<Var<'t>> {
        let d = self.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.qkv.forward(p, x)?;
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::new();
        for h in 0..self.heads {
            let q = qkv.slice_cols(h * dh, (h + 1) * dh)?;
            let k = qkv.slice_cols(d + h * dh, d + (h + 1) * dh)?;
            let v = qkv.slice_cols(2 * d + h * dh, 2 * d + (h + 1) * dh)?;
            let attn = q.matmul(&k.t()?)?.scale(scale).softmax(1.0)?;
            maps.push(attn.value());
            outs.push(attn.matmul(&v)?);
        }
        if let Some(t) = trace {
            t.extend(maps);
        }
        let merged = p.tape().concat_cols(&outs)?;
        self.proj.forward(p, &merged)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
        trace: Option<&mut Vec<Rc<Tensor>>>,
    ) -> Result<Var<'t>> {
        let a = self.attn.forward(p, &self.norm1.forward(p, x)?, trace)?;
        let x = x.add(&a)?;
        let m = self.mlp.forward(p, &self.norm2.forward(p, &x)?)?;
        x.add(&m)
    }
}

/// A stack of transformer blocks with its own positional network and,
/// optionally, a learnable class token.
#[derive(Clone, Debug)]
pub struct ViTStack {
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    /// Maps a center coordinate to a `dim`-wide embedding (`3 → d → d`).
    pub positional: Mlp,
    pub cls_token: Option<ParamId>,
    pub dim: usize,
    pub heads: usize,
}

impl ViTStack {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        depth: usize,
        heads: usize,
        with_cls: bool,
    ) -> Result<Self> {
        if heads == 0 || dim == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {dim} is not divisible into {heads} heads"
            )));
        }
        let positional = Mlp::new(store, rng, &format!("{name}.pos"), [3, dim, dim]);
        let cls_token = with_cls.then(|| store.add(format!("{name}.cls"), uniform(rng, &[1, dim], 0.02)));
        let blocks = (0..depth)
            .map(|i| {
                let n = format!("{name}.blocks.{i}");
                Block {
                    norm1: LayerNorm::new(store, &format!("{n}.norm1"), dim),
                    attn: Attention {
                        qkv: Linear::new(store, rng, &format!("{n}.attn.qkv"), dim, 3 * dim, true),
                        proj: Linear::new(store, rng, &format!("{n}.attn.proj"), dim, dim, true),
                        heads,
                        dim,
                    },
                    norm2: LayerNorm::new(store, &format!("{n}.norm2"), dim),
                    mlp: Mlp::new(store, rng, &format!("{n}.mlp"), [dim, MLP_RATIO * dim, dim]),
                }
            })
            .collect();
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim);
        Ok(Self {
            blocks,
            norm,
            positional,
            cls_token,
            dim,
            heads,
        })
    }

    /// Positional embeddings of a list of centers, `len×dim`.
    pub fn embed_positions<'t>(&self, p: &Bound<'t>, centers: &[[f64; 3]]) -> Result<Var<'t>> {
        let c = p.tape().constant(Tensor::from_points(centers));
        self.positional.forward(p, &c)
    }

    /// Runs all blocks and the final norm. Output shape equals input shape.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        self.run(p, x, None)
    }

    /// Like [`forward`](Self::forward), also returning every attention map
    /// (one per head per block).
    pub fn forward_traced<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
    ) -> Result<(Var<'t>, Vec<Rc<Tensor>>)> {
        let mut maps = Vec::new();
        let y = self.run(p, x, Some(&mut maps))?;
        Ok((y, maps))
    }

    fn run<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
        mut trace: Option<&mut Vec<Rc<Tensor>>>,
    ) -> Result<Var<'t>> {
        if x.cols() != self.dim {
            return Err(Error::Shape {
                op: "transformer",
                left: x.shape(),
                right: vec![self.dim],
            });
        }
        let mut h = *x;
        for b in &self.blocks {
            h = b.forward(p, &h, trace.as_deref_mut())?;
        }
        self.norm.forward(p, &h)
    }
}
