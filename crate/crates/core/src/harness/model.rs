use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::backbone::checkpoint::{load_checkpoint, save_checkpoint};
use crate::backbone::{sample_masks, MaskedAutoencoder};
use crate::clustering::{
    assignment_loss, center_loss, cluster_scores, message_pass, pool_centers, sinkhorn_assign,
    ClusterHead, SinkhornResult,
};
use crate::contrastive::{contrastive_loss, global_pool};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::nn::{Bound, ParamStore};
use crate::pointcloud::{build_patches, embed_patches, MiniPointNet, PatchSet, PointCloud};
use crate::tensor::Tensor;

use super::config::TrainConfig;

/// The full set of learnable modules in one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub point_encoder: MiniPointNet,
    pub autoencoder: MaskedAutoencoder,
    pub head: ClusterHead,
}

impl Model {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let point_encoder = MiniPointNet::new(&mut store, &mut rng, "embed", d);
        let autoencoder = MaskedAutoencoder::new(
            &mut store,
            &mut rng,
            d,
            config.encoder_depth,
            config.decoder_depth,
            config.heads,
        )?;
        let head = ClusterHead::new(&mut store, &mut rng, "cluster", d, d, config.clusters, config.tau)?;
        Ok(Self {
            config: config.clone(),
            store,
            point_encoder,
            autoencoder,
            head,
        })
    }

    /// Builds the architecture described by `config` and loads parameters
    /// from a checkpoint, validating names and shapes.
    pub fn load(config: &TrainConfig, checkpoint: impl AsRef<Path>) -> Result<Self> {
        let mut model = Self::new(config)?;
        load_checkpoint(checkpoint, &mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, checkpoint: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(checkpoint, &self.store)
    }

    pub fn patchify(&self, cloud: &PointCloud, seed: u64) -> Result<PatchSet> {
        if cloud.len() < self.config.patches.max(self.config.k_patch) {
            return Err(Error::Size(format!(
                "cloud of {} points is too small for {} patches of {}",
                cloud.len(),
                self.config.patches,
                self.config.k_patch
            )));
        }
        build_patches(cloud, self.config.patches, self.config.k_patch, seed)
    }
}

/// Values of one view's clustering branch, kept for diagnostics.
#[derive(Clone, Debug)]
pub struct ViewTrace {
    pub affinity: Tensor,
    pub scores: Tensor,
    pub pooled: Tensor,
    pub plan: Tensor,
}

/// Per-cloud losses and diagnostics of one training forward pass.
pub struct CloudPass<'t> {
    pub l_ass: Var<'t>,
    pub l_cts: Var<'t>,
    pub l_contras: Var<'t>,
    pub total: Var<'t>,
    /// Transport results for the (a→b, b→a) pairings.
    pub sinkhorn: [SinkhornResult; 2],
    pub views: [ViewTrace; 2],
}

fn ensure_finite(name: &str, v: &Var<'_>) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

/// Runs the two-view pretraining pipeline on one cloud:
/// patchify, embed, mask, encode and decode both views, build each view's
/// affinity graph, score clusters, pool centers, compute cross-view
/// transport targets and the three losses.
pub fn cloud_pass<'t>(
    model: &Model,
    p: &Bound<'t>,
    cloud: &PointCloud,
    patch_seed: u64,
    mask_seed: u64,
) -> Result<CloudPass<'t>> {
    let cfg = &model.config;
    let patches = model.patchify(cloud, patch_seed)?;
    let centers = &patches.centers;
    let tokens = embed_patches(&patches, &model.point_encoder, p)?;
    ensure_finite("patch tokens", &tokens)?;
    let masks = sample_masks(cfg.patches, cfg.mask_ratio, mask_seed)?;

    let ae = &model.autoencoder;
    let enc_a = ae.encode(p, &tokens, centers, &masks.mask_a)?;
    let enc_b = ae.encode(p, &tokens, centers, &masks.mask_b)?;
    ensure_finite("encoder output (view a)", &enc_a.visible_features)?;
    ensure_finite("encoder output (view b)", &enc_b.visible_features)?;
    let rec_a = ae.decode(p, &enc_a, centers, &masks.mask_a)?.features;
    let rec_b = ae.decode(p, &enc_b, centers, &masks.mask_b)?.features;
    ensure_finite("decoder output (view a)", &rec_a)?;
    ensure_finite("decoder output (view b)", &rec_b)?;

    let branch = |features: &Var<'t>| -> Result<(Var<'t>, Var<'t>, Tensor)> {
        let graph = build_graph(centers, features, cfg.k_graph)?;
        let hidden = message_pass(p, &graph, features, &model.head)?;
        let scores = cluster_scores(p, &hidden, &model.head)?;
        let pooled = pool_centers(&scores, centers)?;
        let affinity = (*graph.weights.value()).clone();
        Ok((scores, pooled, affinity))
    };
    let (s_a, pooled_a, w_a) = branch(&rec_a)?;
    let (s_b, pooled_b, w_b) = branch(&rec_b)?;
    ensure_finite("scores (view a)", &s_a)?;
    ensure_finite("scores (view b)", &s_b)?;
    ensure_finite("pooled centers (view a)", &pooled_a)?;
    ensure_finite("pooled centers (view b)", &pooled_b)?;

    let sk = cfg.sinkhorn();
    let gamma_ab = sinkhorn_assign(centers, &pooled_b.value().to_points()?, &sk)?;
    let gamma_ba = sinkhorn_assign(centers, &pooled_a.value().to_points()?, &sk)?;
    let tape = p.tape();
    let plan_ab = tape.detached(gamma_ab.plan.clone())?;
    let plan_ba = tape.detached(gamma_ba.plan.clone())?;
    ensure_finite("transport plan (a, b)", &plan_ab)?;
    ensure_finite("transport plan (b, a)", &plan_ba)?;

    let l_ass = assignment_loss(&s_a, &plan_ab, &s_b, &plan_ba)?;
    ensure_finite("l_ass", &l_ass)?;
    let l_cts = center_loss(centers, centers, &pooled_a, &pooled_b)?;
    ensure_finite("l_cts", &l_cts)?;
    let z_a = global_pool(&enc_a.visible_features)?;
    let z_b = global_pool(&enc_b.visible_features)?;
    let l_contras = contrastive_loss(&enc_a.f_cls, &z_b, &enc_b.f_cls, &z_a)?;
    ensure_finite("l_contras", &l_contras)?;
    let total = l_ass.add(&l_cts)?.add(&l_contras)?;

    let views = [
        ViewTrace {
            affinity: w_a,
            scores: (*s_a.value()).clone(),
            pooled: (*pooled_a.value()).clone(),
            plan: gamma_ab.plan.clone(),
        },
        ViewTrace {
            affinity: w_b,
            scores: (*s_b.value()).clone(),
            pooled: (*pooled_b.value()).clone(),
            plan: gamma_ba.plan.clone(),
        },
    ];
    Ok(CloudPass {
        l_ass,
        l_cts,
        l_contras,
        total,
        sinkhorn: [gamma_ab, gamma_ba],
        views,
    })
}

/// Unmasked inference outputs for one cloud.
pub struct Inference<'t> {
    pub patches: PatchSet,
    pub f_cls: Var<'t>,
    pub patch_features: Var<'t>,
    pub reconstructed: Var<'t>,
    pub affinity: Var<'t>,
    pub scores: Var<'t>,
}

/// Encodes every patch (no masking), decodes, and scores clusters.
pub fn infer<'t>(model: &Model, p: &Bound<'t>, cloud: &PointCloud, patch_seed: u64) -> Result<Inference<'t>> {
    let patches = model.patchify(cloud, patch_seed)?;
    let tokens = embed_patches(&patches, &model.point_encoder, p)?;
    let mask = vec![false; patches.len()];
    let ae = &model.autoencoder;
    let enc = ae.encode(p, &tokens, &patches.centers, &mask)?;
    let reconstructed = ae.decode(p, &enc, &patches.centers, &mask)?.features;
    let graph = build_graph(&patches.centers, &reconstructed, model.config.k_graph)?;
    let hidden = message_pass(p, &graph, &reconstructed, &model.head)?;
    let scores = cluster_scores(p, &hidden, &model.head)?;
    Ok(Inference {
        patches,
        f_cls: enc.f_cls,
        patch_features: enc.visible_features,
        reconstructed,
        affinity: graph.weights,
        scores,
    })
}

/// Frozen global descriptor `concat(f_cls, maxpool(patch features))`.
pub fn global_features(model: &Model, cloud: &PointCloud, patch_seed: u64) -> Result<Vec<f64>> {
    let tape = Tape::with_precision(model.config.precision);
    let p = Bound::frozen(&tape, &model.store);
    let patches = model.patchify(cloud, patch_seed)?;
    let tokens = embed_patches(&patches, &model.point_encoder, &p)?;
    let mask = vec![false; patches.len()];
    let enc = model.autoencoder.encode(&p, &tokens, &patches.centers, &mask)?;
    let pooled = global_pool(&enc.visible_features)?;
    let mut out = enc.f_cls.value().data().to_vec();
    out.extend_from_slice(pooled.value().data());
    Ok(out)
}

/// Per-point cluster labels: each point takes the argmax cluster of its
/// nearest patch center.
pub fn point_labels(patches: &PatchSet, scores: &Tensor, points: &[[f64; 3]]) -> Result<Vec<usize>> {
    let patch_labels = scores.argmax_rows();
    let nearest = crate::pointcloud::knn(points, &patches.centers, 1)?;
    Ok(nearest.iter().map(|nn| patch_labels[nn[0]]).collect())
}
