//! The finite-difference suite over every differentiable building block
//! and the full two-view pipeline, on small randomized shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::backbone::{MaskedAutoencoder, ViTStack};
use crate::clustering::{
    assignment_loss, center_loss, cluster_scores, message_pass, pool_centers, sinkhorn_assign,
    ClusterHead, SinkhornConfig,
};
use crate::contrastive::{contrastive_loss, siamese_distance};
use crate::error::Result;
use crate::graph::build_graph;
use crate::harness::{cloud_pass, generate_shape, Generator, Model, TrainConfig};
use crate::nn::{uniform, Bound, LayerNorm, ParamId, ParamStore};
use crate::pointcloud::{build_patches, embed_patches, MiniPointNet, PointCloud};
use crate::tensor::Tensor;

use super::{check_params, FdConfig, FdReport};

/// Reports of one named case.
#[derive(Clone, Debug)]
pub struct CaseReport {
    pub case: &'static str,
    pub reports: Vec<FdReport>,
}

impl CaseReport {
    pub fn passed(&self, cfg: &FdConfig) -> bool {
        self.reports.iter().all(|r| r.passed(cfg))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

/// `Σ R ⊙ out` with a fixed random readout, so every output entry gets a
/// distinct weight.
fn readout<'t>(out: &Var<'t>, r: &Tensor) -> Result<Var<'t>> {
    Ok(out.mul(&out.tape().constant(r.clone()))?.sum())
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    uniform(rng, &[n, 3], 1.0).to_points().expect("n×3")
}

fn case<F>(name: &'static str, store: &mut ParamStore, ids: &[ParamId], cfg: &FdConfig, f: F) -> Result<CaseReport>
where
    F: for<'t> Fn(&Bound<'t>) -> Result<Var<'t>>,
{
    Ok(CaseReport {
        case: name,
        reports: check_params(store, ids, cfg, f)?,
    })
}

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}

/// Zero-initialised biases put ReLU inputs exactly on the kink for inputs at
/// the origin (a patch center after centering), so nudge every parameter.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for id in all_ids(store) {
        let t = store.get_mut(id);
        for x in t.data_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
}

pub fn softmax_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 1);
    let mut store = ParamStore::new();
    let x = store.add("logits", uniform(&mut rng, &[3, 5], 2.0));
    let r = uniform(&mut rng, &[3, 5], 1.0);
    case("softmax", &mut store, &[x], cfg, |p| readout(&p.var(x).softmax(0.7)?, &r))
}

pub fn layer_norm_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 2);
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 6);
    let x = store.add("x", uniform(&mut rng, &[4, 6], 1.0));
    store.set(ln.gain, uniform(&mut rng, &[1, 6], 1.0))?;
    let r = uniform(&mut rng, &[4, 6], 1.0);
    let ids = all_ids(&store);
    case("layer_norm", &mut store, &ids, cfg, |p| readout(&ln.forward(p, &p.var(x))?, &r))
}

fn head_store(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Result<(ParamStore, ClusterHead, ParamId, Vec<[f64; 3]>)> {
    let mut store = ParamStore::new();
    let head = ClusterHead::new(&mut store, rng, "head", d, d, k, 0.8)?;
    let feats = store.add("features", uniform(rng, &[n, d], 1.0));
    Ok((store, head, feats, random_points(rng, n)))
}

pub fn message_pass_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 3);
    let (mut store, head, feats, centers) = head_store(&mut rng, 6, 8, 3)?;
    let r = uniform(&mut rng, &[6, 8], 1.0);
    let ids = [head.w_mix, head.w_skip, feats];
    case("message_pass", &mut store, &ids, cfg, |p| {
        let f = p.var(feats);
        let g = build_graph(&centers, &f, 2)?;
        readout(&message_pass(p, &g, &f, &head)?, &r)
    })
}

pub fn cluster_scores_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 4);
    let (mut store, head, feats, _) = head_store(&mut rng, 6, 8, 3)?;
    let r = uniform(&mut rng, &[6, 3], 1.0);
    let ids = [head.w_proj1, head.w_proj2, feats];
    case("cluster_scores", &mut store, &ids, cfg, |p| {
        readout(&cluster_scores(p, &p.var(feats), &head)?, &r)
    })
}

pub fn pool_centers_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 5);
    let mut store = ParamStore::new();
    let logits = store.add("logits", uniform(&mut rng, &[8, 3], 2.0));
    let centers = random_points(&mut rng, 8);
    let r = uniform(&mut rng, &[3, 3], 1.0);
    case("pool_centers", &mut store, &[logits], cfg, |p| {
        readout(&pool_centers(&p.var(logits).softmax(1.0)?, &centers)?, &r)
    })
}

pub fn center_loss_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 6);
    let mut store = ParamStore::new();
    let pa = store.add("pooled_a", uniform(&mut rng, &[3, 3], 1.0));
    let pb = store.add("pooled_b", uniform(&mut rng, &[3, 3], 1.0));
    let ca = random_points(&mut rng, 8);
    let cb = random_points(&mut rng, 8);
    case("center_loss", &mut store, &[pa, pb], cfg, |p| {
        center_loss(&ca, &cb, &p.var(pa), &p.var(pb))
    })
}

pub fn assignment_loss_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 7);
    let mut store = ParamStore::new();
    let la = store.add("logits_a", uniform(&mut rng, &[8, 3], 2.0));
    let lb = store.add("logits_b", uniform(&mut rng, &[8, 3], 2.0));
    let centers = random_points(&mut rng, 8);
    let sk = SinkhornConfig {
        epsilon: 0.05,
        max_iters: 500,
        ..SinkhornConfig::default()
    };
    let plan_ab = sinkhorn_assign(&centers, &random_points(&mut rng, 3), &sk)?.plan;
    let plan_ba = sinkhorn_assign(&centers, &random_points(&mut rng, 3), &sk)?.plan;
    case("assignment_loss", &mut store, &[la, lb], cfg, |p| {
        let t = p.tape();
        assignment_loss(
            &p.var(la).softmax(1.0)?,
            &t.detached(plan_ab.clone())?,
            &p.var(lb).softmax(1.0)?,
            &t.detached(plan_ba.clone())?,
        )
    })
}

pub fn siamese_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 8);
    let mut store = ParamStore::new();
    let f = store.add("f", uniform(&mut rng, &[1, 8], 1.0));
    let z = store.add("z", uniform(&mut rng, &[1, 8], 1.0));
    case("siamese_distance", &mut store, &[f, z], cfg, |p| siamese_distance(&p.var(f), &p.var(z)))
}

pub fn contrastive_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 9);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = ["f_a", "z_b", "f_b", "z_a"]
        .iter()
        .map(|n| store.add(*n, uniform(&mut rng, &[1, 8], 1.0)))
        .collect();
    let id = ids.clone();
    case("contrastive_loss", &mut store, &ids, cfg, move |p| {
        contrastive_loss(&p.var(id[0]), &p.var(id[1]), &p.var(id[2]), &p.var(id[3]))
    })
}

pub fn embed_patches_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 10);
    let mut store = ParamStore::new();
    let enc = MiniPointNet::new(&mut store, &mut rng, "embed", 16);
    jitter(&mut store, &mut rng, 0.1);
    let cloud = PointCloud::new(random_points(&mut rng, 24))?;
    let patches = build_patches(&cloud, 4, 6, cfg.seed)?;
    let r = uniform(&mut rng, &[4, 16], 1.0);
    let ids = all_ids(&store);
    case("embed_patches", &mut store, &ids, cfg, |p| {
        readout(&embed_patches(&patches, &enc, p)?, &r)
    })
}

pub fn encoder_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 11);
    let mut store = ParamStore::new();
    let vit = ViTStack::new(&mut store, &mut rng, "encoder", 16, 2, 2, true)?;
    let tokens = store.add("tokens", uniform(&mut rng, &[6, 16], 1.0));
    let centers = random_points(&mut rng, 6);
    let mask = [false, true, false, false, true, false];
    let r_cls = uniform(&mut rng, &[1, 16], 1.0);
    let r_vis = uniform(&mut rng, &[4, 16], 1.0);
    let ids = all_ids(&store);
    case("encoder blocks", &mut store, &ids, cfg, |p| {
        let view = crate::backbone::encode(p, &p.var(tokens), &centers, &mask, &vit)?;
        readout(&view.f_cls, &r_cls)?.add(&readout(&view.visible_features, &r_vis)?)
    })
}

pub fn decoder_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 12);
    let mut store = ParamStore::new();
    let ae = MaskedAutoencoder::new(&mut store, &mut rng, 16, 1, 1, 2)?;
    let tokens = store.add("tokens", uniform(&mut rng, &[6, 16], 1.0));
    let centers = random_points(&mut rng, 6);
    let mask = [true, false, false, true, false, true];
    let r = uniform(&mut rng, &[6, 16], 1.0);
    let ids: Vec<ParamId> = store
        .with_prefix("decoder")
        .into_iter()
        .chain([tokens])
        .collect();
    case("decoder blocks", &mut store, &ids, cfg, |p| {
        let view = ae.encode(p, &p.var(tokens), &centers, &mask)?;
        readout(&ae.decode(p, &view, &centers, &mask)?.features, &r)
    })
}

pub fn graph_case(cfg: &FdConfig) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 13);
    let mut store = ParamStore::new();
    let feats = store.add("features", uniform(&mut rng, &[7, 5], 1.0));
    let centers = random_points(&mut rng, 7);
    let r = uniform(&mut rng, &[7, 7], 1.0);
    case("build_graph", &mut store, &[feats], cfg, |p| {
        readout(&build_graph(&centers, &p.var(feats), 3)?.weights, &r)
    })
}

/// Toy configuration of the full pipeline: 16 points, 8 patches, d = 16,
/// 2 encoder + 1 decoder blocks, 3 clusters.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        points_per_cloud: 16,
        patches: 8,
        k_patch: 4,
        k_graph: 2,
        embed_dim: 16,
        encoder_depth: 2,
        decoder_depth: 1,
        heads: 2,
        clusters: 3,
        epsilon: 0.01,
        sinkhorn_max_iters: 300,
        batch_size: 1,
        steps: Some(1),
        seed: 5,
        ..TrainConfig::default()
    }
}

pub fn pipeline_case(cfg: &FdConfig) -> Result<CaseReport> {
    let tc = toy_config();
    let mut model = Model::new(&tc)?;
    jitter(&mut model.store, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 14), 0.05);
    let cloud = generate_shape(Generator::Box, tc.points_per_cloud, 0.05, cfg.seed)?.cloud;
    let ids = all_ids(&model.store);
    // The pipeline reads parameters only through the binding, so the
    // architecture can be borrowed from a copy without its store.
    let frame = Model {
        store: ParamStore::new(),
        ..model.clone()
    };
    let reports = check_params(&mut model.store, &ids, cfg, |p| {
        Ok(cloud_pass(&frame, p, &cloud, 11, 12)?.total)
    })?;
    Ok(CaseReport {
        case: "full pipeline",
        reports,
    })
}

/// Runs every case in a fixed order.
pub fn run_suite(cfg: &FdConfig) -> Result<Vec<CaseReport>> {
    let cases: [fn(&FdConfig) -> Result<CaseReport>; 14] = [
        softmax_case,
        layer_norm_case,
        message_pass_case,
        cluster_scores_case,
        pool_centers_case,
        center_loss_case,
        assignment_loss_case,
        siamese_case,
        contrastive_case,
        embed_patches_case,
        encoder_case,
        decoder_case,
        graph_case,
        pipeline_case,
    ];
    cases.iter().map(|c| c(cfg)).collect()
}
