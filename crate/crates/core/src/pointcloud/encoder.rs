use rand::Rng;

use super::patches::PatchSet;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamStore};
use crate::tensor::Tensor;

/// Width of the first point-wise stage.
pub const STAGE1: [usize; 2] = [64, 128];
/// Hidden width of the second point-wise stage.
pub const STAGE2_HIDDEN: usize = 256;

/// Shared point-wise network turning each neighborhood into one token.
///
/// Stage one lifts every point `3 → 64 → 128`; the per-patch max of those
/// features is appended to each point (`256` wide) and stage two maps
/// `256 → 256 → d`. A final per-patch max gives the token.
#[derive(Clone, Debug)]
pub struct MiniPointNet {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
    pub l4: Linear,
    pub dim: usize,
}

impl MiniPointNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, dim: usize) -> Self {
        let [w1, w2] = STAGE1;
        Self {
            l1: Linear::new(store, rng, &format!("{name}.l1"), 3, w1, true),
            l2: Linear::new(store, rng, &format!("{name}.l2"), w1, w2, true),
            l3: Linear::new(store, rng, &format!("{name}.l3"), 2 * w2, STAGE2_HIDDEN, true),
            l4: Linear::new(store, rng, &format!("{name}.l4"), STAGE2_HIDDEN, dim, true),
            dim,
        }
    }
}

/// Embeds every patch into a `d`-dimensional token, giving an `N×d` matrix.
pub fn embed_patches<'t>(
    patches: &PatchSet,
    encoder: &MiniPointNet,
    params: &Bound<'t>,
) -> Result<Var<'t>> {
    let n = patches.len();
    let k = patches.k_patch;
    if n == 0 || k == 0 || patches.neighborhoods.len() != n * k {
        return Err(Error::Config(format!(
            "patch set has {} neighborhood points for {n} patches of {k}",
            patches.neighborhoods.len()
        )));
    }
    if encoder.l1.in_dim != 3 || encoder.l4.out_dim != encoder.dim {
        return Err(Error::Config("point encoder dimensions are inconsistent".into()));
    }
    let tape = params.tape();
    let x = tape.constant(Tensor::from_points(&patches.neighborhoods));
    let h = encoder.l1.forward(params, &x)?.relu();
    let h = encoder.l2.forward(params, &h)?;
    let pooled = h.group_max(k)?.repeat_rows(k);
    let h = tape.concat_cols(&[pooled, h])?;
    let h = encoder.l3.forward(params, &h)?.relu();
    let h = encoder.l4.forward(params, &h)?;
    h.group_max(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::pointcloud::{build_patches, PointCloud};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize) -> (ParamStore, MiniPointNet) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = MiniPointNet::new(&mut store, &mut rng, "pn", dim);
        (store, enc)
    }

    fn cloud(h: usize) -> PointCloud {
        let pts = (0..h)
            .map(|i| {
                let t = i as f64 * 0.7;
                [t.sin(), t.cos(), (0.3 * t).sin()]
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn token_shape_and_permutation_invariance() {
        let (store, enc) = setup(16);
        let ps = build_patches(&cloud(40), 4, 8, 2).unwrap();
        let tape = Tape::new();
        let p = Bound::new(&tape, &store);
        let tokens = embed_patches(&ps, &enc, &p).unwrap().value();
        assert_eq!(tokens.shape(), &[4, 16]);

        let mut shuffled = ps.clone();
        for i in 0..4 {
            shuffled.neighborhoods[i * 8..(i + 1) * 8].reverse();
        }
        shuffled.neighborhoods[8..16].rotate_left(3);
        let again = embed_patches(&shuffled, &enc, &p).unwrap().value();
        assert_eq!(again.data(), tokens.data());
    }

    #[test]
    fn duplicate_patches_give_duplicate_tokens() {
        let (store, enc) = setup(8);
        let mut ps = build_patches(&cloud(30), 3, 5, 0).unwrap();
        let first: Vec<_> = ps.patch(0).to_vec();
        ps.neighborhoods[5..10].copy_from_slice(&first);
        let tape = Tape::new();
        let p = Bound::new(&tape, &store);
        let t = embed_patches(&ps, &enc, &p).unwrap().value();
        assert_eq!(t.row(0), t.row(1));
    }

    #[test]
    fn inconsistent_patch_set_is_config_error() {
        let (store, enc) = setup(8);
        let mut ps = build_patches(&cloud(30), 3, 5, 0).unwrap();
        ps.neighborhoods.pop();
        let tape = Tape::new();
        let p = Bound::new(&tape, &store);
        assert!(matches!(embed_patches(&ps, &enc, &p), Err(Error::Config(_))));
    }
}
