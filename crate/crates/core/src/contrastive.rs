//! Global stop-gradient objective between class tokens and max-pooled
//! patch features of the opposite view.

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Coordinate-wise maximum over rows, `M×d → 1×d`.
pub fn global_pool<'t>(features: &Var<'t>) -> Result<Var<'t>> {
    if features.rows() == 0 {
        return Err(Error::Contract("global pooling over zero rows".into()));
    }
    features.max_rows()
}

/// Row-wise cosine similarity of two `B×d` matrices, `B×1`.
fn cosine<'t>(a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
    let dot = a.mul(b)?.sum_rows();
    let na = a.square().sum_rows().sqrt()?;
    let nb = b.square().sum_rows().sqrt()?;
    dot.div(&na.mul(&nb)?)
}

fn check_nonzero(v: &Var<'_>, what: &str) -> Result<()> {
    let t = v.value();
    for i in 0..t.rows() {
        if t.row(i).iter().all(|&x| x == 0.0) {
            return Err(Error::Domain {
                op: "siamese_distance",
                detail: format!("{what} row {i} has zero norm"),
            });
        }
    }
    Ok(())
}

/// Per-row `2 − cos(f, stop(z)) − cos(stop(f), z)`, `B×1`.
///
/// The first term sends gradient only to `f`, the second only to `z`.
pub fn siamese_distance_rows<'t>(f: &Var<'t>, z: &Var<'t>) -> Result<Var<'t>> {
    if f.shape() != z.shape() {
        return Err(Error::Shape {
            op: "siamese_distance",
            left: f.shape(),
            right: z.shape(),
        });
    }
    check_nonzero(f, "f")?;
    check_nonzero(z, "z")?;
    let s1 = cosine(f, &z.stop_gradient()?)?;
    let s2 = cosine(&f.stop_gradient()?, z)?;
    Ok(s1.add(&s2)?.neg().add_scalar(2.0))
}

/// Batch mean of [`siamese_distance_rows`]; a scalar for `1×d` inputs.
pub fn siamese_distance<'t>(f: &Var<'t>, z: &Var<'t>) -> Result<Var<'t>> {
    Ok(siamese_distance_rows(f, z)?.mean())
}

/// `D(f_a, z_b) + D(f_b, z_a)`, each averaged over the batch.
pub fn contrastive_loss<'t>(
    f_a: &Var<'t>,
    z_b: &Var<'t>,
    f_b: &Var<'t>,
    z_a: &Var<'t>,
) -> Result<Var<'t>> {
    siamese_distance(f_a, z_b)?.add(&siamese_distance(f_b, z_a)?)
}
