use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of the nearest row of `to` for every row of `from`, lowest index
/// on ties.
fn nearest_rows(from: &Tensor, to: &Tensor) -> Vec<usize> {
    (0..from.rows())
        .map(|i| {
            let a = from.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..to.rows() {
                let b = to.row(j);
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean over rows of `from` of the squared distance to the nearest row of
/// `to`. The nearest-neighbor choice is constant during backward.
fn directed<'t>(from: &Var<'t>, to: &Var<'t>) -> Result<Var<'t>> {
    let nn = nearest_rows(&from.value(), &to.value());
    from.tape().record_selection(nn.iter().copied());
    let diff = from.sub(&to.select_rows(&nn)?)?;
    Ok(diff.square().sum_rows().sum().scale(1.0 / from.rows() as f64))
}

/// Symmetric Chamfer distance with squared distances, mean-reduced in each
/// direction and summed.
pub fn chamfer<'t>(x: &Var<'t>, y: &Var<'t>) -> Result<Var<'t>> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::Contract("chamfer distance of an empty set".into()));
    }
    if x.cols() != y.cols() {
        return Err(Error::Shape {
            op: "chamfer",
            left: x.shape(),
            right: y.shape(),
        });
    }
    directed(x, y)?.add(&directed(y, x)?)
}

/// `chamfer(C^a, C̄^b) + chamfer(C^b, C̄^a)`: each view's patch centers
/// against the other view's pooled cluster centers.
pub fn center_loss<'t>(
    centers_a: &[[f64; 3]],
    centers_b: &[[f64; 3]],
    pooled_a: &Var<'t>,
    pooled_b: &Var<'t>,
) -> Result<Var<'t>> {
    if centers_a.is_empty() || centers_b.is_empty() {
        return Err(Error::Contract("center loss over an empty center set".into()));
    }
    let tape = pooled_a.tape();
    let ca = tape.constant(Tensor::from_points(centers_a));
    let cb = tape.constant(Tensor::from_points(centers_b));
    chamfer(&ca, pooled_b)?.add(&chamfer(&cb, pooled_a)?)
}

/// Cross-entropy of detached transport plans against log-scores, over both
/// view pairings, scaled by `1/N`.
pub fn assignment_loss<'t>(
    scores_ab: &Var<'t>,
    plan_ab: &Var<'t>,
    scores_ba: &Var<'t>,
    plan_ba: &Var<'t>,
) -> Result<Var<'t>> {
    for (s, g) in [(scores_ab, plan_ab), (scores_ba, plan_ba)] {
        if s.shape() != g.shape() {
            return Err(Error::Shape {
                op: "assignment_loss",
                left: s.shape(),
                right: g.shape(),
            });
        }
    }
    let n = scores_ab.rows() as f64;
    let ab = plan_ab.stop_gradient()?.mul(&scores_ab.log()?)?.sum();
    let ba = plan_ba.stop_gradient()?.mul(&scores_ba.log()?)?.sum();
    Ok(ab.add(&ba)?.scale(-1.0 / n))
}
