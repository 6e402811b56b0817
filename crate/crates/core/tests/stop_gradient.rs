//! Exact-zero gradient checks for every stop-gradient edge.

use pointclu_core::clustering::assignment_loss;
use pointclu_core::contrastive::siamese_distance_rows;
use pointclu_core::{Tape, Tensor};

fn m(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).unwrap()
}

#[test]
fn no_gradient_reaches_transport_plans() {
    let tape = Tape::new();
    let logits_a = tape.leaf(m(4, 2, vec![0.3, -0.1, 1.2, 0.5, -0.7, 0.2, 0.0, 0.9]));
    let logits_b = tape.leaf(m(4, 2, vec![-0.3, 0.4, 0.1, 0.8, 0.6, -0.2, 1.1, 0.0]));
    // Plans enter as differentiable leaves so a missing stop would show up
    // as a nonzero gradient.
    let plan_ab = tape.leaf(m(4, 2, vec![0.25, 0.0, 0.0, 0.25, 0.2, 0.05, 0.05, 0.2]));
    let plan_ba = tape.leaf(m(4, 2, vec![0.1, 0.15, 0.15, 0.1, 0.0, 0.25, 0.25, 0.0]));
    let s_a = logits_a.softmax(1.0).unwrap();
    let s_b = logits_b.softmax(1.0).unwrap();
    let loss = assignment_loss(&s_a, &plan_ab, &s_b, &plan_ba).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.wrt(plan_ab).data().iter().all(|&v| v == 0.0));
    assert!(g.wrt(plan_ba).data().iter().all(|&v| v == 0.0));
    assert!(g.wrt(logits_a).data().iter().any(|&v| v != 0.0));
    assert!(g.wrt(logits_b).data().iter().any(|&v| v != 0.0));
}

/// `2 − cos(f, sg(z)) − cos(sg(f), z)` split into its two terms: the first
/// must give z nothing, the second must give f nothing.
#[test]
fn each_siamese_term_severs_its_detached_side() {
    let fv = m(1, 5, vec![0.4, -1.0, 0.3, 2.0, -0.5]);
    let zv = m(1, 5, vec![1.5, 0.2, -0.8, 0.1, 0.9]);

    let tape = Tape::new();
    let f = tape.leaf(fv.clone());
    let z = tape.leaf(zv.clone());
    let zs = z.stop_gradient().unwrap();
    let dot = f.mul(&zs).unwrap().sum();
    let nf = f.square().sum().sqrt().unwrap();
    let nz = zs.square().sum().sqrt().unwrap();
    let s1 = dot.div(&nf.mul(&nz).unwrap()).unwrap();
    let g = tape.backward(s1).unwrap();
    assert!(g.wrt(z).data().iter().all(|&v| v == 0.0));
    assert!(g.wrt(f).data().iter().any(|&v| v != 0.0));

    let tape = Tape::new();
    let f = tape.leaf(fv.clone());
    let z = tape.leaf(zv.clone());
    let fs = f.stop_gradient().unwrap();
    let dot = fs.mul(&z).unwrap().sum();
    let nf = fs.square().sum().sqrt().unwrap();
    let nz = z.square().sum().sqrt().unwrap();
    let s2 = dot.div(&nf.mul(&nz).unwrap()).unwrap();
    let g = tape.backward(s2).unwrap();
    assert!(g.wrt(f).data().iter().all(|&v| v == 0.0));
    assert!(g.wrt(z).data().iter().any(|&v| v != 0.0));
}

#[test]
fn siamese_gradient_on_f_ignores_the_z_path() {
    // With z a function of f, the library distance must differentiate only
    // through the f-slot of the first term and the z-slot of the second.
    let tape = Tape::new();
    let f = tape.leaf(m(1, 3, vec![1.0, 2.0, -1.0]));
    let z = tape.leaf(m(1, 3, vec![0.5, -0.5, 2.0]));
    let d = siamese_distance_rows(&f, &z).unwrap().sum();
    let g = tape.backward(d).unwrap();
    let (fv, zv) = (f.value(), z.value());
    let dot: f64 = fv.data().iter().zip(zv.data()).map(|(a, b)| a * b).sum();
    let nf = fv.l2_norm();
    let nz = zv.l2_norm();
    for i in 0..3 {
        let df = -(zv.data()[i] / (nf * nz) - dot * fv.data()[i] / (nf.powi(3) * nz));
        let dz = -(fv.data()[i] / (nf * nz) - dot * zv.data()[i] / (nz.powi(3) * nf));
        assert!((g.wrt(f).data()[i] - df).abs() < 1e-14);
        assert!((g.wrt(z).data()[i] - dz).abs() < 1e-14);
    }
}
