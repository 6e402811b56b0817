//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation eagerly as it is evaluated. Handles to
//! recorded values are [`Var`]s, which are cheap `Copy` indices into the
//! tape. Calling [`Tape::backward`] on a scalar walks the tape once in
//! reverse creation order (a valid reverse topological order, since a node
//! can only reference nodes created before it) and returns a [`Grads`] table
//! holding the gradient of every leaf created with [`Tape::leaf`].
//!
//! Stop-gradient is a first-class node: [`Var::stop_gradient`] produces a
//! value-identical node that contributes nothing to its parent's gradient.
//! Values entering through stop-gradient (or [`Tape::detached`]) are logged
//! in order, and a tape built with [`Tape::replaying`] substitutes the
//! logged values back in. Finite-difference checks use this to hold the
//! detached branch constant while perturbing inputs.

mod kernels;
mod ops;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) use kernels::{gemm_acc, View};

/// Arithmetic used by the matrix-product kernels.
///
/// Everything else always runs in 64-bit. `F32` trades accuracy in the
/// dominant GEMM cost for speed; gradient checks require `F64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// How the right operand of a binary elementwise op is expanded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Bcast {
    Same,
    Scalar,
    /// `1×n` (or `[n]`) repeated over every row.
    Row,
    /// `m×1` repeated over every column.
    Col,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Detached,
    MatMul { a: usize, b: usize },
    Transpose { a: usize },
    Add { a: usize, b: usize, bc: Bcast },
    Sub { a: usize, b: usize, bc: Bcast },
    Mul { a: usize, b: usize, bc: Bcast },
    Div { a: usize, b: usize, bc: Bcast },
    AddScalar { a: usize },
    Scale { a: usize, c: f64 },
    Exp { a: usize },
    Log { a: usize },
    Sqrt { a: usize },
    Relu { a: usize },
    Softmax { a: usize, tau: f64 },
    LayerNorm { a: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    SumAll { a: usize },
    SumRows { a: usize },
    SumCols { a: usize },
    GroupMax { a: usize, arg: Vec<usize> },
    RepeatRows { a: usize, group: usize },
    SelectRows { a: usize, idx: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceCols { a: usize, start: usize },
}

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Recording context for one forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    precision: Precision,
    detached_log: RefCell<Vec<Rc<Tensor>>>,
    replay: Option<Vec<Rc<Tensor>>>,
    replay_cursor: Cell<usize>,
    selections: Option<RefCell<u64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            precision,
            detached_log: RefCell::new(Vec::new()),
            replay: None,
            replay_cursor: Cell::new(0),
            selections: None,
        }
    }

    /// A tape whose detached values are taken, in order, from `log` instead
    /// of being computed.
    pub fn replaying(precision: Precision, log: Vec<Rc<Tensor>>) -> Self {
        Self {
            replay: Some(log),
            ..Self::with_precision(precision)
        }
    }

    /// Enables a running fingerprint of every non-smooth choice made on
    /// this tape (relu sides, max-pool winners, nearest-neighbor picks).
    pub fn tracking_selections(mut self) -> Self {
        self.selections = Some(RefCell::new(0xcbf2_9ce4_8422_2325));
        self
    }

    /// Folds discrete choices into the selection fingerprint, if tracked.
    pub fn record_selection(&self, choices: impl IntoIterator<Item = usize>) {
        if let Some(h) = &self.selections {
            let mut h = h.borrow_mut();
            for c in choices {
                *h = (*h ^ c as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    pub(crate) fn tracks_selections(&self) -> bool {
        self.selections.is_some()
    }

    /// Fingerprint of the recorded choices; equal fingerprints mean the
    /// evaluation stayed on the same smooth piece.
    pub fn selection_fingerprint(&self) -> Option<u64> {
        self.selections.as_ref().map(|h| *h.borrow())
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Values that entered the tape through a detach point, in order.
    pub fn detached_values(&self) -> Vec<Rc<Tensor>> {
        self.detached_log.borrow().clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    /// A non-differentiable value computed outside the tape from tape
    /// values (for example a transport plan). Replay substitutes it.
    pub fn detached(&self, value: Tensor) -> Result<Var<'_>> {
        let value = self.detach_value(Rc::new(value))?;
        Ok(self.push_rc(value, Op::Detached, false))
    }

    fn detach_value(&self, value: Rc<Tensor>) -> Result<Rc<Tensor>> {
        let value = match &self.replay {
            Some(log) => {
                let i = self.replay_cursor.get();
                self.replay_cursor.set(i + 1);
                let stored = log.get(i).ok_or_else(|| {
                    Error::Contract("replay log exhausted: forward pass diverged".into())
                })?;
                if stored.shape() != value.shape() {
                    return Err(Error::Shape {
                        op: "replay",
                        left: stored.shape().to_vec(),
                        right: value.shape().to_vec(),
                    });
                }
                stored.clone()
            }
            None => value,
        };
        self.detached_log.borrow_mut().push(value.clone());
        Ok(value)
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.id + 1, || None);
        let mut leaves: Vec<Option<Tensor>> = Vec::new();
        leaves.resize_with(nodes.len(), || None);
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(vec![1.0]);
        }
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match node.op {
                Op::Leaf => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    leaves[id] = Some(t);
                }
                _ => node.op.backward(&g, &node.value, &nodes, &mut grads, self.precision),
            }
        }
        Ok(Grads { leaves })
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    /// Scalar value of a single-element var.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Identity in value; blocks gradient flow into `self`.
    pub fn stop_gradient(self) -> Result<Var<'t>> {
        let value = self.tape.detach_value(self.value())?;
        Ok(self.tape.push_rc(value, Op::Detached, false))
    }
}

/// Gradients of leaves reachable from a backward root.
#[derive(Debug)]
pub struct Grads {
    leaves: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of a leaf, or `None` if the root does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.leaves.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn bidx(bc: Bcast, i: usize, cols: usize) -> usize {
    match bc {
        Bcast::Same => i,
        Bcast::Scalar => 0,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
    }
}

impl Op {
    fn backward(
        &self,
        g: &[f64],
        out: &Tensor,
        nodes: &[Node],
        grads: &mut [Option<Vec<f64>>],
        precision: Precision,
    ) {
        let val = |id: usize| -> &Tensor { &nodes[id].value };
        match *self {
            Op::Leaf | Op::Constant | Op::Detached => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                accumulate(nodes, grads, a, |ga| {
                    gemm_acc(
                        precision,
                        View::row_major(g, m, n),
                        View::transposed(bv.data(), k, n),
                        ga,
                    )
                });
                accumulate(nodes, grads, b, |gb| {
                    gemm_acc(
                        precision,
                        View::transposed(av.data(), m, k),
                        View::row_major(g, m, n),
                        gb,
                    )
                });
            }
            Op::Transpose { a } => {
                let (r, c) = (val(a).rows(), val(a).cols());
                accumulate(nodes, grads, a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add { a, b, bc } | Op::Sub { a, b, bc } => {
                let sign = if matches!(self, Op::Sub { .. }) { -1.0 } else { 1.0 };
                let cols = out.cols();
                accumulate(nodes, grads, a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                accumulate(nodes, grads, b, |gb| {
                    for (i, y) in g.iter().enumerate() {
                        gb[bidx(bc, i, cols)] += sign * y;
                    }
                });
            }
            Op::Mul { a, b, bc } => {
                let (av, bv) = (val(a).data(), val(b).data());
                let cols = out.cols();
                accumulate(nodes, grads, a, |ga| {
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += y * bv[bidx(bc, i, cols)];
                    }
                });
                accumulate(nodes, grads, b, |gb| {
                    for (i, y) in g.iter().enumerate() {
                        gb[bidx(bc, i, cols)] += y * av[i];
                    }
                });
            }
            Op::Div { a, b, bc } => {
                let (av, bv) = (val(a).data(), val(b).data());
                let cols = out.cols();
                accumulate(nodes, grads, a, |ga| {
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += y / bv[bidx(bc, i, cols)];
                    }
                });
                accumulate(nodes, grads, b, |gb| {
                    for (i, y) in g.iter().enumerate() {
                        let d = bv[bidx(bc, i, cols)];
                        gb[bidx(bc, i, cols)] -= y * av[i] / (d * d);
                    }
                });
            }
            Op::AddScalar { a } => accumulate(nodes, grads, a, |ga| {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            }),
            Op::Scale { a, c } => accumulate(nodes, grads, a, |ga| {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += c * y;
                }
            }),
            Op::Exp { a } => accumulate(nodes, grads, a, |ga| {
                for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * o;
                }
            }),
            Op::Log { a } => {
                let av = val(a).data();
                accumulate(nodes, grads, a, |ga| {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(av) {
                        *x += y / v;
                    }
                })
            }
            Op::Sqrt { a } => accumulate(nodes, grads, a, |ga| {
                for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * 0.5 / o;
                }
            }),
            Op::Relu { a } => {
                let av = val(a).data();
                accumulate(nodes, grads, a, |ga| {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(av) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                })
            }
            Op::Softmax { a, tau } => {
                let c = out.cols();
                accumulate(nodes, grads, a, |ga| {
                    for ((gr, s), dst) in g
                        .chunks_exact(c)
                        .zip(out.data().chunks_exact(c))
                        .zip(ga.chunks_exact_mut(c))
                    {
                        let dot: f64 = gr.iter().zip(s).map(|(x, y)| x * y).sum();
                        for j in 0..c {
                            dst[j] += s[j] * (gr[j] - dot) / tau;
                        }
                    }
                })
            }
            Op::LayerNorm {
                a,
                ref xhat,
                ref inv_std,
            } => {
                let c = out.cols();
                let n = c as f64;
                accumulate(nodes, grads, a, |ga| {
                    for (r, ((gr, xh), dst)) in g
                        .chunks_exact(c)
                        .zip(xhat.chunks_exact(c))
                        .zip(ga.chunks_exact_mut(c))
                        .enumerate()
                    {
                        let sum_g: f64 = gr.iter().sum();
                        let sum_gx: f64 = gr.iter().zip(xh).map(|(x, y)| x * y).sum();
                        for j in 0..c {
                            dst[j] += inv_std[r] / n * (n * gr[j] - sum_g - xh[j] * sum_gx);
                        }
                    }
                })
            }
            Op::SumAll { a } => accumulate(nodes, grads, a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::SumRows { a } => {
                let c = val(a).cols();
                accumulate(nodes, grads, a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i / c];
                    }
                })
            }
            Op::SumCols { a } => {
                let c = val(a).cols();
                accumulate(nodes, grads, a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i % c];
                    }
                })
            }
            Op::GroupMax { a, ref arg } => {
                let c = out.cols();
                accumulate(nodes, grads, a, |ga| {
                    for (i, (&src_row, y)) in arg.iter().zip(g).enumerate() {
                        ga[src_row * c + i % c] += y;
                    }
                })
            }
            Op::RepeatRows { a, group } => {
                let c = out.cols();
                accumulate(nodes, grads, a, |ga| {
                    for (r, gr) in g.chunks_exact(c).enumerate() {
                        let dst = &mut ga[(r / group) * c..(r / group + 1) * c];
                        for (x, y) in dst.iter_mut().zip(gr) {
                            *x += y;
                        }
                    }
                })
            }
            Op::SelectRows { a, ref idx } => {
                let c = out.cols();
                accumulate(nodes, grads, a, |ga| {
                    for (gr, &src) in g.chunks_exact(c).zip(idx) {
                        for (x, y) in ga[src * c..(src + 1) * c].iter_mut().zip(gr) {
                            *x += y;
                        }
                    }
                })
            }
            Op::ConcatRows { ref parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).numel();
                    accumulate(nodes, grads, p, |gp| {
                        for (x, y) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *x += y;
                        }
                    });
                    offset += len;
                }
            }
            Op::ConcatCols { ref parts } => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    accumulate(nodes, grads, p, |gp| {
                        for (dst, src) in gp.chunks_exact_mut(pc).zip(g.chunks_exact(total)) {
                            for (x, y) in dst.iter_mut().zip(&src[offset..offset + pc]) {
                                *x += y;
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceCols { a, start } => {
                let (ac, oc) = (val(a).cols(), out.cols());
                accumulate(nodes, grads, a, |ga| {
                    for (dst, src) in ga.chunks_exact_mut(ac).zip(g.chunks_exact(oc)) {
                        for (x, y) in dst[start..start + oc].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                })
            }
        }
    }
}
