//! Forward rules. Every method evaluates eagerly and records a node.

use super::{gemm_acc, Bcast, Op, Tape, Var, View};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest argument accepted by `exp` before the result overflows `f64`.
pub const MAX_EXP_ARG: f64 = 709.78;

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        return Ok(Bcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Bcast::Scalar);
    }
    let row_like = b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1);
    if row_like && b.cols() == a.cols() {
        return Ok(Bcast::Row);
    }
    if a.rank() == 2 && b.rank() == 2 && b.cols() == 1 && b.rows() == a.rows() {
        return Ok(Bcast::Col);
    }
    Err(Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    })
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok((t.rows(), t.cols()))
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let (m, k) = matrix_dims("matmul", &a)?;
        let (k2, n) = matrix_dims("matmul", &b)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.tape.precision(),
            View::row_major(a.data(), m, k),
            View::row_major(b.data(), k, n),
            &mut out,
        );
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            rg,
        ))
    }

    /// Matrix transpose (rank 2).
    pub fn t(&self) -> Result<Var<'t>> {
        let a = self.value();
        matrix_dims("transpose", &a)?;
        Ok(self.unary(a.transpose(), Op::Transpose { a: self.id }))
    }

    fn binary(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, Bcast) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let bc = broadcast(name, &a, &b)?;
        let cols = a.cols();
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[super::bidx(bc, i, cols)]))
            .collect();
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            Tensor::new(a.shape().to_vec(), data)?,
            make(self.id, other.id, bc),
            rg,
        ))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, |a, b, bc| Op::Add { a, b, bc })
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, |a, b, bc| Op::Sub { a, b, bc })
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, |a, b, bc| Op::Mul { a, b, bc })
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let b = other.value();
        if b.data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary(other, "div", |x, y| x / y, |a, b, bc| Op::Div { a, b, bc })
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(self).expect("same shape")
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x + c), Op::AddScalar { a: self.id })
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x * c), Op::Scale { a: self.id, c })
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        let a = self.value();
        let max = a.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max > MAX_EXP_ARG || max.is_nan() {
            return Err(Error::Domain {
                op: "exp",
                detail: format!("argument {max} exceeds maximum exponent {MAX_EXP_ARG}"),
            });
        }
        Ok(self.unary(a.map(f64::exp), Op::Exp { a: self.id }))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(bad) = a.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("nonpositive argument {bad}"),
            });
        }
        Ok(self.unary(a.map(f64::ln), Op::Log { a: self.id }))
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(bad) = a.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("nonpositive argument {bad}"),
            });
        }
        Ok(self.unary(a.map(f64::sqrt), Op::Sqrt { a: self.id }))
    }

    /// Rectified linear unit; the subgradient at 0 is 0. NaN passes
    /// through so non-finite checks downstream still see it.
    pub fn relu(&self) -> Var<'t> {
        if self.tape.tracks_selections() {
            self.tape
                .record_selection(self.value().data().iter().map(|&x| (x > 0.0) as usize));
        }
        self.unary(self.value().map(|x| if x < 0.0 { 0.0 } else { x }), Op::Relu { a: self.id })
    }

    /// Softmax over the last axis of `x / tau`.
    pub fn softmax(&self, tau: f64) -> Result<Var<'t>> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive, got {tau}"
            )));
        }
        let a = self.value();
        let c = a.cols();
        let mut data = Vec::with_capacity(a.numel());
        for row in a.data().chunks_exact(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut sum = 0.0;
            for &x in row {
                let e = ((x - max) / tau).exp();
                sum += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= sum;
            }
        }
        Ok(self.unary(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::Softmax { a: self.id, tau },
        ))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let n = c as f64;
        let mut xhat = Vec::with_capacity(a.numel());
        let mut inv_std = Vec::with_capacity(a.rows());
        for row in a.data().chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|x| (x - mean) * inv));
        }
        let value = Tensor::new(a.shape().to_vec(), xhat.clone()).expect("same shape");
        self.unary(
            value,
            Op::LayerNorm {
                a: self.id,
                xhat,
                inv_std,
            },
        )
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::SumAll { a: self.id })
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum along each row: `m×n → m×1`.
    pub fn sum_rows(&self) -> Var<'t> {
        let a = self.value();
        let sums = a.row_sums();
        self.unary(
            Tensor::matrix(a.rows(), 1, sums).expect("row count"),
            Op::SumRows { a: self.id },
        )
    }

    /// Sum down each column: `m×n → 1×n`.
    pub fn sum_cols(&self) -> Var<'t> {
        let a = self.value();
        let sums = a.col_sums();
        self.unary(
            Tensor::matrix(1, a.cols(), sums).expect("col count"),
            Op::SumCols { a: self.id },
        )
    }

    /// Column-wise maximum over consecutive blocks of `group` rows:
    /// `(g·group)×n → g×n`. Ties go to the lowest row; a NaN wins so it
    /// is not silently dropped.
    pub fn group_max(&self, group: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = (a.rows(), a.cols());
        if group == 0 || r == 0 || r % group != 0 {
            return Err(Error::Contract(format!(
                "group_max: {r} rows not divisible into groups of {group}"
            )));
        }
        let groups = r / group;
        let mut data = Vec::with_capacity(groups * c);
        let mut arg = Vec::with_capacity(groups * c);
        for gi in 0..groups {
            for j in 0..c {
                let mut best = gi * group;
                for row in gi * group + 1..(gi + 1) * group {
                    let (v, b) = (a.data()[row * c + j], a.data()[best * c + j]);
                    if v > b || (v.is_nan() && !b.is_nan()) {
                        best = row;
                    }
                }
                data.push(a.data()[best * c + j]);
                arg.push(best);
            }
        }
        self.tape.record_selection(arg.iter().copied());
        Ok(self.unary(
            Tensor::matrix(groups, c, data)?,
            Op::GroupMax { a: self.id, arg },
        ))
    }

    /// Column-wise maximum over all rows: `m×n → 1×n`.
    pub fn max_rows(&self) -> Result<Var<'t>> {
        let r = self.rows();
        if r == 0 {
            return Err(Error::Contract("max over zero rows".into()));
        }
        self.group_max(r)
    }

    /// Repeats every row `group` times consecutively.
    pub fn repeat_rows(&self, group: usize) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let mut data = Vec::with_capacity(a.numel() * group);
        for row in a.data().chunks_exact(c) {
            for _ in 0..group {
                data.extend_from_slice(row);
            }
        }
        self.unary(
            Tensor::matrix(a.rows() * group, c, data).expect("sizes"),
            Op::RepeatRows { a: self.id, group },
        )
    }

    /// Gathers rows by index (indices may repeat).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = (a.rows(), a.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Size(format!("row index {i} out of range for {r} rows")));
            }
            data.extend_from_slice(a.row(i));
        }
        Ok(self.unary(
            Tensor::matrix(idx.len(), c, data)?,
            Op::SelectRows {
                a: self.id,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let a = self.value();
        let c = a.cols();
        if start > end || end > c {
            return Err(Error::Size(format!("column slice {start}..{end} of {c}")));
        }
        let mut data = Vec::with_capacity(a.rows() * (end - start));
        for row in a.data().chunks_exact(c.max(1)) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(self.unary(
            Tensor::matrix(a.rows(), end - start, data)?,
            Op::SliceCols { a: self.id, start },
        ))
    }
}

impl Tape {
    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero parts".into()))?;
        let c = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for p in parts {
            first.same_tape(p);
            let v = p.value();
            if v.cols() != c {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: first.shape(),
                    right: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
            rg |= p.requires_grad();
        }
        Ok(self.push(
            Tensor::matrix(rows, c, data)?,
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            rg,
        ))
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero parts".into()))?;
        let r = first.rows();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p);
            if v.rows() != r {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: first.shape(),
                    right: v.shape().to_vec(),
                });
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for v in &values {
                data.extend_from_slice(v.row(i));
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(
            Tensor::matrix(r, total, data)?,
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            rg,
        ))
    }
}
