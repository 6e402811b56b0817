//! Dense GEMM entry points.
//!
//! Operands are described by row and column strides so transposed views can
//! be multiplied without copying.

use super::Precision;

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// The transpose of a row-major `rows × cols` buffer.
    pub fn transposed(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `out += a · b` with `out` row-major `a.rows × b.cols`.
pub(crate) fn gemm_acc(precision: Precision, a: View<'_>, b: View<'_>, out: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.max_offset() < a.data.len() && b.max_offset() < b.data.len());
    match precision {
        Precision::F64 => unsafe {
            // SAFETY: bounds of both strided views and the output were
            // checked above.
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                1.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        },
        Precision::F32 => {
            let a32 = pack_f32(a);
            let b32 = pack_f32(b);
            let mut c32 = vec![0f32; m * n];
            unsafe {
                // SAFETY: packed buffers are dense row-major of the stated sizes.
                matrixmultiply::sgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a32.as_ptr(),
                    k as isize,
                    1,
                    b32.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    c32.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            for (o, c) in out.iter_mut().zip(c32) {
                *o += c as f64;
            }
        }
    }
}

fn pack_f32(v: View<'_>) -> Vec<f32> {
    let mut out = Vec::with_capacity(v.rows * v.cols);
    for i in 0..v.rows {
        for j in 0..v.cols {
            out.push(v.data[i * v.rs + j * v.cs] as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm_acc(
            Precision::F64,
            View::row_major(&a, m, k),
            View::row_major(&b, k, n),
            &mut c,
        );
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_view_reads_columns() {
        // a is 2×3; aᵀ·a is 3×3
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = vec![0.0; 9];
        gemm_acc(
            Precision::F64,
            View::transposed(&a, 2, 3),
            View::row_major(&a, 2, 3),
            &mut c,
        );
        assert_eq!(c, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    fn single_precision_is_close() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut c = vec![0.0; 4];
        gemm_acc(
            Precision::F32,
            View::row_major(&a, 2, 2),
            View::row_major(&a, 2, 2),
            &mut c,
        );
        assert_eq!(c, vec![7.0, 10.0, 15.0, 22.0]);
    }
}
