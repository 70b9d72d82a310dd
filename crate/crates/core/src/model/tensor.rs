#![allow(clippy::needless_range_loop)]

//! Minimal row-major matrix type and the handful of matmul variants the
//! model needs. Loops are ordered for cache friendliness; sizes are desk
//! scale so nothing fancier is warranted.

use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(F::zero());
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// out = a (m x k) * b (k x n)
pub fn matmul<F: Scalar>(a: &Mat<F>, b: &Mat<F>, out: &mut Mat<F>) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, b.cols);
    out.fill_zero();
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (l, &a_il) in a_row.iter().enumerate() {
            let b_row = b.row(l);
            for j in 0..b.cols {
                out_row[j] += a_il * b_row[j];
            }
        }
    }
}

/// out = a (m x k) * b^T (b is n x k)
pub fn matmul_transb<F: Scalar>(a: &Mat<F>, b: &Mat<F>, out: &mut Mat<F>) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.rows..(i + 1) * b.rows];
        for j in 0..b.rows {
            out_row[j] = dot(a_row, b.row(j));
        }
    }
}

/// out += a^T (a is m x k) * b (m x n), producing k x n
pub fn matmul_transa_acc<F: Scalar>(a: &Mat<F>, b: &Mat<F>, out: &mut Mat<F>) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(out.rows, a.cols);
    debug_assert_eq!(out.cols, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let b_row = b.row(i);
        for (l, &a_il) in a_row.iter().enumerate() {
            let out_row = &mut out.data[l * b.cols..(l + 1) * b.cols];
            for j in 0..b.cols {
                out_row[j] += a_il * b_row[j];
            }
        }
    }
}

/// y = x * w + bias broadcast over rows
pub fn linear<F: Scalar>(x: &Mat<F>, w: &Mat<F>, bias: &[F], out: &mut Mat<F>) {
    matmul(x, w, out);
    for i in 0..out.rows {
        let row = out.row_mut(i);
        for (j, &b) in bias.iter().enumerate() {
            row[j] += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Mat<f64> {
        Mat {
            rows,
            cols,
            data: v.to_vec(),
        }
    }

    #[test]
    fn matmul_small() {
        let a = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = mat(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let mut out = Mat::zeros(2, 2);
        matmul(&a, &b, &mut out);
        assert_eq!(out.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transb_matches_manual_transpose() {
        let a = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bt = mat(2, 3, &[7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        let mut out = Mat::zeros(2, 2);
        matmul_transb(&a, &bt, &mut out);
        assert_eq!(out.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transa_accumulates() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let mut out = Mat::zeros(2, 2);
        matmul_transa_acc(&a, &b, &mut out);
        // a^T * b = [[1,3],[2,4]] * [[5,6],[7,8]] = [[26,30],[38,44]]
        assert_eq!(out.data, vec![26.0, 30.0, 38.0, 44.0]);
        matmul_transa_acc(&a, &b, &mut out);
        assert_eq!(out.data, vec![52.0, 60.0, 76.0, 88.0]);
    }

    #[test]
    fn linear_adds_bias() {
        let x = mat(1, 2, &[1.0, 1.0]);
        let w = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut out = Mat::zeros(1, 2);
        linear(&x, &w, &[10.0, 20.0], &mut out);
        assert_eq!(out.data, vec![11.0, 21.0]);
    }
}
