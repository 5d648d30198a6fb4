//! Small dense kernels shared by the statistics, parametrization and
//! optimizer modules. Every reduction runs in index order so results are
//! reproducible bit-for-bit.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y`
    pub fn matvec_transposed(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            axpy(yi, self.row(i), &mut out);
        }
        out
    }

    /// Column means over rows.
    pub fn column_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            axpy(1.0, self.row(i), &mut out);
        }
        let n = self.rows as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// In-place Cholesky factorization of a symmetric matrix. Only the lower
/// triangle of `a` is read; on success `a` holds `L` with zeros above the
/// diagonal.
pub fn cholesky_in_place(a: &mut Matrix) -> Result<()> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Shape(format!(
            "cholesky needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    for j in 0..n {
        let row_j = &mut a.data[j * n..(j + 1) * n];
        let diag = row_j[j] - dot(&row_j[..j], &row_j[..j]);
        if !(diag > 0.0 && diag.is_finite()) {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        row_j[j] = ljj;
        row_j[j + 1..].fill(0.0);
        let (upper, lower) = a.data.split_at_mut((j + 1) * n);
        let prefix = &upper[j * n..j * n + j];
        for row_i in lower.chunks_exact_mut(n) {
            let s = row_i[j] - dot(&row_i[..j], prefix);
            row_i[j] = s / ljj;
        }
    }
    Ok(())
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = vec![0.0; n];
    for i in 0..n {
        let row = l.row(i);
        let s = b[i] - dot(&row[..i], &x[..i]);
        x[i] = s / row[i];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transposed(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        x[i] /= l.get(i, i);
        let xi = x[i];
        let row = l.row(i);
        for (xk, lik) in x[..i].iter_mut().zip(&row[..i]) {
            *xk -= lik * xi;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_of_known_matrix() {
        // [[4,2],[2,3]] = L Lᵀ with L = [[2,0],[1,√2]]
        let mut a = Matrix::from_vec(2, 2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        cholesky_in_place(&mut a).unwrap();
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.get(1, 0), 1.0);
        assert!((a.get(1, 1) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            cholesky_in_place(&mut a),
            Err(Error::NotPositiveDefinite { pivot: 1 })
        ));
    }

    #[test]
    fn triangular_solves_invert_each_other() {
        let l = Matrix::from_vec(3, 3, vec![2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 1.5]).unwrap();
        let b = [1.0, -2.0, 0.25];
        let x = solve_lower(&l, &b);
        let back = l.matvec(&x);
        for (p, q) in back.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
        let y = solve_lower_transposed(&l, &b);
        let lt_y = l.matvec_transposed(&y);
        for (p, q) in lt_y.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
