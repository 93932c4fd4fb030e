//! Small dense row-major matrices.
//!
//! Sizes in this crate are desk scale (tens of rows), so everything here is
//! straightforward O(n^3) code with partial pivoting where a solve is needed.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diagonal(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul inner dimension", self.cols, other.rows));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::dim("matvec", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self^T v` without materialising the transpose.
    pub fn tr_matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::dim("tr_matvec", self.rows, v.len()));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "elementwise op",
                self.rows * self.cols,
                other.rows * other.cols,
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)]) * half
        })
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Solves `self * X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::dim("solve: square matrix", self.rows, self.cols));
        }
        if rhs.rows != self.rows {
            return Err(Error::dim("solve: right-hand side rows", self.rows, rhs.rows));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut b = rhs.clone();
        let scale = a.max_abs().max(T::min_positive_value());
        let tiny = T::epsilon() * scale * T::lit(n.max(1) as f64);
        for col in 0..n {
            let (piv, pmax) = (col..n)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((col, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= tiny {
                return Err(Error::Singular(format!(
                    "pivot {col} of {n} is {}",
                    pmax.as_f64()
                )));
            }
            if piv != col {
                a.swap_rows(piv, col);
                b.swap_rows(piv, col);
            }
            let d = a[(col, col)];
            for r in (col + 1)..n {
                let f = a[(r, col)] / d;
                if f == T::zero() {
                    continue;
                }
                for c in col..n {
                    let v = a[(col, c)];
                    a[(r, c)] -= f * v;
                }
                for c in 0..b.cols {
                    let v = b[(col, c)];
                    b[(r, c)] -= f * v;
                }
            }
        }
        for c in 0..b.cols {
            for r in (0..n).rev() {
                let mut acc = b[(r, c)];
                for k in (r + 1)..n {
                    acc -= a[(r, k)] * b[(k, c)];
                }
                b[(r, c)] = acc / a[(r, r)];
            }
        }
        Ok(b)
    }

    /// Numerical rank by Gaussian elimination with partial pivoting; pivots
    /// at or below `rel_tol * max_abs` count as zero.
    pub fn rank(&self, rel_tol: T) -> usize {
        let mut a = self.clone();
        let tiny = rel_tol * a.max_abs();
        let mut rank = 0;
        for col in 0..a.cols {
            if rank == a.rows {
                break;
            }
            let (piv, pmax) = (rank..a.rows)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((rank, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= tiny {
                continue;
            }
            a.swap_rows(piv, rank);
            for r in (rank + 1)..a.rows {
                let f = a[(r, col)] / a[(rank, col)];
                for c in col..a.cols {
                    let v = a[(rank, c)];
                    a[(r, c)] -= f * v;
                }
            }
            rank += 1;
        }
        rank
    }

    pub fn solve_vec(&self, rhs: &[T]) -> Result<Vec<T>> {
        let b = Self::from_vec(rhs.len(), 1, rhs.to_vec())?;
        Ok(self.solve(&b)?.into_vec())
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn outer<T: Scalar>(a: &[T], b: &[T]) -> Matrix<T> {
    Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
}

/// Sample covariance (divisor `n`) of row vectors around their mean.
pub fn covariance<T: Scalar>(rows: &[Vec<T>]) -> Matrix<T> {
    let d = rows.first().map_or(0, Vec::len);
    let n = T::lit(rows.len().max(1) as f64);
    let mean: Vec<T> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<T>() / n)
        .collect();
    let mut cov = Matrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    cov.scale(T::one() / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let a: Matrix<f64> = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -1.0],
            vec![0.0, 2.0, 5.0],
        ])
        .unwrap();
        let x = vec![1.0, -2.0, 0.25];
        let b = a.matvec(&x).unwrap();
        let got = a.solve_vec(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a: Matrix<f64> = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(a.inverse(), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_times_matrix_is_identity_f32() {
        let a: Matrix<f32> = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let p = a.matmul(&a.inverse().unwrap()).unwrap();
        assert!(p.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let a: Matrix<f64> = outer(&[1.0, 2.0, 3.0], &[0.5, -1.0, 4.0]);
        assert_eq!(a.rank(1e-10), 1);
        assert_eq!(Matrix::<f64>::identity(3).rank(1e-10), 3);
        assert_eq!(Matrix::<f64>::zeros(2, 2).rank(1e-10), 0);
    }

    #[test]
    fn tr_matvec_matches_transpose() {
        let a = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        let v = [0.5, -1.0, 2.0];
        assert_eq!(a.tr_matvec(&v).unwrap(), a.transpose().matvec(&v).unwrap());
    }
}
