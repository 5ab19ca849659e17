use std::fmt;

use super::Real;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape {rows}x{cols} does not match {} values", data.len());
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * other`. Zero coefficients of `self` are skipped, so a zero
    /// weight never reads the corresponding row of `other`.
    pub fn matmul(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.rows, "matmul {:?} x {:?}", self.shape(), other.shape());
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.cols, "matmul_t {:?} x {:?}^T", self.shape(), other.shape());
        Mat::from_fn(self.rows, other.rows, |i, j| {
            self.row(i).iter().zip(other.row(j)).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        })
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.rows, other.rows, "t_matmul {:?}^T x {:?}", self.shape(), other.shape());
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.shape(), other.shape());
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Mat<T> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Mat<T>, f: impl Fn(T, T) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Mat<T> {
        assert!(start + len <= self.rows);
        Mat::from_vec(len, self.cols, self.data[start * self.cols..(start + len) * self.cols].to_vec())
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Mat<T> {
        assert!(start + len <= self.cols);
        Mat::from_fn(self.rows, len, |r, c| self.get(r, start + c))
    }

    pub fn concat_rows(parts: &[&Mat<T>]) -> Mat<T> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            assert_eq!(m.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Mat { rows, cols, data }
    }

    pub fn concat_cols(parts: &[&Mat<T>]) -> Mat<T> {
        let rows = parts.first().map_or(0, |m| m.rows);
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for m in parts {
                assert_eq!(m.rows, rows, "concat_cols row mismatch");
                out.row_mut(r)[c0..c0 + m.cols].copy_from_slice(m.row(r));
                c0 += m.cols;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Mat<T>) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from(x).expect("finite cast")).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let b = Mat::from_vec(3, 2, vec![2.0, 1.0, 0.0, -1.0, 4.0, 2.0]);
        let ab = a.matmul(&b);
        assert_eq!(ab.data(), &[2.0, -1.0, 10.0, 4.5]);
        let bt = Mat::from_fn(2, 3, |r, c| b.get(c, r));
        assert_eq!(a.matmul_t(&bt), ab);
        let at = Mat::from_fn(3, 2, |r, c| a.get(c, r));
        assert_eq!(at.t_matmul(&b), ab);
    }

    #[test]
    fn slicing_and_concat() {
        let a = Mat::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let top = a.slice_rows(0, 1);
        let rest = a.slice_rows(1, 2);
        assert_eq!(Mat::concat_rows(&[&top, &rest]), a);
        let left = a.slice_cols(0, 3);
        let right = a.slice_cols(3, 1);
        assert_eq!(Mat::concat_cols(&[&left, &right]), a);
    }
}
