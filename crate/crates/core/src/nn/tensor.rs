use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix. Every tensor in the network is 2-D: rows are
/// frames, columns are features.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }

    /// Column sums as a `1 × cols` matrix.
    pub fn col_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for r in 0..self.rows {
            out.data.iter_mut().zip(self.row(r)).for_each(|(o, &v)| *o += v);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect() }
    }
}

/// `a · b`
pub fn matmul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions");
    let mut out = Mat::zeros(a.rows, b.cols);
    T::gemm((a.rows, a.cols, b.cols), &a.data, (a.cols, 1), &b.data, (b.cols, 1), &mut out.data, (b.cols, 1));
    out
}

/// `a · bᵀ`
pub fn matmul_nt<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimensions");
    let mut out = Mat::zeros(a.rows, b.rows);
    T::gemm((a.rows, a.cols, b.rows), &a.data, (a.cols, 1), &b.data, (1, b.cols), &mut out.data, (b.rows, 1));
    out
}

/// `aᵀ · b`
pub fn matmul_tn<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dimensions");
    let mut out = Mat::zeros(a.cols, b.cols);
    T::gemm((a.cols, a.rows, b.cols), &a.data, (1, a.cols), &b.data, (b.cols, 1), &mut out.data, (b.cols, 1));
    out
}
