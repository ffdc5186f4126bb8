//! Dense row-major arrays and the products and reshapes the layers are built from.
//!
//! Two layouts carry all data and error arrays: [`Matrix`] (`n × f`, one
//! feature vector per row) and [`Tensor4`] (`n × d × r × r`, images). The
//! maps [`f2d`]/[`f4d`] and their transposes [`f2d_t`]/[`f4d_t`] convert
//! between them with one frozen enumeration: image cell `(s, c, i, j)` goes to
//! flat position `(i * r + j) * n + s` along the long axis and `c` along the
//! depth axis. `im2col` emits its columns in the same order, so a GEMM output
//! folds back with `f4d` and batch norm can normalise images with `f2d_t`.

use std::fmt;

use crate::error::{Error, Result};
use crate::parallel::{self, Execution};

/// A 2-d array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A 1-d array.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

/// A 4-d array laid out as `(sample, depth, row, col)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    d: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("Matrix::new", format!("{rows}x{cols}"), "non-empty"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|x| x * k)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    fn zip_with(&self, op: &'static str, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape_string(), other.shape_string()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Index of the largest entry of row `i`; the first one wins on ties.
    pub fn argmax_row(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn zeros(len: usize) -> Self {
        Vector { data: vec![0.0; len] }
    }

    pub fn filled(len: usize, v: f64) -> Self {
        Vector { data: vec![v; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl Tensor4 {
    pub fn new(n: usize, d: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d * h * w {
            return Err(Error::shape(
                "Tensor4::new",
                format!("{n}x{d}x{h}x{w}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor4 { n, d, h, w, data })
    }

    pub fn zeros(n: usize, d: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            d,
            h,
            w,
            data: vec![0.0; n * d * h * w],
        }
    }

    pub fn from_fn(
        n: usize,
        d: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(n * d * h * w);
        for s in 0..n {
            for c in 0..d {
                for i in 0..h {
                    for j in 0..w {
                        data.push(f(s, c, i, j));
                    }
                }
            }
        }
        Tensor4 { n, d, h, w, data }
    }

    /// `(n, d, rows, cols)`
    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.d, self.h, self.w]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.d
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, s: usize, c: usize, i: usize, j: usize) -> usize {
        ((s * self.d + c) * self.h + i) * self.w + j
    }

    #[inline]
    pub fn get(&self, s: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(s, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, c: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(s, c, i, j);
        self.data[o] = v;
    }

    /// One sample/depth slice as a row-major `h × w` slice.
    pub fn plane(&self, s: usize, c: usize) -> &[f64] {
        let start = self.offset(s, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        self.with_data(self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, k: f64) -> Tensor4 {
        self.map(|x| x * k)
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        if self.dims() != other.dims() {
            return Err(Error::shape("add", self.shape_string(), other.shape_string()));
        }
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    fn with_data(&self, data: Vec<f64>) -> Tensor4 {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor4 {
            n: self.n,
            d: self.d,
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}x{}", self.n, self.d, self.h, self.w)
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl fmt::Display for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.shape_string())
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `a · b` with the default execution policy.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_with(Execution::default(), a, b)
}

/// `a · b`. Each output cell accumulates over the inner index in ascending
/// order starting from zero, regardless of `exec`.
pub fn matmul_with(exec: Execution, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape_string(), b.shape_string()));
    }
    let (inner, m) = (a.cols, b.cols);
    let mut out = vec![0.0; a.rows * m];
    parallel::for_each_chunk_mut(exec, &mut out, m, |i, row| {
        let lhs = &a.data[i * inner..(i + 1) * inner];
        for (k, &x) in lhs.iter().enumerate() {
            let rhs = &b.data[k * m..(k + 1) * m];
            for (o, &y) in row.iter_mut().zip(rhs) {
                *o += x * y;
            }
        }
    });
    Ok(Matrix {
        rows: a.rows,
        cols: m,
        data: out,
    })
}

pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with("hadamard", b, |x, y| x * y)
}

pub fn hadamard4(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.dims() != b.dims() {
        return Err(Error::shape("hadamard", a.shape_string(), b.shape_string()));
    }
    Ok(a.with_data(a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect()))
}

/// Sum of the entries of the Hadamard product.
pub fn frobenius(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("frobenius", a.shape_string(), b.shape_string()));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Row-wise dot products between matching feature vectors.
pub fn feature_dot(a: &Matrix, b: &Matrix) -> Result<Vector> {
    if a.shape() != b.shape() {
        return Err(Error::shape("feature_dot", a.shape_string(), b.shape_string()));
    }
    Ok(Vector::new(
        (0..a.rows)
            .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| x * y).sum())
            .collect(),
    ))
}

/// Adds `b` to every row of `a`.
pub fn broadcast_add_bias(a: &Matrix, b: &Vector) -> Result<Matrix> {
    if b.len() != a.cols {
        return Err(Error::shape("broadcast_add_bias", a.shape_string(), b.len()));
    }
    let mut out = a.clone();
    for row in out.data.chunks_mut(a.cols) {
        for (x, &bias) in row.iter_mut().zip(&b.data) {
            *x += bias;
        }
    }
    Ok(out)
}

/// Adds `b[c]` to every cell of depth slice `c`, across samples and space.
pub fn broadcast_add_bias_4d(a: &Tensor4, b: &Vector) -> Result<Tensor4> {
    if b.len() != a.d {
        return Err(Error::shape("broadcast_add_bias_4d", a.shape_string(), b.len()));
    }
    let plane = a.h * a.w;
    let mut out = a.clone();
    for (idx, chunk) in out.data.chunks_mut(plane).enumerate() {
        let bias = b.data[idx % a.d];
        chunk.iter_mut().for_each(|x| *x += bias);
    }
    Ok(out)
}

/// Sums over samples: the adjoint of [`broadcast_add_bias`].
pub fn contract_bias(delta: &Matrix) -> Vector {
    let mut out = vec![0.0; delta.cols];
    for row in delta.data.chunks(delta.cols) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Vector::new(out)
}

/// Sums over samples and both spatial axes: the adjoint of [`broadcast_add_bias_4d`].
pub fn contract_bias_4d(delta: &Tensor4) -> Vector {
    let mut out = vec![0.0; delta.d];
    for s in 0..delta.n {
        for (c, o) in out.iter_mut().enumerate() {
            for &x in delta.plane(s, c) {
                *o += x;
            }
        }
    }
    Vector::new(out)
}

/// `a · diag(w)`: column `j` scaled by `w[j]`.
pub fn diag_broadcast_mul(a: &Matrix, w: &Vector) -> Result<Matrix> {
    if w.len() != a.cols {
        return Err(Error::shape("diag_broadcast_mul", a.shape_string(), w.len()));
    }
    let mut out = a.clone();
    for row in out.data.chunks_mut(a.cols) {
        for (x, &s) in row.iter_mut().zip(&w.data) {
            *x *= s;
        }
    }
    Ok(out)
}

/// Diagonal of a square matrix.
pub fn diag(a: &Matrix) -> Result<Vector> {
    if a.rows != a.cols {
        return Err(Error::shape("diag", a.shape_string(), "square"));
    }
    Ok(Vector::new((0..a.rows).map(|i| a.get(i, i)).collect()))
}

#[inline]
fn fold_index(n: usize, w: usize, s: usize, i: usize, j: usize) -> usize {
    (i * w + j) * n + s
}

/// `n × d × r × r` to `d × (r·r·n)`.
pub fn f2d(a: &Tensor4) -> Matrix {
    let long = a.h * a.w * a.n;
    let mut out = vec![0.0; a.d * long];
    for s in 0..a.n {
        for c in 0..a.d {
            let plane = a.plane(s, c);
            for i in 0..a.h {
                for j in 0..a.w {
                    out[c * long + fold_index(a.n, a.w, s, i, j)] = plane[i * a.w + j];
                }
            }
        }
    }
    Matrix {
        rows: a.d,
        cols: long,
        data: out,
    }
}

/// Inverse of [`f2d`].
pub fn f4d(m: &Matrix, n: usize, h: usize, w: usize) -> Result<Tensor4> {
    if m.cols != h * w * n {
        return Err(Error::shape("f4d", m.shape_string(), format!("{}x({h}*{w}*{n})", m.rows)));
    }
    let d = m.rows;
    let mut out = Tensor4::zeros(n, d, h, w);
    for s in 0..n {
        for c in 0..d {
            let row = m.row(c);
            for i in 0..h {
                for j in 0..w {
                    out.set(s, c, i, j, row[fold_index(n, w, s, i, j)]);
                }
            }
        }
    }
    Ok(out)
}

/// `n × d × r × r` to `(r·r·n) × d`: one row per (pixel, sample) feature vector.
pub fn f2d_t(a: &Tensor4) -> Matrix {
    let long = a.h * a.w * a.n;
    let mut out = vec![0.0; long * a.d];
    for s in 0..a.n {
        for c in 0..a.d {
            let plane = a.plane(s, c);
            for i in 0..a.h {
                for j in 0..a.w {
                    out[fold_index(a.n, a.w, s, i, j) * a.d + c] = plane[i * a.w + j];
                }
            }
        }
    }
    Matrix {
        rows: long,
        cols: a.d,
        data: out,
    }
}

/// Inverse of [`f2d_t`].
pub fn f4d_t(m: &Matrix, n: usize, d: usize, r: usize) -> Result<Tensor4> {
    if m.rows != r * r * n || m.cols != d {
        return Err(Error::shape("f4d_t", m.shape_string(), format!("({r}*{r}*{n})x{d}")));
    }
    let mut out = Tensor4::zeros(n, d, r, r);
    for s in 0..n {
        for c in 0..d {
            for i in 0..r {
                for j in 0..r {
                    out.set(s, c, i, j, m.data[fold_index(n, r, s, i, j) * d + c]);
                }
            }
        }
    }
    Ok(out)
}
