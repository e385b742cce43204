//! Minimal dense linear algebra and activation kernels.
//!
//! Everything is 64-bit: the gradient checks in the test suite compare
//! analytic derivatives against central finite differences at relative
//! error 1e-4, which is out of reach in single precision. All operations
//! are pure functions on immutable inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Relative off-diagonal tolerance for the Jacobi eigensolver.
const JACOBI_TOL: f64 = 1e-12;
/// Relative change tolerance for spectral-norm power iteration.
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input (test/fixture helper).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Matrix::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        Vector::from((0..self.rows).map(|i| self.get(i, j)).collect::<Vec<_>>())
    }

    /// result[i] = sum_k A[i,k] v[k]
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::DimMismatch(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.apply(v))
    }

    /// Unchecked matvec for internal hot paths where shapes are invariant.
    #[inline]
    pub(crate) fn apply(&self, v: &Vector) -> Vector {
        debug_assert_eq!(self.cols, v.len());
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, x) in row.iter().zip(v.as_slice()) {
                acc += a * x;
            }
            out[i] = acc;
        }
        Vector::from(out)
    }

    /// result[j] = sum_i A[i,j] v[i], i.e. A^T v without forming A^T.
    pub(crate) fn apply_transpose(&self, v: &Vector) -> Vector {
        debug_assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let vi = v[i];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        Vector::from(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// rank-1 update: self += scale * u v^T
    pub(crate) fn add_outer(&mut self, u: &Vector, v: &Vector, scale: f64) {
        debug_assert_eq!(self.rows, u.len());
        debug_assert_eq!(self.cols, v.len());
        for i in 0..self.rows {
            let ui = scale * u[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, x) in row.iter_mut().zip(v.as_slice()) {
                *r += ui * x;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// self += s * other (shape-congruent).
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest singular value via power iteration on A^T A.
    ///
    /// Starts from a fixed seeded vector so repeated calls are identical.
    /// Converges when the Rayleigh quotient changes by a relative factor
    /// below 1e-10; after 1000 iterations the best estimate is returned
    /// inside the error.
    pub fn spectral_norm(&self) -> Result<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Ok(0.0);
        }
        let gram = self
            .transpose()
            .matmul(self)
            .expect("square by construction");
        let n = gram.rows();
        let mut rng = SplitMix64::new(0x5eed_0001);
        let mut v = Vector::from(
            (0..n)
                .map(|_| rng.next_range(-1.0, 1.0))
                .collect::<Vec<_>>(),
        );
        let norm = v.euclidean_norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.scale(1.0 / norm);
        let mut lambda = 0.0f64;
        for _ in 0..POWER_MAX_ITER {
            let w = gram.apply(&v);
            let wnorm = w.euclidean_norm();
            if wnorm == 0.0 {
                return Ok(0.0);
            }
            let next = v.dot(&w); // Rayleigh quotient, v has unit norm
            v = w;
            v.scale(1.0 / wnorm);
            if (next - lambda).abs() <= POWER_TOL * next.abs().max(1e-300) {
                return Ok(next.max(0.0).sqrt());
            }
            lambda = next;
        }
        Err(Error::PowerIteration {
            estimate: lambda.max(0.0).sqrt(),
        })
    }
}

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector { data: vec![0.0; n] }
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

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector::from(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector::from(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        )
    }

    pub fn hadamard(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector::from(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect::<Vec<_>>(),
        )
    }

    pub fn add_assign(&mut self, other: &Vector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector::from(self.data.iter().map(|&x| f(x)).collect::<Vec<_>>())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.data.len() {
            if self.data[i] > self.data[best] {
                best = i;
            }
        }
        best
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Elementwise activation functions plus softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Softmax,
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(&self, v: &Vector) -> Vector {
        match self {
            Activation::Sigmoid => v.map(sigmoid),
            Activation::Tanh => v.map(f64::tanh),
            Activation::Identity => v.clone(),
            Activation::Softmax => {
                // Max shift keeps exp from overflowing.
                let max = v
                    .as_slice()
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = v.as_slice().iter().map(|&x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                Vector::from(exps.into_iter().map(|e| e / sum).collect::<Vec<_>>())
            }
        }
    }

    /// Elementwise derivative d out_i / d in_i evaluated at pre-activation `v`.
    ///
    /// For softmax this is the diagonal of the Jacobian, s_i (1 - s_i).
    pub fn derivative(&self, v: &Vector) -> Vector {
        match self {
            Activation::Sigmoid => v.map(|x| {
                let s = sigmoid(x);
                s * (1.0 - s)
            }),
            Activation::Tanh => v.map(|x| {
                let t = x.tanh();
                1.0 - t * t
            }),
            Activation::Identity => v.map(|_| 1.0),
            Activation::Softmax => {
                let s = self.apply(v);
                s.map(|si| si * (1.0 - si))
            }
        }
    }

    /// Vector-Jacobian product: given the activation output `out` for some
    /// pre-activation, pulls `grad_out` back to the pre-activation. Exact for
    /// softmax (full Jacobian), diagonal for the elementwise activations.
    pub(crate) fn vjp(&self, out: &Vector, grad_out: &Vector) -> Vector {
        match self {
            Activation::Sigmoid => Vector::from(
                out.as_slice()
                    .iter()
                    .zip(grad_out.as_slice())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect::<Vec<_>>(),
            ),
            Activation::Tanh => Vector::from(
                out.as_slice()
                    .iter()
                    .zip(grad_out.as_slice())
                    .map(|(&t, &g)| g * (1.0 - t * t))
                    .collect::<Vec<_>>(),
            ),
            Activation::Identity => grad_out.clone(),
            Activation::Softmax => {
                // (diag(s) - s s^T) g = s o (g - <s, g>)
                let sg = out.dot(grad_out);
                Vector::from(
                    out.as_slice()
                        .iter()
                        .zip(grad_out.as_slice())
                        .map(|(&s, &g)| s * (g - sg))
                        .collect::<Vec<_>>(),
                )
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation '{other}'"
            ))),
        }
    }
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// The input is symmetrized by averaging before the sweeps. Returns the
/// eigenvalues sorted descending and the matching orthonormal eigenvectors
/// as columns. Eigenvector signs are canonicalized so the entry of largest
/// magnitude is positive.
pub fn sym_eigen(s: &Matrix) -> Result<(Vector, Matrix)> {
    if s.rows() != s.cols() {
        return Err(Error::NotSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    let n = s.rows();
    if n == 0 {
        return Ok((Vector::zeros(0), Matrix::zeros(0, 0)));
    }

    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, 0.5 * (s.get(i, j) + s.get(j, i)));
        }
    }
    let mut v = Matrix::identity(n);
    let tol = JACOBI_TOL * a.frobenius_norm().max(1.0);

    let off = |a: &Matrix| -> f64 {
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += a.get(i, j) * a.get(i, j);
                }
            }
        }
        sum.sqrt()
    };

    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;

                // Rotate rows/columns p and q of A.
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                // Accumulate the rotation in V.
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let evs: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    order.sort_by(|&x, &y| evs[y].partial_cmp(&evs[x]).expect("finite eigenvalues"));

    let mut eigenvalues = Vector::zeros(n);
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = evs[src];
        let mut col: Vec<f64> = (0..n).map(|k| v.get(k, src)).collect();
        let mut lead = 0;
        for (k, x) in col.iter().enumerate() {
            if x.abs() > col[lead].abs() {
                lead = k;
            }
        }
        if col[lead] < 0.0 {
            for x in &mut col {
                *x = -*x;
            }
        }
        for (k, x) in col.iter().enumerate() {
            eigenvectors.set(k, dst, *x);
        }
    }
    Ok((eigenvalues, eigenvectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matvec_identity() {
        let a = Matrix::identity(2);
        let v = Vector::from(vec![3.0, 4.0]);
        assert_eq!(a.matvec(&v).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn matvec_zero_annihilates() {
        let a = Matrix::zeros(2, 2);
        let v = Vector::from(vec![1.0, 1.0]);
        assert_eq!(a.matvec(&v).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn matvec_hand_computed() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let v = Vector::from(vec![1.0, 1.0]);
        assert_eq!(a.matvec(&v).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_dimension_mismatch_is_error() {
        let a = Matrix::zeros(2, 3);
        let v = Vector::from(vec![1.0, 2.0]);
        assert!(matches!(a.matvec(&v), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn apply_transpose_matches_explicit_transpose() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, -1.0], &[0.5, -3.0, 4.0]]);
        let v = Vector::from(vec![2.0, -1.0]);
        let direct = a.apply_transpose(&v);
        let explicit = a.transpose().apply(&v);
        assert_eq!(direct, explicit);
    }

    #[test]
    fn sigmoid_at_zero() {
        let out = Activation::Sigmoid.apply(&Vector::from(vec![0.0]));
        assert_eq!(out[0], 0.5);
    }

    #[test]
    fn tanh_at_zero() {
        let out = Activation::Tanh.apply(&Vector::from(vec![0.0]));
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn softmax_uniform_case() {
        let out = Activation::Softmax.apply(&Vector::from(vec![0.0, 0.0]));
        assert_eq!(out.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_sums_to_one_under_extreme_inputs() {
        let out = Activation::Softmax.apply(&Vector::from(vec![1e4, -1e4, 500.0]));
        approx(out.as_slice().iter().sum::<f64>(), 1.0, 1e-12);
        assert!(out.as_slice().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn sigmoid_range_and_tanh_range() {
        // Kept away from the saturation region where f64 rounds to 1.
        let v = Vector::from(vec![-15.0, -1.0, 0.3, 15.0]);
        let s = Activation::Sigmoid.apply(&v);
        assert!(s.as_slice().iter().all(|&x| x > 0.0 && x < 1.0));
        let t = Activation::Tanh.apply(&v);
        assert!(t.as_slice().iter().all(|&x| x > -1.0 && x < 1.0));
    }

    #[test]
    fn spectral_norm_identity() {
        assert_eq!(Matrix::identity(3).spectral_norm().unwrap(), 1.0);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let a = Matrix::diag(&[2.0, 1.0]);
        approx(a.spectral_norm().unwrap(), 2.0, 1e-9);
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        assert_eq!(Matrix::zeros(3, 2).spectral_norm().unwrap(), 0.0);
    }

    #[test]
    fn frobenius_identity() {
        approx(Matrix::identity(3).frobenius_norm(), 3.0f64.sqrt(), 1e-15);
    }

    #[test]
    fn sym_eigen_diagonal() {
        let (vals, vecs) = sym_eigen(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(vals.as_slice(), &[3.0, 1.0]);
        approx(vecs.get(0, 0).abs(), 1.0, 1e-12);
        approx(vecs.get(1, 1).abs(), 1.0, 1e-12);
    }

    #[test]
    fn sym_eigen_known_two_by_two() {
        let s = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let (vals, vecs) = sym_eigen(&s).unwrap();
        approx(vals[0], 1.0, 1e-12);
        approx(vals[1], -1.0, 1e-12);
        let r = 0.5f64.sqrt();
        approx(vecs.get(0, 0).abs(), r, 1e-10);
        approx(vecs.get(1, 0).abs(), r, 1e-10);
    }

    #[test]
    fn sym_eigen_non_square_is_error() {
        assert!(matches!(
            sym_eigen(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
    }

    // Reconstruction oracle: rebuild S as V diag(lambda) V^T by direct
    // multiplication and compare entrywise.
    #[test]
    fn sym_eigen_reconstructs_random_symmetric() {
        let n = 6;
        let mut rng = SplitMix64::new(99);
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.next_range(-2.0, 2.0);
                s.set(i, j, x);
                s.set(j, i, x);
            }
        }
        let (vals, vecs) = sym_eigen(&s).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vecs.get(i, k) * vals[k] * vecs.get(j, k);
                }
                approx(acc, s.get(i, j), 1e-8);
            }
        }
        // Orthonormality: ||V^T V - I||_F < 1e-8
        let vtv = vecs.transpose().matmul(&vecs).unwrap();
        let mut diff = vtv;
        diff.axpy(-1.0, &Matrix::identity(n));
        assert!(diff.frobenius_norm() < 1e-8);
        // Descending order
        for w in vals.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    proptest! {
        // Forward-difference check of every exposed activation derivative.
        #[test]
        fn activation_derivative_matches_finite_difference(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..6),
            which in 0usize..4,
        ) {
            let act = [Activation::Sigmoid, Activation::Tanh, Activation::Softmax, Activation::Identity][which];
            let v = Vector::from(xs);
            let eps = 1e-6;
            let deriv = act.derivative(&v);
            let base = act.apply(&v);
            for i in 0..v.len() {
                let mut bumped = v.clone();
                bumped[i] += eps;
                let fd = (act.apply(&bumped)[i] - base[i]) / eps;
                prop_assert!((fd - deriv[i]).abs() < 1e-6, "i={} fd={} d={}", i, fd, deriv[i]);
            }
        }

        #[test]
        fn spectral_bounded_by_frobenius(
            entries in proptest::collection::vec(-5.0f64..5.0, 12),
        ) {
            let a = Matrix::from_vec(3, 4, entries).unwrap();
            if let Ok(spec) = a.spectral_norm() {
                prop_assert!(spec <= a.frobenius_norm() + 1e-9);
            }
        }

        #[test]
        fn softmax_vjp_matches_full_jacobian(
            xs in proptest::collection::vec(-2.0f64..2.0, 2..5),
            gs in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let v = Vector::from(xs);
            let g = Vector::from(gs[..v.len()].to_vec());
            let s = Activation::Softmax.apply(&v);
            let got = Activation::Softmax.vjp(&s, &g);
            for i in 0..v.len() {
                let mut expect = 0.0;
                for j in 0..v.len() {
                    let jac = if i == j { s[i] * (1.0 - s[i]) } else { -s[i] * s[j] };
                    expect += jac * g[j];
                }
                prop_assert!((got[i] - expect).abs() < 1e-12);
            }
        }
    }
}
