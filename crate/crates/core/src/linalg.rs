//! Dense real linear algebra for EDMD.
//!
//! [`Matrix`] is a row-major `f64` matrix. The SVD is a one-sided Jacobi
//! iteration applied to the triangular factor of a Householder QR, which keeps
//! singular vectors orthonormal to working precision even for rank-deficient
//! inputs. [`lstsq_k`] solves `K = Φ_y · Φ_x⁺` through a streaming QR of the
//! stacked snapshot matrices, so the lifted data never has to be held in memory
//! all at once (see [`LstsqAccumulator`]).

use std::ops::{Index, IndexMut, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when none is given.
pub const DEFAULT_RCOND: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
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
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "matrix entry ({}, {}) is not finite",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    /// Builds a matrix whose `j`-th column is `columns[j]`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("columns of unequal length".into()));
        }
        let mut m = Matrix::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Rows `range` of `self`, all columns.
    pub fn select_rows(&self, range: Range<usize>) -> Matrix {
        Matrix {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    /// Columns `range` of `self`, all rows.
    pub fn select_columns(&self, range: Range<usize>) -> Matrix {
        let width = range.len();
        Matrix::from_fn(self.rows, width, |i, j| self[(i, range.start + j)])
    }

    /// Stacks `top` over `bottom`.
    pub fn vstack(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
        if top.cols != bottom.cols {
            return Err(Error::Shape(format!(
                "cannot stack {}-column matrix over {}-column matrix",
                top.cols, bottom.cols
            )));
        }
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }

    /// Concatenates matrices side by side.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::Shape("hstack of matrices with unequal row counts".into()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            let dst = out.row_mut(i);
            for m in parts {
                dst[offset..offset + m.cols].copy_from_slice(m.row(i));
                offset += m.cols;
            }
        }
        Ok(out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in o_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply transpose of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin singular value decomposition `A = U · diag(σ) · Vᵀ`.
///
/// With `k = min(rows, cols)`, `u` is `rows×k`, `vt` is `k×cols` and `sigma`
/// holds `k` nonnegative values in nonincreasing order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numerical("svd input contains non-finite entries".into()));
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        });
    }
    svd_tall(a)
}

/// SVD of a matrix with `rows >= cols`.
fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(Svd {
            u: Matrix::zeros(m, 0),
            sigma: Vec::new(),
            vt: Matrix::zeros(0, 0),
        });
    }
    let qr = HouseholderQr::new(columns_of(a));
    let r = qr.r_columns();
    let (u_r, sigma, v) = jacobi_svd_square(r)?;
    // U = Q · U_R, with Q applied implicitly to each padded column of U_R.
    let mut u = Matrix::zeros(m, n);
    for (j, col) in u_r.into_iter().enumerate() {
        let mut full = col;
        full.resize(m, 0.0);
        qr.apply_q(&mut full);
        u.set_column(j, &full);
    }
    let mut vt = Matrix::zeros(n, n);
    for (j, col) in v.iter().enumerate() {
        for (i, val) in col.iter().enumerate() {
            vt[(j, i)] = *val;
        }
    }
    Ok(Svd { u, sigma, vt })
}

fn columns_of(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.cols()).map(|j| a.column(j)).collect()
}

/// One-sided Jacobi on a square matrix given by columns.
///
/// Returns `(U columns, σ, V columns)` sorted by decreasing σ.
#[allow(clippy::type_complexity)]
fn jacobi_svd_square(mut w: Vec<Vec<f64>>) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let n = w.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (n as f64).max(1.0);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                rotate_pair(&mut w, i, j, c, s);
                rotate_pair(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let mut u_cols = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &k) in order.iter().enumerate() {
        let s = norms[k];
        sigma.push(s);
        v_cols.push(v[k].clone());
        if s > f64::MIN_POSITIVE * 1e16 {
            u_cols.push(w[k].iter().map(|x| x / s).collect::<Vec<_>>());
        } else {
            u_cols.push(vec![0.0; n]);
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &missing);
    Ok((u_cols, sigma, v_cols))
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(j);
    let (ci, cj) = (&mut left[i], &mut right[0]);
    for (a, b) in ci.iter_mut().zip(cj.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to all
/// other columns (Gram–Schmidt over the standard basis, applied twice).
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    let dim = cols.first().map_or(0, Vec::len);
    let mut candidate = 0;
    for &slot in missing {
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == slot || (missing.contains(&k) && norm(other) == 0.0) {
                        continue;
                    }
                    let p = dot(&e, other);
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= p * o;
                    }
                }
            }
            let len = norm(&e);
            if len > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / len).collect();
                break;
            }
        }
    }
}

/// Householder QR of a matrix stored by columns.
struct HouseholderQr {
    rows: usize,
    cols: Vec<Vec<f64>>,
    reflectors: Vec<(Vec<f64>, f64)>,
    diag: Vec<f64>,
}

impl HouseholderQr {
    fn new(mut cols: Vec<Vec<f64>>) -> Self {
        let rows = cols.first().map_or(0, Vec::len);
        let steps = rows.min(cols.len());
        let mut reflectors = Vec::with_capacity(steps);
        let mut diag = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut v = cols[k][k..].to_vec();
            let x0 = v[0];
            let len = norm(&v);
            let alpha = if x0 > 0.0 { -len } else { len };
            v[0] -= alpha;
            let vv = dot(&v, &v);
            let beta = if vv > 0.0 { 2.0 / vv } else { 0.0 };
            for col in cols.iter_mut().skip(k + 1) {
                let seg = &mut col[k..];
                let s = beta * dot(&v, seg);
                if s != 0.0 {
                    for (c, vi) in seg.iter_mut().zip(&v) {
                        *c -= s * vi;
                    }
                }
            }
            diag.push(if beta == 0.0 { x0 } else { alpha });
            reflectors.push((v, beta));
        }
        HouseholderQr {
            rows,
            cols,
            reflectors,
            diag,
        }
    }

    /// Columns of the `steps×n` upper-trapezoidal factor R.
    fn r_columns(&self) -> Vec<Vec<f64>> {
        let steps = self.diag.len();
        self.cols
            .iter()
            .enumerate()
            .map(|(j, col)| {
                (0..steps)
                    .map(|i| match i.cmp(&j) {
                        std::cmp::Ordering::Less => col[i],
                        std::cmp::Ordering::Equal => self.diag[i],
                        std::cmp::Ordering::Greater => 0.0,
                    })
                    .collect()
            })
            .collect()
    }

    /// Overwrites `y` (length `rows`) with `Q·y`.
    fn apply_q(&self, y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            let seg = &mut y[k..];
            let s = beta * dot(v, seg);
            if s != 0.0 {
                for (c, vi) in seg.iter_mut().zip(v) {
                    *c -= s * vi;
                }
            }
        }
    }
}

/// Moore–Penrose pseudoinverse; singular values below `rcond·σ_max` are
/// treated as zero.
pub fn pinv(a: &Matrix, rcond: f64) -> Result<Matrix> {
    if !(rcond > 0.0 && rcond < 1.0) {
        return Err(Error::Domain(format!("rcond must lie in (0, 1), got {rcond}")));
    }
    let dec = svd(a)?;
    let smax = dec.sigma.first().copied().unwrap_or(0.0);
    let cutoff = rcond * smax;
    let (m, n) = a.shape();
    let mut out = Matrix::zeros(n, m);
    for (k, &s) in dec.sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..n {
            let vik = dec.vt[(k, i)] * inv;
            if vik == 0.0 {
                continue;
            }
            let row = out.row_mut(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o += vik * dec.u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Least-squares Koopman matrix `K = Φ_y · Φ_x⁺` for column-aligned snapshots.
pub fn lstsq_k(phi_x: &Matrix, phi_y: &Matrix, rcond: f64) -> Result<Matrix> {
    let mut acc = LstsqAccumulator::new(phi_x.rows(), phi_y.rows());
    acc.push(phi_x, phi_y)?;
    acc.solve(rcond)
}

/// Streaming solver for `K = Φ_y · Φ_x⁺`.
///
/// Snapshot columns are pushed in blocks; only the triangular factor of the
/// QR decomposition of `[Φ_xᵀ | Φ_yᵀ]` is retained. With `Φ_xᵀ = Q₁R₁₁` and
/// `Φ_yᵀ = Q₁R₁₂ + Q₂R₂₂`, the solution is `K = R₁₂ᵀ · (R₁₁ᵀ)⁺`.
#[derive(Clone, Debug)]
pub struct LstsqAccumulator {
    in_dim: usize,
    out_dim: usize,
    /// Current triangular factor, `min(seen, width)×width`.
    r: Matrix,
    snapshots: usize,
}

impl LstsqAccumulator {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        LstsqAccumulator {
            in_dim,
            out_dim,
            r: Matrix::zeros(0, in_dim + out_dim),
            snapshots: 0,
        }
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn push(&mut self, phi_x: &Matrix, phi_y: &Matrix) -> Result<()> {
        if phi_x.cols() != phi_y.cols() {
            return Err(Error::Shape(format!(
                "snapshot matrices have {} and {} columns",
                phi_x.cols(),
                phi_y.cols()
            )));
        }
        if phi_x.rows() != self.in_dim || phi_y.rows() != self.out_dim {
            return Err(Error::Shape(format!(
                "expected {}- and {}-row snapshot blocks, got {} and {}",
                self.in_dim,
                self.out_dim,
                phi_x.rows(),
                phi_y.rows()
            )));
        }
        if !phi_x.is_finite() || !phi_y.is_finite() {
            return Err(Error::Numerical("non-finite lifted snapshot".into()));
        }
        let width = self.in_dim + self.out_dim;
        // Bounded block height keeps the working set small for long datasets.
        let chunk = (4 * width).max(256);
        let mut start = 0;
        while start < phi_x.cols() {
            let end = (start + chunk).min(phi_x.cols());
            let rows_new = end - start;
            let total = self.r.rows() + rows_new;
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(width);
            for j in 0..width {
                let mut col = Vec::with_capacity(total);
                col.extend((0..self.r.rows()).map(|i| self.r[(i, j)]));
                if j < self.in_dim {
                    col.extend_from_slice(&phi_x.row(j)[start..end]);
                } else {
                    col.extend_from_slice(&phi_y.row(j - self.in_dim)[start..end]);
                }
                cols.push(col);
            }
            let qr = HouseholderQr::new(cols);
            let r_cols = qr.r_columns();
            let r_rows = total.min(width);
            self.r = Matrix::from_fn(r_rows, width, |i, j| r_cols[j][i]);
            self.snapshots += rows_new;
            start = end;
        }
        Ok(())
    }

    pub fn solve(&self, rcond: f64) -> Result<Matrix> {
        if self.snapshots == 0 {
            return Err(Error::Shape("no snapshots were pushed".into()));
        }
        let t = self.r.rows().min(self.in_dim);
        let r11 = Matrix::from_fn(t, self.in_dim, |i, j| self.r[(i, j)]);
        let r12 = Matrix::from_fn(t, self.out_dim, |i, j| self.r[(i, self.in_dim + j)]);
        let pinv_r11t = pinv(&r11.transpose(), rcond)?;
        r12.t_matmul(&pinv_r11t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_defect(q: &Matrix) -> f64 {
        let qtq = q.t_matmul(q).unwrap();
        qtq.sub(&Matrix::identity(q.cols())).unwrap().max_abs()
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma.len(), 3);
        for v in &s.sigma {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let d = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 3.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ])
        .unwrap();
        let s = svd(&d).unwrap();
        for (got, want) in s.sigma.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_reconstructs_random_tall_and_wide() {
        for (r, c, seed) in [(5, 3, 1), (3, 5, 2), (40, 7, 3), (7, 40, 4), (1, 1, 5)] {
            let a = random_matrix(r, c, seed);
            let s = svd(&a).unwrap();
            let res = a.sub(&s.reconstruct()).unwrap().frobenius_norm();
            assert!(res <= 1e-10 * a.frobenius_norm(), "{r}x{c}: residual {res}");
            assert!(orthonormality_defect(&s.u) <= 1e-10);
            assert!(orthonormality_defect(&s.vt.transpose()) <= 1e-10);
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rank_deficient_keeps_orthonormal_u() {
        let b = random_matrix(6, 2, 9);
        let c = random_matrix(2, 4, 10);
        let a = b.matmul(&c).unwrap();
        let s = svd(&a).unwrap();
        assert!(s.sigma[2] < 1e-14 * s.sigma[0]);
        assert!(orthonormality_defect(&s.u) <= 1e-10);
        let zero = Matrix::zeros(3, 2);
        let s = svd(&zero).unwrap();
        assert!(orthonormality_defect(&s.u) <= 1e-12);
        assert_eq!(s.sigma, vec![0.0, 0.0]);
    }

    #[test]
    fn pinv_trivial_cases() {
        let p = pinv(&Matrix::identity(4), DEFAULT_RCOND).unwrap();
        assert!(p.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-15);
        let p = pinv(&Matrix::from_vec(1, 1, vec![2.0]).unwrap(), DEFAULT_RCOND).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-16);
        assert!(pinv(&Matrix::identity(2), 0.0).is_err());
        assert!(pinv(&Matrix::identity(2), 1.0).is_err());
    }

    #[test]
    fn pinv_rank_deficient_penrose() {
        // Rank-2 4x6 test matrix.
        let a = random_matrix(4, 2, 11).matmul(&random_matrix(2, 6, 12)).unwrap();
        let p = pinv(&a, DEFAULT_RCOND).unwrap();
        let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
        assert!(apa.sub(&a).unwrap().frobenius_norm() <= 1e-8 * a.frobenius_norm());
        let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
        assert!(pap.sub(&p).unwrap().frobenius_norm() <= 1e-8 * p.frobenius_norm());
        let ap = a.matmul(&p).unwrap();
        assert!(ap.sub(&ap.transpose()).unwrap().max_abs() <= 1e-8);
        let pa = p.matmul(&a).unwrap();
        assert!(pa.sub(&pa.transpose()).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn lstsq_rank_one_half_scaling() {
        // Φ_x has a single nonzero row; Φ_y = 0.5·Φ_x.
        let phi_x = Matrix::from_rows(&[vec![1.0, 2.0, -1.0, 4.0], vec![0.0; 4]]).unwrap();
        let phi_y = phi_x.scale(0.5);
        let k = lstsq_k(&phi_x, &phi_y, DEFAULT_RCOND).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-14);
        assert!(k[(0, 1)].abs() < 1e-14 && k[(1, 0)].abs() < 1e-14 && k[(1, 1)].abs() < 1e-14);
    }

    #[test]
    fn lstsq_identity_on_span() {
        let phi = random_matrix(5, 3, 13).matmul(&random_matrix(3, 20, 14)).unwrap();
        let k = lstsq_k(&phi, &phi, DEFAULT_RCOND).unwrap();
        let kp = k.matmul(&phi).unwrap();
        assert!(kp.sub(&phi).unwrap().frobenius_norm() < 1e-10 * phi.frobenius_norm());
    }

    #[test]
    fn lstsq_matches_direct_pinv_route() {
        let phi_x = random_matrix(6, 300, 15);
        let phi_y = random_matrix(6, 300, 16);
        let streamed = lstsq_k(&phi_x, &phi_y, DEFAULT_RCOND).unwrap();
        let direct = phi_y.matmul(&pinv(&phi_x, DEFAULT_RCOND).unwrap()).unwrap();
        assert!(streamed.sub(&direct).unwrap().max_abs() < 1e-12);
        // Fewer snapshots than rows: underdetermined branch.
        let phi_x = random_matrix(6, 3, 17);
        let phi_y = random_matrix(6, 3, 18);
        let streamed = lstsq_k(&phi_x, &phi_y, DEFAULT_RCOND).unwrap();
        let direct = phi_y.matmul(&pinv(&phi_x, DEFAULT_RCOND).unwrap()).unwrap();
        assert!(streamed.sub(&direct).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn lstsq_shape_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(matches!(lstsq_k(&a, &b, DEFAULT_RCOND), Err(Error::Shape(_))));
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn product_variants_agree() {
        let a = random_matrix(4, 5, 20);
        let b = random_matrix(5, 3, 21);
        let ab = a.matmul(&b).unwrap();
        let ab2 = a.matmul_t(&b.transpose()).unwrap();
        let ab3 = a.transpose().t_matmul(&b).unwrap();
        assert!(ab.sub(&ab2).unwrap().max_abs() < 1e-14);
        assert!(ab.sub(&ab3).unwrap().max_abs() < 1e-14);
    }
}
