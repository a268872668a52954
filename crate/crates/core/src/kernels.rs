//! Dense kernels used by the eigensolver.
//!
//! Everything tall (search basis, its operator image, the Q factor of the
//! refined extraction) lives in a column-major [`DenseBlock`], so basis updates
//! such as `V ← V·Y` stream each column once. The small projected problems are
//! solved with `nalgebra`; only their contracts matter here.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative norm below which a projected column counts as numerically zero.
const RANK_TOL: f64 = 1e-14;
/// Passes of classical Gram-Schmidt before a column is accepted regardless.
const MAX_ORTHO_PASSES: usize = 5;
/// Random refills attempted for a rank-deficient column before giving up.
const MAX_REFILLS: usize = 3;

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let nrm = norm2(&v);
    if nrm > 0.0 {
        scale(1.0 / nrm, &mut v);
    }
    v
}

/// Column-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// A block with `rows` rows and no columns, ready for [`push_col`](Self::push_col).
    pub fn empty(rows: usize) -> Self {
        Self::zeros(rows, 0)
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n, n);
        for i in 0..n {
            b.data[i * n + i] = 1.0;
        }
        b
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("DenseBlock::from_col_major", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a block from equally long columns.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut b = Self::empty(rows);
        for c in columns {
            b.push_col(c)?;
        }
        Ok(b)
    }

    /// Entries drawn from the standard normal distribution.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.cols == 0
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

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[j * self.rows + i] = value;
    }

    pub fn push_col(&mut self, col: &[f64]) -> Result<()> {
        if col.len() != self.rows {
            return Err(Error::dim("DenseBlock::push_col", self.rows, col.len()));
        }
        self.data.extend_from_slice(col);
        self.cols += 1;
        Ok(())
    }

    pub fn truncate_cols(&mut self, cols: usize) {
        if cols < self.cols {
            self.cols = cols;
            self.data.truncate(cols * self.rows);
        }
    }

    pub fn remove_col(&mut self, j: usize) {
        let r = self.rows;
        self.data.drain(j * r..(j + 1) * r);
        self.cols -= 1;
    }

    /// Copy of columns `range`.
    pub fn cols_range(&self, range: std::ops::Range<usize>) -> Self {
        let data = self.data[range.start * self.rows..range.end * self.rows].to_vec();
        Self {
            rows: self.rows,
            cols: range.len(),
            data,
        }
    }

    /// Appends all columns of `other`.
    pub fn extend_cols(&mut self, other: &DenseBlock) -> Result<()> {
        if other.rows != self.rows {
            return Err(Error::dim("DenseBlock::extend_cols", self.rows, other.rows));
        }
        self.data.extend_from_slice(&other.data);
        self.cols += other.cols;
        Ok(())
    }

    /// `self · y`.
    pub fn mul(&self, y: &DenseBlock) -> Result<DenseBlock> {
        if y.rows != self.cols {
            return Err(Error::dim("DenseBlock::mul", self.cols, y.rows));
        }
        let mut out = DenseBlock::zeros(self.rows, y.cols);
        for j in 0..y.cols {
            let oc = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for l in 0..self.cols {
                let c = y.data[j * y.rows + l];
                if c != 0.0 {
                    axpy(c, &self.data[l * self.rows..(l + 1) * self.rows], oc);
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_mul(&self, other: &DenseBlock) -> Result<DenseBlock> {
        if other.rows != self.rows {
            return Err(Error::dim("DenseBlock::t_mul", self.rows, other.rows));
        }
        let mut out = DenseBlock::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            for i in 0..self.cols {
                out.data[j * self.cols + i] = dot(self.col(i), other.col(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x` for a single vector.
    pub fn t_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cols).map(|i| dot(self.col(i), x)).collect()
    }

    /// `self · c` for a coefficient vector.
    pub fn mul_vec(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (l, &cl) in c.iter().enumerate().take(self.cols) {
            if cl != 0.0 {
                axpy(cl, self.col(l), &mut out);
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseBlock {
        let mut out = DenseBlock::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.data[i * self.cols + j] = self.data[j * self.rows + i];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DenseBlock) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }
}

/// Symmetric projection matrix such as `H = VᵀW`, stored in full column-major form.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallSymmetric {
    dim: usize,
    values: Vec<f64>,
}

impl SmallSymmetric {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * dim],
        }
    }

    /// Symmetrizes a square block as `(B + Bᵀ)/2`.
    pub fn from_block(b: &DenseBlock) -> Result<Self> {
        if b.rows() != b.cols() {
            return Err(Error::dim("SmallSymmetric::from_block", b.rows(), b.cols()));
        }
        let n = b.rows();
        let mut s = Self::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                let v = 0.5 * (b.get(i, j) + b.get(j, i));
                s.values[j * n + i] = v;
                s.values[i * n + j] = v;
            }
        }
        Ok(s)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut s = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            s.values[i * d.len() + i] = v;
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.dim + i]
    }

    /// Grows by one row and column; `col` holds the new last column (length `dim + 1`).
    pub fn push_col(&mut self, col: &[f64]) -> Result<()> {
        let n = self.dim + 1;
        if col.len() != n {
            return Err(Error::dim("SmallSymmetric::push_col", n, col.len()));
        }
        let mut values = vec![0.0; n * n];
        for j in 0..self.dim {
            for i in 0..self.dim {
                values[j * n + i] = self.values[j * self.dim + i];
            }
        }
        for (i, &c) in col.iter().enumerate() {
            values[self.dim * n + i] = c;
            values[i * n + self.dim] = c;
        }
        self.dim = n;
        self.values = values;
        Ok(())
    }

    pub fn as_block(&self) -> DenseBlock {
        DenseBlock {
            rows: self.dim,
            cols: self.dim,
            data: self.values.clone(),
        }
    }

    /// `yᵀ H y` for a coefficient vector.
    pub fn quadratic_form(&self, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.dim {
            let hy: f64 = (0..self.dim).map(|i| self.values[j * self.dim + i] * y[i]).sum();
            acc += hy * y[j];
        }
        acc
    }

    /// `Yᵀ H Y`, symmetrized.
    pub fn congruence(&self, y: &DenseBlock) -> Result<SmallSymmetric> {
        let hy = self.as_block().mul(y)?;
        SmallSymmetric::from_block(&y.t_mul(&hy)?)
    }
}

/// Upper-triangular factor; strictly-lower entries are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallUpperTriangular {
    dim: usize,
    values: Vec<f64>,
}

impl SmallUpperTriangular {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * dim],
        }
    }

    /// Takes the upper triangle of a square block; the rest is discarded.
    pub fn from_block(b: &DenseBlock) -> Result<Self> {
        if b.rows() != b.cols() {
            return Err(Error::dim("SmallUpperTriangular::from_block", b.rows(), b.cols()));
        }
        let n = b.rows();
        let mut r = Self::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                r.values[j * n + i] = b.get(i, j);
            }
        }
        Ok(r)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.dim + i]
    }

    pub fn as_block(&self) -> DenseBlock {
        DenseBlock {
            rows: self.dim,
            cols: self.dim,
            data: self.values.clone(),
        }
    }

    fn push_col(&mut self, col: &[f64]) {
        let n = self.dim + 1;
        let mut values = vec![0.0; n * n];
        for j in 0..self.dim {
            values[j * n..j * n + self.dim].copy_from_slice(&self.values[j * self.dim..(j + 1) * self.dim]);
        }
        values[self.dim * n..self.dim * n + n].copy_from_slice(col);
        self.dim = n;
        self.values = values;
    }

    /// `R · y` for a coefficient vector.
    pub fn mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for j in 0..self.dim {
            for i in 0..=j {
                out[i] += self.values[j * self.dim + i] * y[j];
            }
        }
        out
    }
}

/// Columns that had to be replaced (or dropped) because they were numerically dependent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RankReport {
    pub deficient: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum DeficientPolicy {
    /// Replace with an orthonormalized random vector.
    Replace,
    /// Remove the column from the block.
    Drop,
}

/// One classical Gram-Schmidt sweep of `x` against `against` blocks and the
/// first `own_cols` columns of `own`.
fn cgs_pass(x: &mut [f64], against: &[&DenseBlock], own: &DenseBlock, own_cols: usize) {
    for b in against {
        let coefs = b.t_mul_vec(x);
        for (l, c) in coefs.into_iter().enumerate() {
            axpy(-c, b.col(l), x);
        }
    }
    let coefs: Vec<f64> = (0..own_cols).map(|l| dot(own.col(l), x)).collect();
    for (l, c) in coefs.into_iter().enumerate() {
        axpy(-c, own.col(l), x);
    }
}

/// Projects one column and normalizes it. Returns false when it is numerically zero.
fn orthonormalize_column(x: &mut [f64], against: &[&DenseBlock], own: &DenseBlock, own_cols: usize) -> bool {
    let n0 = norm2(x);
    if n0 == 0.0 || !n0.is_finite() {
        return false;
    }
    let mut prev = n0;
    let mut tiny = 0;
    for _ in 0..MAX_ORTHO_PASSES {
        cgs_pass(x, against, own, own_cols);
        let nn = norm2(x);
        if nn < RANK_TOL * n0 {
            tiny += 1;
            if tiny >= 2 {
                return false;
            }
            prev = nn;
            continue;
        }
        if nn < FRAC_1_SQRT_2 * prev {
            prev = nn;
            continue;
        }
        scale(1.0 / nn, x);
        return true;
    }
    let nn = norm2(x);
    if nn == 0.0 {
        return false;
    }
    scale(1.0 / nn, x);
    true
}

pub(crate) fn orthonormalize_with<R: Rng + ?Sized>(
    block: &mut DenseBlock,
    against: &[&DenseBlock],
    start_col: usize,
    policy: DeficientPolicy,
    rng: &mut R,
) -> Result<RankReport> {
    for b in against {
        if b.rows() != block.rows() {
            return Err(Error::dim("orthonormalize", block.rows(), b.rows()));
        }
    }
    let rows = block.rows();
    let mut report = RankReport::default();
    let mut j = start_col.min(block.cols());
    let mut original_index = j;
    while j < block.cols() {
        let mut x = block.col(j).to_vec();
        let mut ok = orthonormalize_column(&mut x, against, block, j);
        if !ok {
            report.deficient.push(original_index);
            match policy {
                DeficientPolicy::Drop => {
                    block.remove_col(j);
                    original_index += 1;
                    continue;
                }
                DeficientPolicy::Replace => {
                    for _ in 0..MAX_REFILLS {
                        x = random_unit(rows, rng);
                        if orthonormalize_column(&mut x, against, block, j) {
                            ok = true;
                            break;
                        }
                    }
                    if !ok {
                        return Err(Error::BasisCollapse);
                    }
                }
            }
        }
        block.col_mut(j).copy_from_slice(&x);
        j += 1;
        original_index += 1;
    }
    Ok(report)
}

/// Orthonormalizes columns `start_col..` of `block` against `against` and the
/// preceding columns, using classical Gram-Schmidt with DGKS reorthogonalization
/// (another pass whenever the norm drops below `1/√2` of its previous value).
///
/// A column whose projected norm falls below `1e-14` of its original norm on two
/// consecutive passes is replaced by a random vector orthonormalized the same way,
/// and its index is reported in [`RankReport::deficient`].
pub fn orthonormalize<R: Rng + ?Sized>(
    block: &mut DenseBlock,
    against: Option<&DenseBlock>,
    start_col: usize,
    rng: &mut R,
) -> Result<RankReport> {
    let against: Vec<&DenseBlock> = against.into_iter().collect();
    orthonormalize_with(block, &against, start_col, DeficientPolicy::Replace, rng)
}

/// Eigen-decomposition of a small symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEig {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DenseBlock,
}

pub fn sym_eig(h: &SmallSymmetric) -> SymEig {
    let n = h.dim();
    if n == 0 {
        return SymEig {
            values: Vec::new(),
            vectors: DenseBlock::zeros(0, 0),
        };
    }
    let eig = h.as_block().to_nalgebra().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep the backend's order
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vectors = DenseBlock::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &i) in order.iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        let src = eig.eigenvectors.column(i);
        // deterministic sign: largest-magnitude entry positive
        let pivot = src.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (dst, v) in vectors.col_mut(k).iter_mut().zip(src.iter()) {
            *dst = s * v;
        }
    }
    SymEig { values, vectors }
}

/// Singular values and right singular vectors of a small square factor.
#[derive(Clone, Debug)]
pub struct SmallSvd {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub right_vectors: DenseBlock,
}

impl SmallSvd {
    pub fn min_index(&self) -> Option<usize> {
        self.values.len().checked_sub(1)
    }
}

pub fn small_svd(r: &SmallUpperTriangular) -> SmallSvd {
    let n = r.dim();
    if n == 0 {
        return SmallSvd {
            values: Vec::new(),
            right_vectors: DenseBlock::zeros(0, 0),
        };
    }
    let svd = r.as_block().to_nalgebra().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut right_vectors = DenseBlock::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &i) in order.iter().enumerate() {
        values.push(svd.singular_values[i]);
        let row = v_t.row(i);
        let pivot = row.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (dst, v) in right_vectors.col_mut(k).iter_mut().zip(row.iter()) {
            *dst = s * v;
        }
    }
    SmallSvd { values, right_vectors }
}

/// Outcome of [`qr_append`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppendReport {
    /// The new column was (numerically) in the span of `q`; its diagonal entry is ~0.
    pub dependent: bool,
    pub diagonal: f64,
}

/// Extends the thin QR factorization `q·r = M` to `[M new_col]`.
pub fn qr_append<R: Rng + ?Sized>(
    q: &mut DenseBlock,
    r: &mut SmallUpperTriangular,
    new_col: &[f64],
    rng: &mut R,
) -> Result<AppendReport> {
    if new_col.len() != q.rows() {
        return Err(Error::dim("qr_append", q.rows(), new_col.len()));
    }
    if r.dim() != q.cols() {
        return Err(Error::dim("qr_append (factor)", q.cols(), r.dim()));
    }
    let g = q.cols();
    let n0 = norm2(new_col);
    let mut x = new_col.to_vec();
    let mut coefs = vec![0.0; g + 1];
    let mut prev = n0;
    let mut nn = n0;
    for _ in 0..MAX_ORTHO_PASSES {
        let h = q.t_mul_vec(&x);
        for (l, c) in h.iter().enumerate() {
            axpy(-c, q.col(l), &mut x);
            coefs[l] += c;
        }
        nn = norm2(&x);
        if nn >= FRAC_1_SQRT_2 * prev {
            break;
        }
        prev = nn;
    }
    let dependent = n0 == 0.0 || nn <= RANK_TOL * n0;
    if dependent {
        // keep Q orthonormal with a random direction; R carries the tiny remainder
        let mut fill = random_unit(q.rows(), rng);
        if !orthonormalize_column(&mut fill, &[], q, g) {
            return Err(Error::BasisCollapse);
        }
        x = fill;
    } else {
        scale(1.0 / nn, &mut x);
    }
    coefs[g] = nn;
    q.push_col(&x)?;
    r.push_col(&coefs);
    Ok(AppendReport {
        dependent,
        diagonal: nn,
    })
}

/// Thin QR of a small tall matrix with a nonnegative diagonal in `R`.
pub(crate) fn small_qr(m: &DenseBlock) -> (DenseBlock, SmallUpperTriangular) {
    let p = m.cols();
    if p == 0 {
        return (DenseBlock::zeros(m.rows(), 0), SmallUpperTriangular::zeros(0));
    }
    let qr = m.to_nalgebra().qr();
    let mut q = DenseBlock::from_nalgebra(&qr.q());
    let r_full = DenseBlock::from_nalgebra(&qr.r());
    let mut r = SmallUpperTriangular::from_block(&r_full).expect("square R");
    for j in 0..p {
        if r.get(j, j) < 0.0 {
            for c in j..p {
                r.values[c * p + j] = -r.values[c * p + j];
            }
            scale(-1.0, q.col_mut(j));
        }
    }
    (q, r)
}

/// Restarts the factorization after the basis is compressed as `V·Y`:
/// factor `R·Y = Q̃·R̃`, then `q ← q·Q̃` and `r ← R̃`.
pub fn qr_restart(q: &mut DenseBlock, r: &mut SmallUpperTriangular, y: &DenseBlock) -> Result<()> {
    if r.dim() != q.cols() {
        return Err(Error::dim("qr_restart (factor)", q.cols(), r.dim()));
    }
    if y.rows() != r.dim() {
        return Err(Error::dim("qr_restart", r.dim(), y.rows()));
    }
    if y.cols() > r.dim() {
        return Err(Error::dim("qr_restart (columns)", r.dim(), y.cols()));
    }
    let ry = r.as_block().mul(y)?;
    let (q_small, r_small) = small_qr(&ry);
    *q = q.mul(&q_small)?;
    *r = r_small;
    Ok(())
}

/// Thin QR of a tall block built column by column with [`qr_append`].
pub fn qr_factor<R: Rng + ?Sized>(m: &DenseBlock, rng: &mut R) -> Result<(DenseBlock, SmallUpperTriangular)> {
    let mut q = DenseBlock::empty(m.rows());
    let mut r = SmallUpperTriangular::zeros(0);
    for j in 0..m.cols() {
        qr_append(&mut q, &mut r, m.col(j), rng)?;
    }
    Ok((q, r))
}
