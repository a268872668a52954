//! Block linear operators: the user's `A`, the normal-equations operator
//! `C = AᵀA`, the augmented operator `B = [0 Aᵀ; A 0]`, preconditioners and
//! the running norm estimate.
//!
//! All block callables use the same calling convention: column-major blocks
//! with explicit leading dimensions, `block_size` columns per call.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{dot, norm2, DenseBlock};
use crate::matio::SparseMatrixCsr;

/// Machine epsilon for `f64`.
pub const EPS: f64 = f64::EPSILON;

/// A rectangular `m×n` operator that can apply `A` and `Aᵀ`.
pub trait SvdOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y = A·x`, or `y = Aᵀ·x` when `transpose` is set, for `block_size` columns.
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool);
}

impl SvdOperator for SparseMatrixCsr {
    fn nrows(&self) -> usize {
        SparseMatrixCsr::nrows(self)
    }
    fn ncols(&self) -> usize {
        SparseMatrixCsr::ncols(self)
    }
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        self.apply_raw(x, ldx, y, ldy, block_size, transpose);
    }
}

impl SvdOperator for DenseBlock {
    fn nrows(&self) -> usize {
        self.rows()
    }
    fn ncols(&self) -> usize {
        self.cols()
    }
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        let (m, n) = (self.rows(), self.cols());
        for b in 0..block_size {
            let xb = &x[b * ldx..];
            let yb = &mut y[b * ldy..];
            if transpose {
                for (j, yj) in yb[..n].iter_mut().enumerate() {
                    *yj = dot(self.col(j), &xb[..m]);
                }
            } else {
                yb[..m].fill(0.0);
                for (j, &xj) in xb[..n].iter().enumerate() {
                    for (yi, aij) in yb[..m].iter_mut().zip(self.col(j)) {
                        *yi += aij * xj;
                    }
                }
            }
        }
    }
}

impl<T: SvdOperator + ?Sized> SvdOperator for &T {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        (**self).matvec(x, ldx, y, ldy, block_size, transpose)
    }
}

/// Matrix-free operator built from a closure with the block calling convention.
pub struct FnOperator<F> {
    m: usize,
    n: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64], usize, &mut [f64], usize, usize, bool),
{
    pub fn new(m: usize, n: usize, f: F) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(Self { m, n, f })
    }
}

impl<F> SvdOperator for FnOperator<F>
where
    F: Fn(&[f64], usize, &mut [f64], usize, usize, bool),
{
    fn nrows(&self) -> usize {
        self.m
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        (self.f)(x, ldx, y, ldy, block_size, transpose)
    }
}

/// `Aᵀ` viewed as an operator.
pub struct Transposed<'a>(pub &'a dyn SvdOperator);

impl SvdOperator for Transposed<'_> {
    fn nrows(&self) -> usize {
        self.0.ncols()
    }
    fn ncols(&self) -> usize {
        self.0.nrows()
    }
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        self.0.matvec(x, ldx, y, ldy, block_size, !transpose)
    }
}

/// Counts columns passed through `A` or `Aᵀ`.
pub struct CountingOperator<'a> {
    inner: &'a dyn SvdOperator,
    count: AtomicUsize,
}

impl<'a> CountingOperator<'a> {
    pub fn new(inner: &'a dyn SvdOperator) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn matvecs(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl SvdOperator for CountingOperator<'_> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        self.count.fetch_add(block_size, Ordering::Relaxed);
        self.inner.matvec(x, ldx, y, ldy, block_size, transpose)
    }
}

/// `A·X` or `Aᵀ·X` on a dense block.
pub fn svd_apply(a: &dyn SvdOperator, x: &DenseBlock, transpose: bool) -> Result<DenseBlock> {
    let (in_len, out_len) = if transpose {
        (a.nrows(), a.ncols())
    } else {
        (a.ncols(), a.nrows())
    };
    if x.rows() != in_len {
        return Err(Error::dim("svd_apply", in_len, x.rows()));
    }
    let mut y = DenseBlock::zeros(out_len, x.cols());
    if x.cols() > 0 {
        a.matvec(x.as_slice(), in_len, y.as_mut_slice(), out_len, x.cols(), transpose);
    }
    Ok(y)
}

/// Largest `|yᵀ(Ax) − xᵀ(Aᵀy)| / (‖x‖‖y‖)` over seeded random probes.
///
/// Callers compare the result against `1e-12·‖A‖_F` (or another scale).
pub fn transpose_consistency(a: &dyn SvdOperator, probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let x = DenseBlock::random(a.ncols(), 1, &mut rng);
        let y = DenseBlock::random(a.nrows(), 1, &mut rng);
        let ax = svd_apply(a, &x, false).expect("probe sizes follow the operator");
        let aty = svd_apply(a, &y, true).expect("probe sizes follow the operator");
        let gap = (dot(y.col(0), ax.col(0)) - dot(x.col(0), aty.col(0))).abs();
        worst = worst.max(gap / (norm2(x.col(0)) * norm2(y.col(0))));
    }
    worst
}

/// Square symmetric operator handed to the eigensolver.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = Op·x` for `block_size` columns.
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize);
}

/// `Op·X` on a dense block.
pub fn apply_block(op: &dyn LinearOperator, x: &DenseBlock) -> Result<DenseBlock> {
    let n = op.dim();
    if x.rows() != n {
        return Err(Error::dim("apply_block", n, x.rows()));
    }
    let mut y = DenseBlock::zeros(n, x.cols());
    if x.cols() > 0 {
        op.apply(x.as_slice(), n, y.as_mut_slice(), n, x.cols());
    }
    Ok(y)
}

impl LinearOperator for crate::kernels::SmallSymmetric {
    fn dim(&self) -> usize {
        crate::kernels::SmallSymmetric::dim(self)
    }
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize) {
        let n = self.dim();
        for b in 0..block_size {
            for i in 0..n {
                y[b * ldy + i] = (0..n).map(|j| self.get(i, j) * x[b * ldx + j]).sum();
            }
        }
    }
}

/// `x ↦ Aᵀ(A·x)`. Every column counts as two matvecs.
pub struct NormalOperator<'a> {
    a: &'a dyn SvdOperator,
    matvecs: AtomicUsize,
}

impl<'a> NormalOperator<'a> {
    pub fn new(a: &'a dyn SvdOperator) -> Self {
        Self {
            a,
            matvecs: AtomicUsize::new(0),
        }
    }

    pub fn matvecs(&self) -> usize {
        self.matvecs.load(Ordering::Relaxed)
    }
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize) {
        let m = self.a.nrows();
        let mut tmp = vec![0.0; m * block_size];
        self.a.matvec(x, ldx, &mut tmp, m, block_size, false);
        self.a.matvec(&tmp, m, y, ldy, block_size, true);
        self.matvecs.fetch_add(2 * block_size, Ordering::Relaxed);
    }
}

/// `[v; u] ↦ [Aᵀu; A·v]`, with the `n`-long `v` part first and the `m`-long
/// `u` part second. Every column counts as two matvecs.
pub struct AugmentedOperator<'a> {
    a: &'a dyn SvdOperator,
    matvecs: AtomicUsize,
}

impl<'a> AugmentedOperator<'a> {
    pub fn new(a: &'a dyn SvdOperator) -> Self {
        Self {
            a,
            matvecs: AtomicUsize::new(0),
        }
    }

    pub fn matvecs(&self) -> usize {
        self.matvecs.load(Ordering::Relaxed)
    }
}

impl LinearOperator for AugmentedOperator<'_> {
    fn dim(&self) -> usize {
        self.a.nrows() + self.a.ncols()
    }
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize) {
        let (m, n) = (self.a.nrows(), self.a.ncols());
        let mut v = vec![0.0; n * block_size];
        let mut u = vec![0.0; m * block_size];
        for b in 0..block_size {
            v[b * n..(b + 1) * n].copy_from_slice(&x[b * ldx..b * ldx + n]);
            u[b * m..(b + 1) * m].copy_from_slice(&x[b * ldx + n..b * ldx + n + m]);
        }
        let mut atu = vec![0.0; n * block_size];
        let mut av = vec![0.0; m * block_size];
        self.a.matvec(&u, m, &mut atu, n, block_size, true);
        self.a.matvec(&v, n, &mut av, m, block_size, false);
        for b in 0..block_size {
            y[b * ldy..b * ldy + n].copy_from_slice(&atu[b * n..(b + 1) * n]);
            y[b * ldy + n..b * ldy + n + m].copy_from_slice(&av[b * m..(b + 1) * m]);
        }
        self.matvecs.fetch_add(2 * block_size, Ordering::Relaxed);
    }
}

/// Which operator a preconditioner approximates the inverse of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondMode {
    /// `AᵀA`, dimension `n`.
    AtA,
    /// `AAᵀ`, dimension `m`.
    AAt,
    /// `B`, dimension `m + n` in `[v; u]` layout.
    Augmented,
    None,
}

pub trait Preconditioner {
    fn mode(&self) -> PrecondMode;
    fn dim(&self) -> usize;
    /// `y ≈ M⁻¹·x` for `block_size` columns.
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize);
}

/// Diagonal preconditioner `x ↦ x ./ d`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobiPreconditioner {
    mode: PrecondMode,
    diag: Vec<f64>,
}

impl JacobiPreconditioner {
    /// Clamps entries below `ε·max d` so zero columns never divide by zero.
    pub fn new(mode: PrecondMode, mut diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = if max > 0.0 { EPS * max } else { 1.0 };
        for d in diag.iter_mut() {
            if *d < floor {
                *d = floor;
            }
        }
        Ok(Self { mode, diag })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn mode(&self) -> PrecondMode {
        self.mode
    }
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize) {
        let n = self.diag.len();
        for b in 0..block_size {
            for i in 0..n {
                y[b * ldy + i] = x[b * ldx + i] / self.diag[i];
            }
        }
    }
}

/// Point Jacobi on `AᵀA`: `dⱼ = ‖A(:, j)‖²`.
pub fn jacobi_precond_on_c(a: &SparseMatrixCsr) -> Result<JacobiPreconditioner> {
    JacobiPreconditioner::new(PrecondMode::AtA, a.column_norms_sq())
}

/// Point Jacobi on `AAᵀ`: `dᵢ = ‖A(i, :)‖²`.
pub fn jacobi_precond_on_aat(a: &SparseMatrixCsr) -> Result<JacobiPreconditioner> {
    JacobiPreconditioner::new(PrecondMode::AAt, a.row_norms_sq())
}

/// Preconditioner built from a closure with the block calling convention.
pub struct FnPreconditioner<F> {
    mode: PrecondMode,
    dim: usize,
    f: F,
}

impl<F> FnPreconditioner<F>
where
    F: Fn(&[f64], usize, &mut [f64], usize, usize),
{
    pub fn new(mode: PrecondMode, dim: usize, f: F) -> Self {
        Self { mode, dim, f }
    }
}

impl<F> Preconditioner for FnPreconditioner<F>
where
    F: Fn(&[f64], usize, &mut [f64], usize, usize),
{
    fn mode(&self) -> PrecondMode {
        self.mode
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize) {
        (self.f)(x, ldx, y, ldy, block_size)
    }
}

/// Presents an augmented-mode preconditioner written for `[v(n); u(m)]` to a
/// solver working on the transposed problem, whose layout is `[u(m); v(n)]`.
pub(crate) struct SwappedAugmented<'a> {
    pub inner: &'a dyn Preconditioner,
    /// Length of the leading part in the solver's layout (`m`).
    pub lead: usize,
}

impl Preconditioner for SwappedAugmented<'_> {
    fn mode(&self) -> PrecondMode {
        PrecondMode::Augmented
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize) {
        let total = self.inner.dim();
        let lead = self.lead;
        let tail = total - lead;
        let mut xs = vec![0.0; total * block_size];
        for b in 0..block_size {
            let src = &x[b * ldx..b * ldx + total];
            let dst = &mut xs[b * total..(b + 1) * total];
            dst[..tail].copy_from_slice(&src[lead..]);
            dst[tail..].copy_from_slice(&src[..lead]);
        }
        let mut ys = vec![0.0; total * block_size];
        self.inner.apply(&xs, total, &mut ys, total, block_size);
        for b in 0..block_size {
            let src = &ys[b * total..(b + 1) * total];
            let dst = &mut y[b * ldy..b * ldy + total];
            dst[..lead].copy_from_slice(&src[tail..]);
            dst[lead..].copy_from_slice(&src[..tail]);
        }
    }
}

/// Scale on which an eigensolver's Ritz values live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RitzScale {
    /// Eigenvalues of `C`, i.e. `σ²`.
    Squared,
    /// Eigenvalues of `B`, i.e. `±σ`.
    Linear,
}

/// Running estimate of `‖C‖₂` (and `‖A‖₂ = √‖C‖₂`), optionally overridden.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormEstimate {
    c_norm: f64,
    user_a_norm: Option<f64>,
}

impl NormEstimate {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fixes `‖A‖₂`; updates are then ignored.
    pub fn with_a_norm(a_norm: f64) -> Self {
        Self {
            c_norm: a_norm * a_norm,
            user_a_norm: Some(a_norm),
        }
    }

    pub fn a_norm(&self) -> f64 {
        self.user_a_norm.unwrap_or_else(|| self.c_norm.sqrt())
    }

    pub fn c_norm(&self) -> f64 {
        match self.user_a_norm {
            Some(a) => a * a,
            None => self.c_norm,
        }
    }

    pub fn is_user_supplied(&self) -> bool {
        self.user_a_norm.is_some()
    }

    /// Norm of the operator whose Ritz values live on `scale`.
    pub fn op_norm(&self, scale: RitzScale) -> f64 {
        match scale {
            RitzScale::Squared => self.c_norm(),
            RitzScale::Linear => self.a_norm(),
        }
    }

    /// Raises the estimate to cover `values` (Ritz values of `C`). Never decreases.
    pub fn update(&mut self, values: &[f64]) {
        for v in values {
            if v.is_finite() {
                self.c_norm = self.c_norm.max(v.abs());
            }
        }
    }

    /// Like [`update`](Self::update) for Ritz values on the given scale.
    pub fn update_scaled(&mut self, values: &[f64], scale: RitzScale) {
        match scale {
            RitzScale::Squared => self.update(values),
            RitzScale::Linear => {
                for v in values {
                    self.update(&[v * v]);
                }
            }
        }
    }
}
