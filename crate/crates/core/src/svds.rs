//! Two-stage partial SVD driver.
//!
//! Stage 1 runs the eigensolver on the normal-equations operator `C = AᵀA`
//! (the smaller of `AᵀA`, `AAᵀ`) to the accuracy `C` allows. Triplets that
//! still miss the requested tolerance are refined in stage 2 on the augmented
//! operator `B = [0 Aᵀ; A 0]`, started from the stage-1 vectors.

use std::f64::consts::SQRT_2;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eigensolver::{eig_solve, EigConfig, EigInputs, EigResult, EigStats, Extraction, IterationView, Target};
use crate::error::{Error, Result};
use crate::kernels::{norm2, orthonormalize_with, random_unit, DeficientPolicy, DenseBlock};
use crate::operators::{
    AugmentedOperator, CountingOperator, NormEstimate, NormalOperator, PrecondMode, Preconditioner, RitzScale,
    SvdOperator, SwappedAugmented, Transposed, EPS,
};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvdTarget {
    Largest,
    Smallest,
    /// Singular values nearest to each value (experimental).
    ClosestTo(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Normal equations first, augmented refinement when needed.
    Phsvds,
    NormalEquationsOnly,
    AugmentedOnly,
}

/// Per-stage overrides of the eigensolver settings derived from [`SvdsConfig`].
#[derive(Clone, Debug, Default)]
pub struct StageOverrides {
    pub max_basis_size: Option<usize>,
    pub min_restart_size: Option<usize>,
    pub plus_k: Option<usize>,
    pub locking: Option<bool>,
    pub max_matvecs: Option<usize>,
    pub resets: Option<bool>,
    pub accept_at_accuracy_limit: Option<bool>,
}

impl StageOverrides {
    fn apply(&self, cfg: &mut EigConfig) {
        if let Some(v) = self.max_basis_size {
            cfg.max_basis_size = v;
        }
        if let Some(v) = self.min_restart_size {
            cfg.min_restart_size = v;
        }
        if let Some(v) = self.plus_k {
            cfg.plus_k = v;
        }
        if let Some(v) = self.locking {
            cfg.locking = v;
        }
        if let Some(v) = self.max_matvecs {
            cfg.max_matvecs = v;
        }
        if let Some(v) = self.resets {
            cfg.resets = v;
        }
        if let Some(v) = self.accept_at_accuracy_limit {
            cfg.accept_at_accuracy_limit = v;
        }
    }
}

#[derive(Clone, Debug)]
pub struct SvdsConfig {
    pub num_svals: usize,
    pub target: SvdTarget,
    /// Requested accuracy `δ`: each triplet must satisfy
    /// `√(‖Av − σu‖² + ‖Aᵀu − σv‖²) < ‖A‖·δ`.
    pub eps: f64,
    /// Defaults to 15 when fewer than 10 largest values are wanted, else 35.
    pub max_basis_size: Option<usize>,
    /// Defaults to 6 or 14, paired with `max_basis_size`.
    pub min_restart_size: Option<usize>,
    pub max_block_size: usize,
    pub method: Method,
    /// Known `‖A‖₂`; otherwise estimated from Ritz values.
    pub a_norm: Option<f64>,
    /// Budget of `A` and `Aᵀ` column applications over both stages.
    pub max_matvecs: usize,
    /// `m×p` block of left-vector guesses.
    pub initial_left: Option<DenseBlock>,
    /// `n×p` block of right-vector guesses.
    pub initial_right: Option<DenseBlock>,
    /// Returned left vectors stay orthogonal to these columns.
    pub ortho_const_left: Option<DenseBlock>,
    /// Returned right vectors stay orthogonal to these columns.
    pub ortho_const_right: Option<DenseBlock>,
    pub seed: u64,
    pub stage1: StageOverrides,
    pub stage2: StageOverrides,
}

impl Default for SvdsConfig {
    fn default() -> Self {
        Self {
            num_svals: 1,
            target: SvdTarget::Largest,
            eps: 1e-12,
            max_basis_size: None,
            min_restart_size: None,
            max_block_size: 1,
            method: Method::Phsvds,
            a_norm: None,
            max_matvecs: 1_000_000,
            initial_left: None,
            initial_right: None,
            ortho_const_left: None,
            ortho_const_right: None,
            seed: 0,
            stage1: StageOverrides::default(),
            stage2: StageOverrides::default(),
        }
    }
}

impl SvdsConfig {
    /// `(max_basis_size, min_restart_size)` after defaults.
    pub fn basis_sizes(&self) -> (usize, usize) {
        let small = self.num_svals < 10 && self.target == SvdTarget::Largest;
        let (mb, mr) = if small { (15, 6) } else { (35, 14) };
        (self.max_basis_size.unwrap_or(mb), self.min_restart_size.unwrap_or(mr))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SvdsStats {
    pub stage1_matvecs: usize,
    pub stage2_matvecs: usize,
    pub precond_applies: usize,
    pub restarts: usize,
    pub resets: usize,
    pub outer_iterations: usize,
    pub seconds: f64,
}

impl SvdsStats {
    fn absorb(&mut self, s: &EigStats) {
        self.precond_applies += s.precond_applies;
        self.restarts += s.restarts;
        self.resets += s.resets;
        self.outer_iterations += s.outer_iterations;
    }
}

#[derive(Clone, Debug)]
pub struct SvdsResult {
    pub sigma: Vec<f64>,
    /// `m×k`, unit columns.
    pub u: DenseBlock,
    /// `n×k`, unit columns.
    pub v: DenseBlock,
    /// Residual norms `√(‖Av − σu‖² + ‖Aᵀu − σv‖²)`, recomputed after the solve.
    pub rnorms: Vec<f64>,
    /// `rnorms[i] < a_norm·eps`.
    pub converged: Vec<bool>,
    /// Singular value below `‖A‖·ε·max(m, n)`, reported as zero.
    pub tiny: Vec<bool>,
    pub stats: SvdsStats,
    pub a_norm: f64,
    /// Eigen-residual norms `‖C·x − λx‖` of the stage-1 vectors.
    pub stage1_rnorms: Vec<f64>,
}

impl SvdsResult {
    pub fn converged_count(&self) -> usize {
        self.converged.iter().filter(|c| **c).count()
    }

    fn empty(m: usize, n: usize) -> Self {
        Self {
            sigma: Vec::new(),
            u: DenseBlock::empty(m),
            v: DenseBlock::empty(n),
            rnorms: Vec::new(),
            converged: Vec::new(),
            tiny: Vec::new(),
            stats: SvdsStats::default(),
            a_norm: 0.0,
            stage1_rnorms: Vec::new(),
        }
    }
}

/// Data handed from stage 1 to stage 2, one entry per wanted triplet.
#[derive(Clone, Debug)]
pub struct StageBridge {
    pub sigma_tilde: Vec<f64>,
    pub rc_norms: Vec<f64>,
    /// Stacked `[v; u]/√2`, `(n + m)×k`.
    pub guesses: DenseBlock,
    pub tiny: Vec<bool>,
    /// Stage 1 did not deliver this slot; it starts from a random guess.
    pub missing: Vec<bool>,
}

/// `A` with `m ≥ n` guaranteed, transposing when needed.
pub struct Oriented<'a> {
    a: &'a dyn SvdOperator,
    swapped: bool,
}

impl Oriented<'_> {
    pub fn swapped(&self) -> bool {
        self.swapped
    }
}

impl SvdOperator for Oriented<'_> {
    fn nrows(&self) -> usize {
        if self.swapped {
            self.a.ncols()
        } else {
            self.a.nrows()
        }
    }
    fn ncols(&self) -> usize {
        if self.swapped {
            self.a.nrows()
        } else {
            self.a.ncols()
        }
    }
    fn matvec(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        self.a.matvec(x, ldx, y, ldy, block_size, transpose != self.swapped)
    }
}

pub fn orient_problem(a: &dyn SvdOperator) -> Oriented<'_> {
    Oriented {
        a,
        swapped: a.nrows() < a.ncols(),
    }
}

fn apply_vec(a: &dyn SvdOperator, x: &[f64], transpose: bool) -> Vec<f64> {
    let out_len = if transpose { a.ncols() } else { a.nrows() };
    let mut y = vec![0.0; out_len];
    a.matvec(x, x.len(), &mut y, out_len, 1, transpose);
    y
}

/// `√(‖Av − σu‖² + ‖Aᵀu − σv‖²)`.
pub fn compute_svd_residual(a: &dyn SvdOperator, sigma: f64, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != a.nrows() {
        return Err(Error::dim("compute_svd_residual (u)", a.nrows(), u.len()));
    }
    if v.len() != a.ncols() {
        return Err(Error::dim("compute_svd_residual (v)", a.ncols(), v.len()));
    }
    let av = apply_vec(a, v, false);
    let atu = apply_vec(a, u, true);
    let left: f64 = av.iter().zip(u).map(|(x, y)| (x - sigma * y).powi(2)).sum();
    let right: f64 = atu.iter().zip(v).map(|(x, y)| (x - sigma * y).powi(2)).sum();
    Ok((left + right).sqrt())
}

/// `‖r‖ ≤ max(√(|λ|·‖C‖)·δ, ε·‖C‖)`.
pub fn stage1_convergence_test(lambda: f64, rnorm: f64, est: &NormEstimate, delta: f64) -> bool {
    let c = est.c_norm();
    rnorm <= ((lambda.abs() * c).sqrt() * delta).max(EPS * c)
}

/// Two-level test on an augmented vector `x = [v; u]` with eigen-residual
/// norm `rnorm`: first `rnorm < √2·‖A‖·δ`, then the full triplet residual of
/// the normalized halves with `σ = |λ|` must be below `‖A‖·δ`.
pub fn stage2_convergence_test(
    a: &dyn SvdOperator,
    lambda: f64,
    x: &[f64],
    rnorm: f64,
    est: &NormEstimate,
    delta: f64,
) -> bool {
    let a_norm = est.a_norm();
    if rnorm >= SQRT_2 * a_norm * delta {
        return false;
    }
    let n = a.ncols();
    let (v, u) = x.split_at(n);
    let (nv, nu) = (norm2(v), norm2(u));
    if nv == 0.0 || nu == 0.0 {
        return false;
    }
    let v: Vec<f64> = v.iter().map(|t| t / nv).collect();
    let u: Vec<f64> = u.iter().map(|t| t / nu).collect();
    match compute_svd_residual(a, lambda.abs(), &u, &v) {
        Ok(r) => r < a_norm * delta,
        Err(_) => false,
    }
}

/// Lower ends of the inclusion intervals `[σ̃ − √2·‖r^C‖/σ̃, σ̃]`, floored at `‖A‖·ε`.
pub fn stage2_shifts(bridge: &StageBridge, a_norm: f64) -> Vec<f64> {
    let floor = a_norm * EPS;
    bridge
        .sigma_tilde
        .iter()
        .zip(&bridge.rc_norms)
        .enumerate()
        .map(|(i, (&s, &rc))| {
            if bridge.tiny[i] || bridge.missing[i] || s <= 0.0 {
                floor
            } else {
                (s - SQRT_2 * rc / s).max(floor)
            }
        })
        .collect()
}

fn tiny_threshold(a: &dyn SvdOperator, a_norm: f64) -> f64 {
    a_norm * EPS * a.nrows().max(a.ncols()) as f64
}

/// Turns stage-1 eigenpairs of `C` into provisional triplets and stage-2 guesses.
fn stage1_postprocess(
    a: &dyn SvdOperator,
    eig: &EigResult,
    k: usize,
    a_norm: f64,
    left_constraints: &DenseBlock,
    rng: &mut ChaCha8Rng,
) -> Result<(StageBridge, DenseBlock, DenseBlock)> {
    let (m, n) = (a.nrows(), a.ncols());
    let tiny_at = tiny_threshold(a, a_norm);
    let mut sigma_tilde = Vec::with_capacity(k);
    let mut rc_norms = Vec::with_capacity(k);
    let mut tiny = Vec::with_capacity(k);
    let mut missing = Vec::with_capacity(k);
    let mut u_block = DenseBlock::empty(m);
    let mut v_block = DenseBlock::empty(n);
    for i in 0..k {
        let (v, lambda, rc, absent) = if i < eig.values.len() {
            (eig.vectors.col(i).to_vec(), eig.values[i], eig.residual_norms[i], false)
        } else {
            (random_unit(n, rng), 0.0, f64::INFINITY, true)
        };
        let s = lambda.max(0.0).sqrt();
        let av = apply_vec(a, &v, false);
        let nav = norm2(&av);
        let is_tiny = !absent && (s < tiny_at || nav < tiny_at);
        let u = if nav > 0.0 {
            av.iter().map(|x| x / nav).collect()
        } else {
            let mut fill = DenseBlock::from_col_major(m, 1, random_unit(m, rng))?;
            orthonormalize_with(
                &mut fill,
                &[left_constraints, &u_block],
                0,
                DeficientPolicy::Replace,
                rng,
            )?;
            fill.into_vec()
        };
        sigma_tilde.push(if is_tiny { 0.0 } else { s });
        rc_norms.push(rc);
        tiny.push(is_tiny);
        missing.push(absent);
        u_block.push_col(&u)?;
        v_block.push_col(&v)?;
    }
    let mut guesses = DenseBlock::empty(n + m);
    for i in 0..k {
        let mut g: Vec<f64> = v_block.col(i).to_vec();
        g.extend_from_slice(u_block.col(i));
        g.iter_mut().for_each(|x| *x /= SQRT_2);
        guesses.push_col(&g)?;
    }
    Ok((
        StageBridge {
            sigma_tilde,
            rc_norms,
            guesses,
            tiny,
            missing,
        },
        u_block,
        v_block,
    ))
}

/// `‖A‖₂` from a few power iterations on `AᵀA` (an underestimate).
fn power_norm_estimate(a: &dyn SvdOperator, iterations: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut x = random_unit(a.ncols(), rng);
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let ax = apply_vec(a, &x, false);
        let y = apply_vec(a, &ax, true);
        lambda = norm2(&y);
        if lambda == 0.0 {
            return 0.0;
        }
        x = y.iter().map(|t| t / lambda).collect();
    }
    lambda.sqrt()
}

fn stack_augmented(left: Option<&DenseBlock>, right: Option<&DenseBlock>, m: usize, n: usize) -> DenseBlock {
    let mut out = DenseBlock::empty(n + m);
    if let Some(r) = right {
        for j in 0..r.cols() {
            let mut c = r.col(j).to_vec();
            c.resize(n + m, 0.0);
            out.push_col(&c).expect("sizes checked");
        }
    }
    if let Some(l) = left {
        for j in 0..l.cols() {
            let mut c = vec![0.0; n];
            c.extend_from_slice(l.col(j));
            out.push_col(&c).expect("sizes checked");
        }
    }
    out
}

fn check_rows(block: &Option<DenseBlock>, rows: usize, context: &'static str) -> Result<()> {
    match block {
        Some(b) if b.rows() != rows => Err(Error::dim(context, rows, b.rows())),
        _ => Ok(()),
    }
}

/// Replaces the left vectors of tiny triplets by vectors from the null space
/// of `Aᵀ`, found as the smallest eigenvectors of `AAᵀ`. A replacement is
/// kept only when it lowers the triplet residual.
#[allow(clippy::too_many_arguments)]
fn complete_left_null(
    a: &dyn SvdOperator,
    u: &mut DenseBlock,
    v: &DenseBlock,
    slots: &[usize],
    left_cons: &DenseBlock,
    est: NormEstimate,
    cfg: &SvdsConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let m = a.nrows();
    let mut cons = left_cons.clone();
    for j in (0..u.cols()).filter(|j| !slots.contains(j)) {
        cons.push_col(u.col(j))?;
    }
    orthonormalize_with(&mut cons, &[], 0, DeficientPolicy::Drop, rng)?;
    if cons.cols() + slots.len() > m {
        return Ok(());
    }
    let at = Transposed(a);
    let op = NormalOperator::new(&at);
    let (max_basis, min_restart) = cfg.basis_sizes();
    let ecfg = EigConfig {
        num_evals: slots.len(),
        target: Target::SmallestAlgebraic,
        max_basis_size: max_basis,
        min_restart_size: min_restart,
        max_matvecs: cfg.max_matvecs / 4,
        seed: cfg.seed.wrapping_add(2),
        norm: est,
        ..EigConfig::default()
    };
    let delta = cfg.eps;
    let test = move |lambda: f64, _: &[f64], rnorm: f64, e: &NormEstimate| {
        stage1_convergence_test(lambda, rnorm, e, delta)
    };
    let eig = eig_solve(
        &op,
        &ecfg,
        &test,
        EigInputs {
            constraints: (cons.cols() > 0).then_some(&cons),
            ..EigInputs::default()
        },
    )?;
    for (t, &slot) in slots.iter().enumerate().take(eig.vectors.cols()) {
        let before = compute_svd_residual(a, 0.0, u.col(slot), v.col(slot))?;
        let after = compute_svd_residual(a, 0.0, eig.vectors.col(t), v.col(slot))?;
        if after < before {
            u.col_mut(slot).copy_from_slice(eig.vectors.col(t));
        }
    }
    Ok(())
}

/// Hooks for inspecting a solve; meant for diagnostics and tests.
#[derive(Default)]
pub struct SvdsHooks<'a> {
    pub stage2_monitor: Option<&'a mut dyn FnMut(&IterationView)>,
}

/// Computes `cfg.num_svals` singular triplets of `a`.
///
/// Triplets that miss the tolerance (budget exhausted) are still returned,
/// flagged in [`SvdsResult::converged`].
pub fn svds_solve(a: &dyn SvdOperator, precond: Option<&dyn Preconditioner>, cfg: &SvdsConfig) -> Result<SvdsResult> {
    svds_solve_with_hooks(a, precond, cfg, SvdsHooks::default())
}

pub fn svds_solve_with_hooks(
    a: &dyn SvdOperator,
    precond: Option<&dyn Preconditioner>,
    cfg: &SvdsConfig,
    hooks: SvdsHooks<'_>,
) -> Result<SvdsResult> {
    let start = Instant::now();
    let (m0, n0) = (a.nrows(), a.ncols());
    if m0 == 0 || n0 == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = cfg.num_svals;
    if k > m0.min(n0) {
        return Err(Error::InvalidConfig(format!(
            "num_svals {k} exceeds min(m, n) = {}",
            m0.min(n0)
        )));
    }
    if !(cfg.eps >= EPS && cfg.eps < 1.0) {
        return Err(Error::InvalidConfig(format!("eps must lie in [{EPS:e}, 1)")));
    }
    if let SvdTarget::ClosestTo(vals) = &cfg.target {
        if vals.is_empty() || vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("closest_to needs nonnegative finite values".into()));
        }
    }
    check_rows(&cfg.initial_left, m0, "initial_left")?;
    check_rows(&cfg.initial_right, n0, "initial_right")?;
    check_rows(&cfg.ortho_const_left, m0, "ortho_const_left")?;
    check_rows(&cfg.ortho_const_right, n0, "ortho_const_right")?;
    if k == 0 {
        return Ok(SvdsResult::empty(m0, n0));
    }

    let oriented = orient_problem(a);
    let swapped = oriented.swapped();
    let (m, n) = (oriented.nrows(), oriented.ncols());
    let (init_left, init_right) = if swapped {
        (cfg.initial_right.as_ref(), cfg.initial_left.as_ref())
    } else {
        (cfg.initial_left.as_ref(), cfg.initial_right.as_ref())
    };
    let (cons_left, cons_right) = if swapped {
        (cfg.ortho_const_right.as_ref(), cfg.ortho_const_left.as_ref())
    } else {
        (cfg.ortho_const_left.as_ref(), cfg.ortho_const_right.as_ref())
    };
    let counted = CountingOperator::new(&oriented);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut stats = SvdsStats::default();

    let (stage1_precond, stage2_precond): (Option<&dyn Preconditioner>, Option<&dyn Preconditioner>) = match precond {
        None => (None, None),
        Some(p) => match (p.mode(), swapped) {
            (PrecondMode::AtA, false) | (PrecondMode::AAt, true) => (Some(p), None),
            (PrecondMode::Augmented, _) => (None, Some(p)),
            (PrecondMode::None, _) => (None, None),
            (mode, _) => {
                log::warn!("preconditioner mode {mode:?} does not match the internal orientation; ignored");
                (None, None)
            }
        },
    };
    let swapped_aug;
    let stage2_precond: Option<&dyn Preconditioner> = match stage2_precond {
        Some(p) if swapped => {
            swapped_aug = SwappedAugmented { inner: p, lead: n };
            Some(&swapped_aug)
        }
        other => other,
    };

    let mut est = match cfg.a_norm {
        Some(v) => NormEstimate::with_a_norm(v),
        None => NormEstimate::new(),
    };
    let (max_basis, min_restart) = cfg.basis_sizes();
    let mut left_cons = cons_left.cloned().unwrap_or_else(|| DenseBlock::empty(m));
    orthonormalize_with(&mut left_cons, &[], 0, DeficientPolicy::Drop, &mut rng)?;

    let mut stage1_rnorms = Vec::new();
    let mut final_u;
    let mut final_v;
    let mut final_sigma;
    let mut need_stage2 = true;
    let mut bridge = None;
    let mut held = vec![false; k];

    if cfg.method != Method::AugmentedOnly {
        let c_op = NormalOperator::new(&counted);
        let target = match &cfg.target {
            SvdTarget::Largest => Target::LargestAlgebraic,
            SvdTarget::Smallest => Target::SmallestAlgebraic,
            SvdTarget::ClosestTo(vals) => {
                let mut sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
                sq.sort_by(f64::total_cmp);
                Target::ClosestAbs(sq)
            }
        };
        let mut ecfg = EigConfig {
            num_evals: k,
            target,
            max_basis_size: max_basis,
            min_restart_size: min_restart,
            max_block_size: cfg.max_block_size,
            locking: false,
            extraction: Extraction::RayleighRitz,
            max_matvecs: cfg.max_matvecs / 2,
            seed: cfg.seed,
            ritz_scale: RitzScale::Squared,
            norm: est,
            ..EigConfig::default()
        };
        cfg.stage1.apply(&mut ecfg);
        let delta = cfg.eps;
        let test = move |lambda: f64, _: &[f64], rnorm: f64, e: &NormEstimate| {
            stage1_convergence_test(lambda, rnorm, e, delta)
        };
        let eig = eig_solve(
            &c_op,
            &ecfg,
            &test,
            EigInputs {
                initial_guesses: init_right,
                constraints: cons_right,
                precond: stage1_precond,
                monitor: None,
            },
        )?;
        stats.absorb(&eig.stats);
        est = eig.norm;
        stage1_rnorms = eig.residual_norms.clone();
        let (b, mut u, v) = stage1_postprocess(&counted, &eig, k, est.a_norm(), &left_cons, &mut rng)?;
        let a_norm = est.a_norm();
        let tiny_slots: Vec<usize> = (0..k).filter(|&i| b.tiny[i]).collect();
        if !tiny_slots.is_empty() {
            complete_left_null(&counted, &mut u, &v, &tiny_slots, &left_cons, est, cfg, &mut rng)?;
        }
        let mut pass = Vec::with_capacity(k);
        for i in 0..k {
            let r = compute_svd_residual(&counted, b.sigma_tilde[i], u.col(i), v.col(i))?;
            pass.push(!b.missing[i] && r < a_norm * cfg.eps);
        }
        let all_pass = pass.iter().all(|p| *p);
        held = (0..k).map(|i| b.tiny[i] && pass[i]).collect();
        stats.stage1_matvecs = counted.matvecs();
        final_sigma = b.sigma_tilde.clone();
        final_u = u;
        final_v = v;
        need_stage2 = cfg.method == Method::Phsvds && !all_pass;
        bridge = Some(b);
    } else {
        final_sigma = vec![0.0; k];
        final_u = DenseBlock::zeros(m, k);
        final_v = DenseBlock::zeros(n, k);
        if cfg.a_norm.is_none() {
            let norm = power_norm_estimate(&counted, 20, &mut rng);
            est.update(&[norm * norm]);
        }
        stats.stage1_matvecs = counted.matvecs();
    }

    if need_stage2 {
        let before = counted.matvecs();
        let b_op = AugmentedOperator::new(&counted);
        let a_norm = est.a_norm();
        let active: Vec<usize> = (0..k).filter(|&i| !held[i]).collect();
        let k2 = active.len();
        let guesses = match &bridge {
            Some(b) => {
                let mut g = DenseBlock::empty(n + m);
                for &i in &active {
                    g.push_col(b.guesses.col(i))?;
                }
                Some(g)
            }
            None => match (init_right, init_left) {
                (Some(r), Some(l)) if r.cols() == l.cols() => {
                    let mut g = DenseBlock::empty(n + m);
                    for j in 0..r.cols() {
                        let mut c = r.col(j).to_vec();
                        c.extend_from_slice(l.col(j));
                        let s = norm2(&c);
                        c.iter_mut().for_each(|x| *x /= s.max(f64::MIN_POSITIVE));
                        g.push_col(&c)?;
                    }
                    Some(g)
                }
                _ => None,
            },
        };
        let (target, extraction, locking, guesses) = match (&cfg.target, &bridge) {
            (SvdTarget::Largest, _) => (Target::LargestAlgebraic, Extraction::RayleighRitz, false, guesses),
            (_, Some(b)) => {
                let shifts = stage2_shifts(b, a_norm);
                let mut order = active.clone();
                order.sort_by(|&i, &j| shifts[i].total_cmp(&shifts[j]));
                let sorted: Vec<f64> = order.iter().map(|&i| shifts[i]).collect();
                let mut g = DenseBlock::empty(n + m);
                for &i in &order {
                    if b.missing[i] {
                        continue;
                    }
                    g.push_col(b.guesses.col(i))?;
                }
                (Target::ClosestGeq(sorted), Extraction::RefinedConstShift, true, Some(g))
            }
            (SvdTarget::Smallest, None) => (
                Target::ClosestGeq(vec![a_norm * EPS; k]),
                Extraction::RefinedConstShift,
                true,
                guesses,
            ),
            (SvdTarget::ClosestTo(vals), None) => {
                let mut s = vals.clone();
                s.sort_by(f64::total_cmp);
                (Target::ClosestGeq(s), Extraction::RefinedConstShift, true, guesses)
            }
        };
        let mut ecfg = EigConfig {
            num_evals: k2,
            target,
            max_basis_size: max_basis,
            min_restart_size: min_restart,
            max_block_size: cfg.max_block_size,
            locking,
            extraction,
            max_matvecs: cfg.max_matvecs.saturating_sub(before) / 2,
            deactivate_krylov_init: true,
            seed: cfg.seed.wrapping_add(1),
            accept_at_accuracy_limit: false,
            ritz_scale: RitzScale::Linear,
            norm: est,
            ..EigConfig::default()
        };
        cfg.stage2.apply(&mut ecfg);
        let mut constraints = stack_augmented(cons_left, cons_right, m, n);
        for i in (0..k).filter(|&i| held[i]) {
            let mut right = final_v.col(i).to_vec();
            right.resize(n + m, 0.0);
            constraints.push_col(&right)?;
            let mut left = vec![0.0; n];
            left.extend_from_slice(final_u.col(i));
            constraints.push_col(&left)?;
        }
        let delta = cfg.eps;
        let counted_ref = &counted;
        let test = move |lambda: f64, x: &[f64], rnorm: f64, e: &NormEstimate| {
            stage2_convergence_test(counted_ref, lambda, x, rnorm, e, delta)
        };
        let mut hooks = hooks;
        let monitor: Option<&mut dyn FnMut(&IterationView)> = match hooks.stage2_monitor.take() {
            Some(f) => Some(f),
            None => None,
        };
        let eig = eig_solve(
            &b_op,
            &ecfg,
            &test,
            EigInputs {
                initial_guesses: guesses.as_ref().filter(|g| g.cols() > 0),
                constraints: (constraints.cols() > 0).then_some(&constraints),
                precond: stage2_precond,
                monitor,
            },
        )?;
        stats.absorb(&eig.stats);
        est = eig.norm;
        stats.stage2_matvecs = counted.matvecs() - before;
        let (mut kept_sigma, mut kept_u, mut kept_v) = (Vec::new(), DenseBlock::empty(m), DenseBlock::empty(n));
        for i in (0..k).filter(|&i| held[i]) {
            kept_sigma.push(final_sigma[i]);
            kept_u.push_col(final_u.col(i))?;
            kept_v.push_col(final_v.col(i))?;
        }
        // stage-1 triplets stand in for slots stage 2 did not return
        let mut leftover: Vec<usize> = if bridge.is_some() { active.clone() } else { Vec::new() };
        for &val in eig.values.iter().take(k2) {
            if let Some(p) = (0..leftover.len())
                .min_by(|&x, &y| (final_sigma[leftover[x]] - val.abs()).abs().total_cmp(&(final_sigma[leftover[y]] - val.abs()).abs()))
            {
                leftover.remove(p);
            }
        }
        let missing_out = k2.saturating_sub(eig.values.len());
        for &i in leftover.iter().take(missing_out) {
            kept_sigma.push(final_sigma[i]);
            kept_u.push_col(final_u.col(i))?;
            kept_v.push_col(final_v.col(i))?;
        }
        final_sigma = kept_sigma;
        final_u = kept_u;
        final_v = kept_v;
        for j in 0..eig.values.len() {
            let x = eig.vectors.col(j);
            let (v, u) = x.split_at(n);
            let (nv, nu) = (norm2(v), norm2(u));
            let v: Vec<f64> = if nv > 0.0 {
                v.iter().map(|t| t / nv).collect()
            } else {
                random_unit(n, &mut rng)
            };
            let u: Vec<f64> = if nu > 0.0 {
                u.iter().map(|t| t / nu).collect()
            } else {
                random_unit(m, &mut rng)
            };
            final_sigma.push(eig.values[j].abs());
            final_v.push_col(&v)?;
            final_u.push_col(&u)?;
        }
    }

    let a_norm = est.a_norm();
    let tiny_at = tiny_threshold(&oriented, a_norm);
    let mut rows: Vec<(f64, Vec<f64>, Vec<f64>, f64, bool)> = Vec::with_capacity(k);
    for j in 0..final_sigma.len() {
        let tiny = final_sigma[j] < tiny_at;
        let s = if tiny { 0.0 } else { final_sigma[j] };
        let r = compute_svd_residual(&oriented, s, final_u.col(j), final_v.col(j))?;
        rows.push((s, final_u.col(j).to_vec(), final_v.col(j).to_vec(), r, tiny));
    }
    match &cfg.target {
        SvdTarget::Largest => rows.sort_by(|x, y| y.0.total_cmp(&x.0)),
        SvdTarget::Smallest => rows.sort_by(|x, y| x.0.total_cmp(&y.0)),
        SvdTarget::ClosestTo(vals) => {
            let dist = |s: f64| vals.iter().map(|v| (s - v).abs()).fold(f64::INFINITY, f64::min);
            rows.sort_by(|x, y| dist(x.0).total_cmp(&dist(y.0)));
        }
    }
    let mut result = SvdsResult::empty(m0, n0);
    for (s, u, v, r, tiny) in rows {
        let (left, right) = if swapped { (v, u) } else { (u, v) };
        result.sigma.push(s);
        result.u.push_col(&left)?;
        result.v.push_col(&right)?;
        result.rnorms.push(r);
        result.converged.push(r < a_norm * cfg.eps);
        result.tiny.push(tiny);
    }
    result.a_norm = a_norm;
    result.stage1_rnorms = stage1_rnorms;
    stats.seconds = start.elapsed().as_secs_f64();
    result.stats = stats;
    Ok(result)
}

/// Outcome of [`estimate_condition_number`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CondEstimate {
    pub kappa: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// `σ_min` fell below `‖A‖·ε·max(m, n)`; `kappa` is infinite.
    pub singular: bool,
    /// Both solves met their test. Otherwise `kappa` is only a lower bound.
    pub converged: bool,
    pub matvecs: usize,
}

/// Estimates `κ = σ_max/σ_min` from two loose single-vector solves on `C`,
/// each stopped once `‖r‖ ≤ λ/10`.
pub fn estimate_condition_number(
    a: &dyn SvdOperator,
    precond: Option<&dyn Preconditioner>,
    cfg: &SvdsConfig,
) -> Result<CondEstimate> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let oriented = orient_problem(a);
    let swapped = oriented.swapped();
    let counted = CountingOperator::new(&oriented);
    let c_op = NormalOperator::new(&counted);
    let precond = precond.filter(|p| matches!((p.mode(), swapped), (PrecondMode::AtA, false) | (PrecondMode::AAt, true)));
    let (max_basis, min_restart) = cfg.basis_sizes();
    let test = |lambda: f64, _: &[f64], rnorm: f64, e: &NormEstimate| rnorm <= (lambda.abs() / 10.0).max(EPS * e.c_norm());
    let mut est = match cfg.a_norm {
        Some(v) => NormEstimate::with_a_norm(v),
        None => NormEstimate::new(),
    };
    let mut values = [0.0; 2];
    let mut converged = true;
    for (slot, target) in [Target::LargestAlgebraic, Target::SmallestAlgebraic].into_iter().enumerate() {
        let mut ecfg = EigConfig {
            num_evals: 1,
            target,
            max_basis_size: max_basis,
            min_restart_size: min_restart,
            max_block_size: 1,
            max_matvecs: cfg.max_matvecs / 4,
            seed: cfg.seed.wrapping_add(slot as u64),
            norm: est,
            ..EigConfig::default()
        };
        cfg.stage1.apply(&mut ecfg);
        let eig = eig_solve(
            &c_op,
            &ecfg,
            &test,
            EigInputs {
                precond: if slot == 1 { precond } else { None },
                ..EigInputs::default()
            },
        )?;
        est = eig.norm;
        values[slot] = eig.values[0].max(0.0).sqrt();
        converged &= eig.converged[0];
    }
    let (sigma_max, sigma_min) = (values[0], values[1]);
    let singular = sigma_min < tiny_threshold(&oriented, est.a_norm().max(sigma_max));
    let kappa = if singular { f64::INFINITY } else { sigma_max / sigma_min };
    Ok(CondEstimate {
        kappa,
        sigma_max,
        sigma_min: if singular { 0.0 } else { sigma_min },
        singular,
        converged,
        matvecs: counted.matvecs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matio::SparseMatrixCsr;

    #[test]
    fn residual_by_hand() {
        let a = SparseMatrixCsr::diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let e1 = [1.0, 0.0, 0.0];
        let r = compute_svd_residual(&a, 2.0, &e1, &e1).unwrap();
        assert!((r - SQRT_2).abs() < 1e-15);
        assert_eq!(compute_svd_residual(&a, 1.0, &e1, &e1).unwrap(), 0.0);
        assert!(compute_svd_residual(&a, 1.0, &[1.0], &e1).is_err());
    }

    #[test]
    fn stage1_test_formula() {
        let est = NormEstimate::with_a_norm(1.0);
        assert!(stage1_convergence_test(1.0, 5e-7, &est, 1e-6));
        assert!(!stage1_convergence_test(1e-20, 5e-16, &est, 1e-6));
        assert!(stage1_convergence_test(1e-20, 2e-16, &est, 1e-6));
    }

    #[test]
    fn stage2_test_levels() {
        let a = SparseMatrixCsr::diagonal(&[1.0, 2.0]).unwrap();
        let est = NormEstimate::with_a_norm(2.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(stage2_convergence_test(&a, 1.0, &[s, 0.0, s, 0.0], 0.0, &est, 1e-10));
        assert!(!stage2_convergence_test(&a, 1.0, &[s, 0.0, s, 0.0], 1.0, &est, 1e-10));

        let a = SparseMatrixCsr::from_triplets(2, 1, &[(0, 0, 1.0)]).unwrap();
        let est = NormEstimate::with_a_norm(1.0);
        assert!(!stage2_convergence_test(&a, 0.0, &[0.0, 0.0, 1.0], 0.0, &est, 1e-6));
    }

    #[test]
    fn shift_formula() {
        let bridge = StageBridge {
            sigma_tilde: vec![1.0, 0.0],
            rc_norms: vec![1e-8, 1.0],
            guesses: DenseBlock::empty(3),
            tiny: vec![false, true],
            missing: vec![false, false],
        };
        let s = stage2_shifts(&bridge, 1.0);
        assert!((s[0] - (1.0 - 1.41421356e-8)).abs() < 1e-15);
        assert_eq!(s[1], EPS);
    }

    #[test]
    fn orientation() {
        let a = DenseBlock::zeros(3, 5);
        let o = orient_problem(&a);
        assert!(o.swapped());
        assert_eq!((o.nrows(), o.ncols()), (5, 3));
        let sq = DenseBlock::zeros(4, 4);
        assert!(!orient_problem(&sq).swapped());
    }

    #[test]
    fn smallest_of_diagonal_uses_stage1_only() {
        let a = SparseMatrixCsr::diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let cfg = SvdsConfig {
            num_svals: 2,
            target: SvdTarget::Smallest,
            eps: 1e-10,
            ..SvdsConfig::default()
        };
        let r = svds_solve(&a, None, &cfg).unwrap();
        assert!((r.sigma[0] - 1.0).abs() < 1e-10 && (r.sigma[1] - 2.0).abs() < 1e-10);
        assert_eq!(r.stats.stage2_matvecs, 0);
        assert!((r.u.get(0, 0).abs() - 1.0).abs() < 1e-10);
        assert!((r.v.get(1, 1).abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn multiplicity_on_diagonal() {
        let a = SparseMatrixCsr::diagonal(&[1.0, 1.0, 2.0, 3.0]).unwrap();
        let cfg = SvdsConfig {
            num_svals: 2,
            target: SvdTarget::Smallest,
            eps: 1e-10,
            ..SvdsConfig::default()
        };
        let r = svds_solve(&a, None, &cfg).unwrap();
        assert!((r.sigma[0] - 1.0).abs() < 1e-10 && (r.sigma[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_configurations() {
        let a = SparseMatrixCsr::diagonal(&[1.0, 2.0]).unwrap();
        let too_many = SvdsConfig {
            num_svals: 3,
            ..SvdsConfig::default()
        };
        assert!(matches!(svds_solve(&a, None, &too_many), Err(Error::InvalidConfig(_))));
        let loose = SvdsConfig {
            eps: 1e-20,
            ..SvdsConfig::default()
        };
        assert!(svds_solve(&a, None, &loose).is_err());
        let none = SvdsConfig {
            num_svals: 0,
            ..SvdsConfig::default()
        };
        assert!(svds_solve(&a, None, &none).unwrap().sigma.is_empty());
    }

    #[test]
    fn condition_number_of_diagonal() {
        let a = SparseMatrixCsr::diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let c = estimate_condition_number(&a, None, &SvdsConfig::default()).unwrap();
        assert!((c.kappa - 5.0).abs() <= 0.5);
        let z = SparseMatrixCsr::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let c = estimate_condition_number(&z, None, &SvdsConfig::default()).unwrap();
        assert!(c.singular && c.kappa.is_infinite());
    }
}
