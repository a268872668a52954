//! Generalized Davidson eigensolver with locally optimal `+k` restarting
//! (GD+k) for symmetric operators.
//!
//! The solver keeps the basis `V`, its image `W = Op·V` and the projection
//! `H = VᵀW`, so residuals cost no extra operator applications. Besides
//! Rayleigh–Ritz it offers a refined extraction at a constant shift `τ`,
//! maintained through an incrementally updated QR factorization of
//! `W − τV`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{
    norm2, orthonormalize_with, qr_append, random_unit, qr_factor, qr_restart, small_svd, sym_eig, DeficientPolicy, DenseBlock,
    SmallSymmetric, SmallUpperTriangular, SymEig,
};
use crate::operators::{apply_block, LinearOperator, NormEstimate, Preconditioner, RitzScale, EPS};

/// Which eigenvalues to compute.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    LargestAlgebraic,
    SmallestAlgebraic,
    /// For each shift in turn, the smallest eigenvalue not below it.
    /// Shifts must be ascending.
    ClosestGeq(Vec<f64>),
    /// For each shift in turn, the eigenvalue nearest to it.
    ClosestAbs(Vec<f64>),
}

impl Target {
    fn shifts(&self) -> Option<&[f64]> {
        match self {
            Target::ClosestGeq(s) | Target::ClosestAbs(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_interior(&self) -> bool {
        self.shifts().is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extraction {
    RayleighRitz,
    /// Minimizes `‖(Op − τI)Vy‖` over unit `y` with `τ` the active target shift.
    RefinedConstShift,
}

#[derive(Clone, Debug)]
pub struct EigConfig {
    pub num_evals: usize,
    pub target: Target,
    pub max_basis_size: usize,
    pub min_restart_size: usize,
    pub plus_k: usize,
    pub max_block_size: usize,
    /// Hard locking: converged vectors leave the basis immediately, with a
    /// forced restart. Otherwise converged vectors stay in the basis and a
    /// final Rayleigh–Ritz pass runs over them.
    pub locking: bool,
    pub extraction: Extraction,
    /// Budget of operator column applications.
    pub max_matvecs: usize,
    /// Start from the guesses (plus random fill) only, without growing a Krylov space.
    pub deactivate_krylov_init: bool,
    pub seed: u64,
    /// Reorthonormalize `V` and recompute `W` once residuals approach the
    /// accumulated rounding level. Disabling it is meant for experiments.
    pub resets: bool,
    /// Once residuals sit at `10·‖Op‖·ε` for `max_basis_size` consecutive
    /// iterations without passing the test, accept residuals at that level.
    pub accept_at_accuracy_limit: bool,
    pub ritz_scale: RitzScale,
    /// Starting norm estimate; a user-supplied norm is kept fixed.
    pub norm: NormEstimate,
}

impl Default for EigConfig {
    fn default() -> Self {
        Self {
            num_evals: 1,
            target: Target::LargestAlgebraic,
            max_basis_size: 15,
            min_restart_size: 6,
            plus_k: 1,
            max_block_size: 1,
            locking: false,
            extraction: Extraction::RayleighRitz,
            max_matvecs: usize::MAX,
            deactivate_krylov_init: false,
            seed: 0,
            resets: true,
            accept_at_accuracy_limit: true,
            ritz_scale: RitzScale::Squared,
            norm: NormEstimate::new(),
        }
    }
}

/// Decides whether an eigenpair approximation is accepted.
pub trait ConvergenceTest {
    fn is_converged(&self, value: f64, vector: &[f64], rnorm: f64, est: &NormEstimate) -> bool;
}

impl<F> ConvergenceTest for F
where
    F: Fn(f64, &[f64], f64, &NormEstimate) -> bool,
{
    fn is_converged(&self, value: f64, vector: &[f64], rnorm: f64, est: &NormEstimate) -> bool {
        self(value, vector, rnorm, est)
    }
}

/// `‖r‖ ≤ tol`.
#[derive(Clone, Copy, Debug)]
pub struct AbsoluteTolerance(pub f64);

impl ConvergenceTest for AbsoluteTolerance {
    fn is_converged(&self, _: f64, _: &[f64], rnorm: f64, _: &NormEstimate) -> bool {
        rnorm <= self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EigStats {
    pub matvecs: usize,
    pub precond_applies: usize,
    pub restarts: usize,
    pub resets: usize,
    pub outer_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct EigResult {
    pub values: Vec<f64>,
    pub vectors: DenseBlock,
    /// `‖Op·xᵢ − λᵢxᵢ‖`, recomputed with fresh operator applications at exit.
    pub residual_norms: Vec<f64>,
    pub converged: Vec<bool>,
    pub stats: EigStats,
    pub norm: NormEstimate,
    /// Some pair was accepted at the attainable accuracy limit rather than by the test.
    pub accuracy_limited: bool,
}

impl EigResult {
    pub fn converged_count(&self) -> usize {
        self.converged.iter().filter(|c| **c).count()
    }

    fn empty(n: usize, norm: NormEstimate) -> Self {
        Self {
            values: Vec::new(),
            vectors: DenseBlock::empty(n),
            residual_norms: Vec::new(),
            converged: Vec::new(),
            stats: EigStats::default(),
            norm,
            accuracy_limited: false,
        }
    }
}

/// Snapshot handed to a monitor once per outer iteration, after extraction
/// and convergence testing.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub basis: &'a DenseBlock,
    pub image: &'a DenseBlock,
    pub projection: &'a SmallSymmetric,
    pub ritz: &'a SymEig,
    pub shift: Option<f64>,
    pub refined: bool,
    /// Refined coefficients minimizing `‖(Op − τ)·V·y‖`, when extraction is refined.
    pub refined_coefs: Option<&'a [f64]>,
    /// Leading candidate.
    pub value: f64,
    pub coefs: &'a [f64],
    pub rnorm: f64,
    pub converged: bool,
    pub num_locked: usize,
    pub restarts: usize,
    pub estimate: NormEstimate,
}

/// Optional inputs to [`eig_solve`].
#[derive(Default)]
pub struct EigInputs<'a> {
    pub initial_guesses: Option<&'a DenseBlock>,
    /// Returned vectors (and the whole search) stay orthogonal to these.
    pub constraints: Option<&'a DenseBlock>,
    pub precond: Option<&'a dyn Preconditioner>,
    pub monitor: Option<&'a mut dyn FnMut(&IterationView)>,
}

/// Indices of `values` in order of preference for `target` at `shift`.
///
/// Ties keep the lower index first.
pub fn preference_order(values: &[f64], target: &Target, shift: Option<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    match target {
        Target::LargestAlgebraic => idx.sort_by(|&a, &b| values[b].total_cmp(&values[a])),
        Target::SmallestAlgebraic => idx.sort_by(|&a, &b| values[a].total_cmp(&values[b])),
        Target::ClosestGeq(_) => {
            let tau = shift.unwrap_or(f64::NEG_INFINITY);
            let (mut above, mut below): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| values[i] >= tau);
            above.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            below.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
            above.extend(below);
            idx = above;
        }
        Target::ClosestAbs(_) => {
            let tau = shift.unwrap_or(0.0);
            idx.sort_by(|&a, &b| (values[a] - tau).abs().total_cmp(&(values[b] - tau).abs()));
        }
    }
    idx
}

/// The smallest value `≥ shift`, or failing that the largest one below it.
pub fn select_interior_candidate(values: &[f64], shift: f64) -> Option<usize> {
    preference_order(values, &Target::ClosestGeq(vec![shift]), Some(shift))
        .first()
        .copied()
}

/// An approximate eigenpair expressed in the current basis.
#[derive(Clone, Debug)]
struct Candidate {
    value: f64,
    coefs: Vec<f64>,
    x: Vec<f64>,
    r: Vec<f64>,
    rnorm: f64,
}

struct RefinedQr {
    q: DenseBlock,
    r: SmallUpperTriangular,
    shift: f64,
}

struct Extracted {
    ritz: SymEig,
    /// `(value, coefs)` in preference order.
    ordered: Vec<(f64, Vec<f64>)>,
    shift: Option<f64>,
    /// Minimizer of `‖(Op − τ)·V·y‖` over unit `y`.
    refined_min: Option<Vec<f64>>,
}

struct Sizes {
    max_basis: usize,
    min_restart: usize,
    block: usize,
}

fn sizes(cfg: &EigConfig) -> Result<Sizes> {
    let block = cfg.max_block_size.max(1);
    if cfg.min_restart_size == 0 {
        return Err(Error::InvalidConfig("min_restart_size must be at least 1".into()));
    }
    if cfg.min_restart_size + cfg.plus_k + block > cfg.max_basis_size {
        return Err(Error::InvalidConfig(format!(
            "min_restart_size + plus_k + block size ({}) exceeds max_basis_size ({})",
            cfg.min_restart_size + cfg.plus_k + block,
            cfg.max_basis_size
        )));
    }
    let mut min_restart = cfg.min_restart_size;
    let mut max_basis = cfg.max_basis_size;
    if !cfg.locking && cfg.num_evals > min_restart {
        // soft locking keeps every wanted vector through restarts
        min_restart = cfg.num_evals;
        max_basis = max_basis.max(min_restart + cfg.plus_k + block);
        log::debug!("soft locking: restart size raised to {min_restart}, basis to {max_basis}");
    }
    Ok(Sizes {
        max_basis,
        min_restart,
        block,
    })
}

struct Solver<'a> {
    op: &'a dyn LinearOperator,
    cfg: &'a EigConfig,
    test: &'a dyn ConvergenceTest,
    precond: Option<&'a dyn Preconditioner>,
    sizes: Sizes,
    rng: ChaCha8Rng,
    n: usize,
    constraints: DenseBlock,
    locked: DenseBlock,
    locked_values: Vec<f64>,
    v: DenseBlock,
    w: DenseBlock,
    h: SmallSymmetric,
    qr: Option<RefinedQr>,
    prev_coefs: Vec<Vec<f64>>,
    restarts_since_reset: usize,
    est: NormEstimate,
    stats: EigStats,
    stuck: usize,
    at_limit: bool,
}

/// Computes `cfg.num_evals` eigenpairs of the symmetric operator `op`.
///
/// When the budget runs out the result holds the best approximations found,
/// flagged in [`EigResult::converged`].
pub fn eig_solve(
    op: &dyn LinearOperator,
    cfg: &EigConfig,
    test: &dyn ConvergenceTest,
    inputs: EigInputs<'_>,
) -> Result<EigResult> {
    let n = op.dim();
    let EigInputs {
        initial_guesses,
        constraints,
        precond,
        mut monitor,
    } = inputs;
    if let Some(g) = initial_guesses {
        if g.rows() != n {
            return Err(Error::dim("eig_solve initial guesses", n, g.rows()));
        }
    }
    if let Some(p) = precond {
        if p.dim() != n {
            return Err(Error::dim("eig_solve preconditioner", n, p.dim()));
        }
    }
    if let Some(s) = cfg.target.shifts() {
        if s.is_empty() {
            return Err(Error::InvalidConfig("interior target needs at least one shift".into()));
        }
        if s.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("target shifts must be ascending".into()));
        }
    }
    let sizes = sizes(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cons = match constraints {
        Some(c) => {
            if c.rows() != n {
                return Err(Error::dim("eig_solve constraints", n, c.rows()));
            }
            c.clone()
        }
        None => DenseBlock::empty(n),
    };
    orthonormalize_with(&mut cons, &[], 0, DeficientPolicy::Drop, &mut rng)?;
    let free = n - cons.cols();
    if cfg.num_evals > free {
        return Err(Error::InvalidConfig(format!(
            "requested {} eigenpairs but only {free} dimensions are available",
            cfg.num_evals
        )));
    }
    if cfg.num_evals == 0 {
        return Ok(EigResult::empty(n, cfg.norm));
    }
    let mut solver = Solver {
        op,
        cfg,
        test,
        precond,
        sizes,
        rng,
        n,
        constraints: cons,
        locked: DenseBlock::empty(n),
        locked_values: Vec::new(),
        v: DenseBlock::empty(n),
        w: DenseBlock::empty(n),
        h: SmallSymmetric::zeros(0),
        qr: None,
        prev_coefs: Vec::new(),
        restarts_since_reset: 0,
        est: cfg.norm,
        stats: EigStats::default(),
        stuck: 0,
        at_limit: false,
    };
    if free <= solver.sizes.max_basis {
        return solver.dense_solve();
    }
    solver.init(initial_guesses)?;
    solver.iterate(&mut monitor)
}

impl Solver<'_> {
    fn apply(&mut self, x: &DenseBlock) -> Result<DenseBlock> {
        self.stats.matvecs += x.cols();
        apply_block(self.op, x)
    }

    fn op_norm(&self) -> f64 {
        self.est.op_norm(self.cfg.ritz_scale)
    }

    fn refined(&self) -> bool {
        self.cfg.extraction == Extraction::RefinedConstShift && self.cfg.target.is_interior()
    }

    fn geq_target(&self) -> bool {
        matches!(self.cfg.target, Target::ClosestGeq(_))
    }

    fn active_shift(&self) -> Option<f64> {
        let shifts = self.cfg.target.shifts()?;
        let slot = if self.cfg.locking { self.locked.cols() } else { 0 };
        Some(shifts[slot.min(shifts.len() - 1)])
    }

    fn is_converged(&self, c: &Candidate) -> bool {
        if self.test.is_converged(c.value, &c.x, c.rnorm, &self.est) {
            return true;
        }
        self.at_limit && c.rnorm <= 10.0 * self.op_norm() * EPS
    }

    fn candidate(&self, value: f64, coefs: Vec<f64>) -> Candidate {
        let x = self.v.mul_vec(&coefs);
        let mut r = self.w.mul_vec(&coefs);
        for (ri, xi) in r.iter_mut().zip(&x) {
            *ri -= value * xi;
        }
        let rnorm = norm2(&r);
        Candidate {
            value,
            coefs,
            x,
            r,
            rnorm,
        }
    }

    fn rebuild_qr(&mut self) -> Result<()> {
        if !self.refined() {
            self.qr = None;
            return Ok(());
        }
        let tau = self.active_shift().expect("refined extraction has a shift");
        let mut m = self.w.clone();
        for j in 0..m.cols() {
            let vj = self.v.col(j).to_vec();
            for (mi, vi) in m.col_mut(j).iter_mut().zip(&vj) {
                *mi -= tau * vi;
            }
        }
        let (q, r) = qr_factor(&m, &mut self.rng)?;
        self.qr = Some(RefinedQr { q, r, shift: tau });
        Ok(())
    }

    fn push_basis(&mut self, t: &DenseBlock) -> Result<()> {
        let wt = self.apply(t)?;
        let tau = self.qr.as_ref().map(|f| f.shift);
        for j in 0..t.cols() {
            self.v.push_col(t.col(j))?;
            self.w.push_col(wt.col(j))?;
            let col = self.v.t_mul_vec(wt.col(j));
            self.h.push_col(&col)?;
            if let (Some(tau), Some(f)) = (tau, self.qr.as_mut()) {
                let shifted: Vec<f64> = wt.col(j).iter().zip(t.col(j)).map(|(w, v)| w - tau * v).collect();
                qr_append(&mut f.q, &mut f.r, &shifted, &mut self.rng)?;
            }
        }
        Ok(())
    }

    fn init(&mut self, guesses: Option<&DenseBlock>) -> Result<()> {
        let room = self.sizes.max_basis - self.sizes.block;
        let mut v0 = match guesses {
            Some(g) if g.cols() > 0 => g.cols_range(0..g.cols().min(room)),
            _ => DenseBlock::empty(self.n),
        };
        let b0 = v0.cols().max(self.cfg.num_evals.min(self.sizes.min_restart)).max(1);
        while v0.cols() < b0 {
            v0.push_col(&random_unit(self.n, &mut self.rng))?;
        }
        orthonormalize_with(&mut v0, &[&self.constraints], 0, DeficientPolicy::Replace, &mut self.rng)?;
        self.rebuild_qr()?;
        self.push_basis(&v0)?;
        if !self.cfg.deactivate_krylov_init {
            let limit = self.sizes.min_restart.min(self.n - self.constraints.cols());
            while self.v.cols() < limit {
                let src = self.v.cols() - b0;
                let mut t = DenseBlock::from_col_major(self.n, 1, self.w.col(src).to_vec())?;
                orthonormalize_with(
                    &mut t,
                    &[&self.constraints, &self.v],
                    0,
                    DeficientPolicy::Replace,
                    &mut self.rng,
                )?;
                self.push_basis(&t)?;
            }
        }
        Ok(())
    }

    fn extract(&mut self) -> Result<Extracted> {
        let ritz = sym_eig(&self.h);
        self.est.update_scaled(&ritz.values, self.cfg.ritz_scale);
        let shift = self.active_shift();
        let mut refined_min = None;
        let ordered = if self.refined() {
            let f = self.qr.as_ref().expect("refined factorization present");
            let tau = shift.expect("refined extraction has a shift");
            if f.shift != tau || f.r.dim() != self.v.cols() {
                return Err(Error::StaleFactorization {
                    factored: f.shift,
                    active: tau,
                });
            }
            let svd = small_svd(&f.r);
            refined_min = svd.values.len().checked_sub(1).map(|i| svd.right_vectors.col(i).to_vec());
            let (mut above, mut below): (Vec<_>, Vec<_>) = (0..svd.values.len())
                .rev()
                .map(|i| {
                    let y = svd.right_vectors.col(i).to_vec();
                    (self.h.quadratic_form(&y), y, svd.values[i])
                })
                .partition(|(theta, _, s)| !(self.geq_target() && theta + 0.5 * s < tau));
            above.append(&mut below);
            above.into_iter().map(|(theta, y, _)| (theta, y)).collect()
        } else {
            preference_order(&ritz.values, &self.cfg.target, shift)
                .into_iter()
                .map(|i| (ritz.values[i], ritz.vectors.col(i).to_vec()))
                .collect()
        };
        Ok(Extracted {
            ritz,
            ordered,
            shift,
            refined_min,
        })
    }

    /// Coefficient vectors to keep at restart, best first.
    fn restart_order(&self, ex: &Extracted) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        if self.refined() {
            out.extend(ex.ordered.iter().map(|(_, y)| y.clone()));
            return out;
        }
        let shift = ex.shift;
        for i in preference_order(&ex.ritz.values, &self.cfg.target, shift) {
            out.push(ex.ritz.vectors.col(i).to_vec());
        }
        out
    }

    /// Compresses the basis to `V·Y`. `exclude` (a unit coefficient vector) is
    /// projected out of the retained span.
    fn restart(&mut self, keep: Vec<Vec<f64>>, exclude: Option<&[f64]>) -> Result<()> {
        let g = self.v.cols();
        let mut y = DenseBlock::empty(g);
        if let Some(e) = exclude {
            y.push_col(e)?;
        }
        let lead = y.cols();
        for c in keep.iter().take(self.sizes.min_restart) {
            y.push_col(c)?;
        }
        for p in self.prev_coefs.iter().take(self.cfg.plus_k) {
            let mut padded = p.clone();
            padded.resize(g, 0.0);
            y.push_col(&padded)?;
        }
        orthonormalize_with(&mut y, &[], 0, DeficientPolicy::Drop, &mut self.rng)?;
        if lead == 1 {
            y.remove_col(0);
        }
        y.truncate_cols(self.sizes.min_restart + self.cfg.plus_k);
        self.v = self.v.mul(&y)?;
        self.w = self.w.mul(&y)?;
        self.h = self.h.congruence(&y)?;
        if let Some(f) = self.qr.as_mut() {
            qr_restart(&mut f.q, &mut f.r, &y)?;
        }
        self.prev_coefs.clear();
        self.stats.restarts += 1;
        self.restarts_since_reset += 1;
        Ok(())
    }

    fn reset(&mut self) -> Result<()> {
        let mut v = std::mem::replace(&mut self.v, DenseBlock::empty(self.n));
        orthonormalize_with(
            &mut v,
            &[&self.constraints, &self.locked],
            0,
            DeficientPolicy::Replace,
            &mut self.rng,
        )?;
        self.w = self.apply(&v)?;
        self.h = SmallSymmetric::from_block(&v.t_mul(&self.w)?)?;
        self.v = v;
        self.rebuild_qr()?;
        self.restarts_since_reset = 0;
        self.stats.resets += 1;
        Ok(())
    }

    fn expand(&mut self, working: &[&Candidate]) -> Result<()> {
        let mut t = DenseBlock::empty(self.n);
        for c in working {
            t.push_col(&c.r)?;
        }
        if let Some(p) = self.precond {
            let mut out = DenseBlock::zeros(self.n, t.cols());
            p.apply(t.as_slice(), self.n, out.as_mut_slice(), self.n, t.cols());
            self.stats.precond_applies += t.cols();
            t = out;
        }
        orthonormalize_with(
            &mut t,
            &[&self.constraints, &self.locked, &self.v],
            0,
            DeficientPolicy::Replace,
            &mut self.rng,
        )?;
        self.push_basis(&t)?;
        self.stats.outer_iterations += 1;
        Ok(())
    }

    fn iterate(mut self, monitor: &mut Option<&mut dyn FnMut(&IterationView)>) -> Result<EigResult> {
        let k = self.cfg.num_evals;
        let patience = self.cfg.max_basis_size;
        let mut last: Vec<Candidate>;
        let mut iteration = 0usize;
        loop {
            let ex = self.extract()?;
            let wanted = if self.cfg.locking {
                self.sizes.block
            } else {
                k
            };
            let ntest = wanted.min(ex.ordered.len());
            last = ex.ordered[..ntest]
                .iter()
                .map(|(val, y)| self.candidate(*val, y.clone()))
                .collect();
            let conv: Vec<bool> = last.iter().map(|c| self.is_converged(c)).collect();

            if let Some(m) = monitor.as_mut() {
                m(&IterationView {
                    iteration,
                    basis: &self.v,
                    image: &self.w,
                    projection: &self.h,
                    ritz: &ex.ritz,
                    shift: ex.shift,
                    refined: self.refined(),
                    refined_coefs: ex.refined_min.as_deref(),
                    value: last[0].value,
                    coefs: &last[0].coefs,
                    rnorm: last[0].rnorm,
                    converged: conv[0],
                    num_locked: self.locked.cols(),
                    restarts: self.stats.restarts,
                    estimate: self.est,
                });
            }
            iteration += 1;

            // rounding in the restarted W is about √restarts·‖Op‖·ε
            let drift = (self.restarts_since_reset as f64).sqrt() * self.op_norm() * EPS;
            if self.cfg.resets && last.iter().any(|c| c.rnorm < drift) {
                self.reset()?;
                continue;
            }

            let working: Vec<usize> = (0..ntest).filter(|&i| !conv[i]).take(self.sizes.block).collect();
            if self.cfg.accept_at_accuracy_limit && !self.at_limit {
                let limit = 10.0 * self.op_norm() * EPS;
                if working.first().is_some_and(|&i| last[i].rnorm <= limit) {
                    self.stuck += 1;
                    if self.stuck >= patience {
                        log::debug!("residuals at the accuracy limit; accepting at {limit:e}");
                        self.at_limit = true;
                        continue;
                    }
                } else {
                    self.stuck = 0;
                }
            }

            if self.cfg.locking {
                if conv[0] {
                    let c = &last[0];
                    self.locked.push_col(&c.x)?;
                    self.locked_values.push(c.value);
                    if self.locked.cols() == k {
                        break;
                    }
                    let keep = self.restart_order(&ex);
                    let exclude = c.coefs.clone();
                    self.restart(keep, Some(&exclude))?;
                    self.rebuild_qr()?;
                    continue;
                }
            } else if ntest == k && conv.iter().all(|c| *c) {
                break;
            }

            let g = self.v.cols();
            let room = self.n - self.constraints.cols() - self.locked.cols() - g;
            if room == 0 || self.stats.matvecs + working.len() > self.cfg.max_matvecs {
                break;
            }
            if g + self.sizes.block > self.sizes.max_basis {
                let keep = self.restart_order(&ex);
                self.restart(keep, None)?;
                continue;
            }
            let chosen: Vec<&Candidate> = working.iter().take(room).map(|&i| &last[i]).collect();
            self.prev_coefs = (0..ntest)
                .filter(|&i| !conv[i])
                .chain((0..ntest).filter(|&i| conv[i]))
                .take(self.cfg.plus_k)
                .map(|i| last[i].coefs.clone())
                .collect();
            self.expand(&chosen)?;
        }
        self.finish(last)
    }

    fn finish(mut self, last: Vec<Candidate>) -> Result<EigResult> {
        let k = self.cfg.num_evals;
        let (mut values, x, mut converged) = if self.cfg.locking {
            let mut x = self.locked.clone();
            let mut values = self.locked_values.clone();
            let mut converged = vec![true; x.cols()];
            let mut extra = last.into_iter();
            while x.cols() < k {
                let c = match extra.next() {
                    Some(c) => c,
                    None => break,
                };
                x.push_col(&c.x)?;
                values.push(c.value);
                converged.push(false);
            }
            (values, x, converged)
        } else {
            let conv: Vec<bool> = last.iter().map(|c| self.is_converged(c)).collect();
            let mut x = DenseBlock::empty(self.n);
            for c in &last {
                x.push_col(&c.x)?;
            }
            let values = last.iter().map(|c| c.value).collect();
            (values, x, conv)
        };

        let wx = self.apply(&x)?;
        let (x, wx) = if !self.cfg.locking && converged.iter().all(|c| *c) {
            // final Rayleigh–Ritz over the converged vectors
            let hx = SmallSymmetric::from_block(&x.t_mul(&wx)?)?;
            let eig = sym_eig(&hx);
            let order = preference_order(&eig.values, &self.cfg.target, self.active_shift());
            let mut y = DenseBlock::empty(x.cols());
            values = Vec::with_capacity(order.len());
            for &i in &order {
                y.push_col(eig.vectors.col(i))?;
                values.push(eig.values[i]);
            }
            (x.mul(&y)?, wx.mul(&y)?)
        } else {
            (x, wx)
        };
        let residual_norms: Vec<f64> = (0..x.cols())
            .map(|j| {
                let r: Vec<f64> = wx.col(j).iter().zip(x.col(j)).map(|(w, v)| w - values[j] * v).collect();
                norm2(&r)
            })
            .collect();
        if !self.cfg.locking {
            converged.resize(values.len(), false);
        }
        Ok(EigResult {
            values,
            vectors: x,
            residual_norms,
            converged,
            stats: self.stats,
            norm: self.est,
            accuracy_limited: self.at_limit,
        })
    }

    /// The whole free space fits in the basis: solve the projected problem exactly.
    fn dense_solve(mut self) -> Result<EigResult> {
        let mut v = DenseBlock::identity(self.n);
        orthonormalize_with(&mut v, &[&self.constraints], 0, DeficientPolicy::Drop, &mut self.rng)?;
        let w = self.apply(&v)?;
        let h = SmallSymmetric::from_block(&v.t_mul(&w)?)?;
        let eig = sym_eig(&h);
        self.est.update_scaled(&eig.values, self.cfg.ritz_scale);
        self.v = v;
        self.w = w;
        let shift = self.cfg.target.shifts().map(|s| s[0]);
        let order = preference_order(&eig.values, &self.cfg.target, shift);
        let cands: Vec<Candidate> = order
            .iter()
            .map(|&i| self.candidate(eig.values[i], eig.vectors.col(i).to_vec()))
            .collect();
        let passes: Vec<bool> = cands.iter().map(|c| self.is_converged(c)).collect();
        let k = self.cfg.num_evals;
        let mut chosen: Vec<usize> = if self.cfg.target.is_interior() {
            (0..cands.len()).filter(|&i| passes[i]).take(k).collect()
        } else {
            (0..k).collect()
        };
        for i in 0..cands.len() {
            if chosen.len() >= k {
                break;
            }
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        let mut x = DenseBlock::empty(self.n);
        for &i in &chosen {
            x.push_col(&cands[i].x)?;
        }
        Ok(EigResult {
            values: chosen.iter().map(|&i| cands[i].value).collect(),
            residual_norms: chosen.iter().map(|&i| cands[i].rnorm).collect(),
            converged: chosen.iter().map(|&i| passes[i]).collect(),
            vectors: x,
            stats: self.stats,
            norm: self.est,
            accuracy_limited: false,
        })
    }
}
