//! Command-line driver behind the `hsvds` binary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::DenseBlock;
use crate::matio::{read_matrix_market, synth_matrix, write_matrix_market_array, SparseMatrixCsr, SpectrumSpec};
use crate::operators::{jacobi_precond_on_aat, jacobi_precond_on_c, JacobiPreconditioner};
use crate::svds::{estimate_condition_number, svds_solve, Method, SvdTarget, SvdsConfig, SvdsResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CliMethod {
    Phsvds,
    Normal,
    Augmented,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CliPrecond {
    None,
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Svd,
    Cond,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "hsvds", version, about = "Partial SVD of a sparse matrix")]
pub struct CliRequest {
    /// Matrix Market file.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    pub matrix: Option<PathBuf>,
    /// Synthetic matrix: `diag:1,2,3`, `spectrum:<file>` or `cond:<kappa>:<m>x<n>`.
    #[arg(long)]
    pub synth: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub num_svals: usize,
    /// `largest`, `smallest` or `closest:v1,v2,...`.
    #[arg(long, default_value = "largest")]
    pub target: String,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "phsvds")]
    pub method: CliMethod,
    #[arg(long, value_enum, default_value = "none")]
    pub precond: CliPrecond,
    #[arg(long)]
    pub max_basis: Option<usize>,
    #[arg(long)]
    pub min_restart: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub block: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Budget of `A`/`Aᵀ` column applications.
    #[arg(long, default_value_t = 1_000_000)]
    pub max_matvecs: usize,
    #[arg(long, value_enum, default_value = "svd")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Writes `[U; V]` as a Matrix Market array.
    #[arg(long)]
    pub write_vectors: Option<PathBuf>,
    /// Report destination (stdout by default).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestEcho {
    pub matrix: String,
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub mode: Mode,
    pub num_svals: usize,
    pub target: String,
    pub tol: f64,
    pub method: CliMethod,
    pub precond: CliPrecond,
    pub max_basis: usize,
    pub min_restart: usize,
    pub block: usize,
    pub seed: u64,
    pub max_matvecs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub index: usize,
    pub sigma: f64,
    pub rnorm: f64,
    pub converged: bool,
    pub tiny: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `null` in JSON when the matrix is numerically singular.
    pub kappa: Option<f64>,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub singular: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportStats {
    pub stage1_matvecs: usize,
    pub stage2_matvecs: usize,
    pub precond_applies: usize,
    pub restarts: usize,
    pub resets: usize,
    pub outer_iterations: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub solver: SolverInfo,
    pub request: RequestEcho,
    pub a_norm: f64,
    pub converged_count: usize,
    pub triplets: Vec<Triplet>,
    pub condition: Option<ConditionReport>,
    pub stats: ReportStats,
    pub vectors_file: Option<String>,
}

impl RunReport {
    /// Every requested quantity met its tolerance.
    pub fn complete(&self) -> bool {
        match &self.condition {
            Some(c) => c.converged,
            None => self.converged_count == self.request.num_svals,
        }
    }
}

pub fn parse_target(s: &str) -> Result<SvdTarget> {
    match s {
        "largest" => Ok(SvdTarget::Largest),
        "smallest" => Ok(SvdTarget::Smallest),
        _ => {
            let list = s
                .strip_prefix("closest:")
                .ok_or_else(|| Error::InvalidConfig(format!("unknown target '{s}'")))?;
            let vals = parse_list(list, "closest")?;
            Ok(SvdTarget::ClosestTo(vals))
        }
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{what}: cannot parse '{t}' as a number")))
        })
        .collect()
}

/// Builds the matrix named by a `--synth` spec.
pub fn parse_synth(spec: &str, seed: u64) -> Result<SparseMatrixCsr> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::InvalidConfig(format!("synth spec '{spec}' lacks a ':'")))?;
    match kind {
        "diag" => SparseMatrixCsr::diagonal(&parse_list(rest, "diag")?),
        "cond" => {
            let (kappa, dims) = rest
                .split_once(':')
                .ok_or_else(|| Error::InvalidConfig("cond spec is cond:<kappa>:<m>x<n>".into()))?;
            let kappa: f64 = kappa
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad kappa '{kappa}'")))?;
            if !(kappa >= 1.0 && kappa.is_finite()) {
                return Err(Error::InvalidConfig("kappa must be finite and at least 1".into()));
            }
            let (m, n) = parse_dims(dims)?;
            synth_matrix(&SpectrumSpec::geometric(m, n, kappa, seed))
        }
        "spectrum" => {
            let text = std::fs::read_to_string(rest).map_err(|source| Error::Io {
                path: rest.into(),
                source,
            })?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('%'));
            let header = lines
                .next()
                .ok_or_else(|| Error::InvalidConfig(format!("{rest}: empty spectrum file")))?;
            let dims: Vec<&str> = header.split_whitespace().collect();
            if dims.len() != 2 {
                return Err(Error::InvalidConfig(format!("{rest}: first line must be 'm n'")));
            }
            let (m, n) = parse_dims(&format!("{}x{}", dims[0], dims[1]))?;
            let sigma = parse_list(&lines.collect::<Vec<_>>().join(" "), "spectrum")?;
            synth_matrix(&SpectrumSpec { sigma, m, n, seed })
        }
        _ => Err(Error::InvalidConfig(format!("unknown synth kind '{kind}'"))),
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidConfig(format!("bad dimensions '{s}', expected <m>x<n>"));
    let (m, n) = s.split_once('x').ok_or_else(bad)?;
    Ok((m.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?))
}

fn load_matrix(req: &CliRequest) -> Result<(SparseMatrixCsr, String)> {
    match (&req.matrix, &req.synth) {
        (Some(p), None) => Ok((read_matrix_market(p)?, p.display().to_string())),
        (None, Some(s)) => Ok((parse_synth(s, req.seed)?, s.clone())),
        _ => Err(Error::InvalidConfig("give exactly one of --matrix and --synth".into())),
    }
}

fn build_config(req: &CliRequest, target: SvdTarget) -> SvdsConfig {
    SvdsConfig {
        num_svals: req.num_svals,
        target,
        eps: req.tol,
        max_basis_size: req.max_basis,
        min_restart_size: req.min_restart,
        max_block_size: req.block,
        method: match req.method {
            CliMethod::Phsvds => Method::Phsvds,
            CliMethod::Normal => Method::NormalEquationsOnly,
            CliMethod::Augmented => Method::AugmentedOnly,
        },
        max_matvecs: req.max_matvecs,
        seed: req.seed,
        ..SvdsConfig::default()
    }
}

fn jacobi_for(a: &SparseMatrixCsr) -> Result<JacobiPreconditioner> {
    if a.nrows() >= a.ncols() {
        jacobi_precond_on_c(a)
    } else {
        jacobi_precond_on_aat(a)
    }
}

fn write_vectors(path: &PathBuf, r: &SvdsResult) -> Result<()> {
    let (m, n, k) = (r.u.rows(), r.v.rows(), r.sigma.len());
    let mut stacked = DenseBlock::zeros(m + n, k);
    for j in 0..k {
        let col = stacked.col_mut(j);
        col[..m].copy_from_slice(r.u.col(j));
        col[m..].copy_from_slice(r.v.col(j));
    }
    let header = format!("rows 1..{m} hold left vectors u, rows {}..{} hold right vectors v", m + 1, m + n);
    write_matrix_market_array(path, &stacked, &[&header])
}

/// Runs a parsed request and returns its report.
pub fn execute(req: &CliRequest) -> Result<RunReport> {
    if !(req.tol > 0.0 && req.tol < 1.0) {
        return Err(Error::InvalidConfig(format!("--tol must lie in (0, 1), got {}", req.tol)));
    }
    if let Ok(t) = std::env::var("SVDS_THREADS") {
        log::debug!("SVDS_THREADS={t}: the dense kernels are single-threaded");
    }
    let target = parse_target(&req.target)?;
    let (a, name) = load_matrix(req)?;
    let cfg = build_config(req, target.clone());
    let precond = match req.precond {
        CliPrecond::None => None,
        CliPrecond::Jacobi => {
            if target == SvdTarget::Largest {
                log::warn!("the Jacobi preconditioner targets small singular values and usually slows largest-value solves");
            }
            Some(jacobi_for(&a)?)
        }
    };
    let precond_ref = precond.as_ref().map(|p| p as &dyn crate::operators::Preconditioner);
    let (max_basis, min_restart) = cfg.basis_sizes();
    let request = RequestEcho {
        matrix: name,
        rows: a.nrows(),
        cols: a.ncols(),
        nnz: a.nnz(),
        mode: req.mode,
        num_svals: req.num_svals,
        target: req.target.clone(),
        tol: req.tol,
        method: req.method,
        precond: req.precond,
        max_basis,
        min_restart,
        block: req.block,
        seed: req.seed,
        max_matvecs: req.max_matvecs,
    };
    let solver = SolverInfo {
        name: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    match req.mode {
        Mode::Cond => {
            let start = std::time::Instant::now();
            let c = estimate_condition_number(&a, precond_ref, &cfg)?;
            Ok(RunReport {
                solver,
                request,
                a_norm: c.sigma_max,
                converged_count: 0,
                triplets: Vec::new(),
                condition: Some(ConditionReport {
                    kappa: c.kappa.is_finite().then_some(c.kappa),
                    sigma_max: c.sigma_max,
                    sigma_min: c.sigma_min,
                    singular: c.singular,
                    converged: c.converged,
                }),
                stats: ReportStats {
                    stage1_matvecs: c.matvecs,
                    seconds: start.elapsed().as_secs_f64(),
                    ..ReportStats::default()
                },
                vectors_file: None,
            })
        }
        Mode::Svd => {
            if req.num_svals > a.nrows().min(a.ncols()) {
                return Err(Error::InvalidConfig(format!(
                    "--num-svals {} exceeds min(m, n) = {}",
                    req.num_svals,
                    a.nrows().min(a.ncols())
                )));
            }
            let r = svds_solve(&a, precond_ref, &cfg)?;
            if let Some(p) = &req.write_vectors {
                write_vectors(p, &r)?;
            }
            let triplets = (0..r.sigma.len())
                .map(|i| Triplet {
                    index: i,
                    sigma: r.sigma[i],
                    rnorm: r.rnorms[i],
                    converged: r.converged[i],
                    tiny: r.tiny[i],
                })
                .collect();
            let s = r.stats;
            Ok(RunReport {
                solver,
                request,
                a_norm: r.a_norm,
                converged_count: r.converged_count(),
                triplets,
                condition: None,
                stats: ReportStats {
                    stage1_matvecs: s.stage1_matvecs,
                    stage2_matvecs: s.stage2_matvecs,
                    precond_applies: s.precond_applies,
                    restarts: s.restarts,
                    resets: s.resets,
                    outer_iterations: s.outer_iterations,
                    seconds: s.seconds,
                },
                vectors_file: req.write_vectors.as_ref().map(|p| p.display().to_string()),
            })
        }
    }
}

pub fn emit_report(report: &RunReport, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Text => {
            let mut s = String::new();
            let q = &report.request;
            let _ = writeln!(s, "# {} {}x{} nnz={} target={} tol={:e}", q.matrix, q.rows, q.cols, q.nnz, q.target, q.tol);
            if let Some(c) = &report.condition {
                match c.kappa {
                    Some(k) => {
                        let _ = writeln!(s, "kappa {k:.6e}");
                    }
                    None => {
                        let _ = writeln!(s, "kappa inf");
                    }
                }
                let _ = writeln!(s, "sigma_max {:.6e}\nsigma_min {:.6e}", c.sigma_max, c.sigma_min);
            } else {
                for t in &report.triplets {
                    let _ = writeln!(s, "{} {:.16e} {:.3e}", t.index, t.sigma, t.rnorm);
                }
                let _ = writeln!(s, "converged {}/{}", report.converged_count, q.num_svals);
            }
            let st = &report.stats;
            let _ = writeln!(
                s,
                "stage1_matvecs {}\nstage2_matvecs {}\nprecond_applies {}\nrestarts {}\nresets {}\nouter_iterations {}\nseconds {:.3}",
                st.stage1_matvecs, st.stage2_matvecs, st.precond_applies, st.restarts, st.resets, st.outer_iterations, st.seconds
            );
            s
        }
    }
}

/// Parses `argv` (program name first), runs, and writes the report.
/// Returns 0 when everything converged, 2 on partial convergence and 1 on errors.
pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let req = match CliRequest::try_parse_from(argv) {
        Ok(r) => r,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 1;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    let report = match execute(&req) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let text = emit_report(&report, req.format);
    let written = match &req.output {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        let _ = writeln!(err, "error: {e}");
        return 1;
    }
    if report.complete() {
        0
    } else {
        2
    }
}

pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
