//! The underlying eigensolver on its own: interior eigenvalues of a symmetric
//! operator at or above a shift, with refined extraction.

use hybrid_svds::eigensolver::{eig_solve, AbsoluteTolerance, EigConfig, EigInputs, Extraction, Target};
use hybrid_svds::kernels::SmallSymmetric;

fn main() -> hybrid_svds::Result<()> {
    let diag: Vec<f64> = (0..300).map(|i| (i as f64).sqrt()).collect();
    let op = SmallSymmetric::from_diagonal(&diag);
    let tau = 10.05;
    let cfg = EigConfig {
        num_evals: 3,
        target: Target::ClosestGeq(vec![tau; 3]),
        extraction: Extraction::RefinedConstShift,
        locking: true,
        max_basis_size: 25,
        min_restart_size: 10,
        ..EigConfig::default()
    };
    let r = eig_solve(&op, &cfg, &AbsoluteTolerance(1e-9), EigInputs::default())?;
    println!("eigenvalues at or above {tau}: {:?}", r.values);
    println!("matvecs {}", r.stats.matvecs);
    Ok(())
}
