//! Point Jacobi on AᵀA for a matrix with badly scaled columns.

use hybrid_svds::matio::synth_diagonally_dominant;
use hybrid_svds::operators::jacobi_precond_on_c;
use hybrid_svds::{svds_solve, SvdTarget, SvdsConfig};

fn main() -> hybrid_svds::Result<()> {
    let a = synth_diagonally_dominant(300, 200, 1e3, 0.01, 0)?;
    let cfg = SvdsConfig {
        num_svals: 3,
        target: SvdTarget::Smallest,
        eps: 1e-6,
        ..SvdsConfig::default()
    };
    let plain = svds_solve(&a, None, &cfg)?;
    let p = jacobi_precond_on_c(&a)?;
    let pre = svds_solve(&a, Some(&p), &cfg)?;
    println!("without preconditioner: {:?}  ({} matvecs)", plain.sigma, plain.stats.stage1_matvecs);
    println!("with Jacobi:            {:?}  ({} matvecs)", pre.sigma, pre.stats.stage1_matvecs);
    Ok(())
}
