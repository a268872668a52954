//! Top singular triplets of a random sparse matrix.

use hybrid_svds::matio::random_sparse;
use hybrid_svds::{svds_solve, SvdTarget, SvdsConfig};

fn main() -> hybrid_svds::Result<()> {
    let a = random_sparse(2000, 800, 0.005, 7)?;
    let cfg = SvdsConfig {
        num_svals: 5,
        target: SvdTarget::Largest,
        eps: 1e-10,
        ..SvdsConfig::default()
    };
    let r = svds_solve(&a, None, &cfg)?;
    for (i, s) in r.sigma.iter().enumerate() {
        println!("sigma[{i}] = {s:.12e}  rnorm = {:.2e}", r.rnorms[i]);
    }
    println!("matvecs: stage 1 {}, stage 2 {}", r.stats.stage1_matvecs, r.stats.stage2_matvecs);
    Ok(())
}
