//! Find more triplets later by constraining against the ones already found.

use hybrid_svds::matio::random_sparse;
use hybrid_svds::{svds_solve, SvdsConfig};

fn main() -> hybrid_svds::Result<()> {
    let a = random_sparse(400, 250, 0.02, 11)?;
    let first = svds_solve(&a, None, &SvdsConfig { num_svals: 3, ..SvdsConfig::default() })?;
    println!("first batch: {:?}", first.sigma);

    let cfg = SvdsConfig {
        num_svals: 3,
        ortho_const_left: Some(first.u.clone()),
        ortho_const_right: Some(first.v.clone()),
        ..SvdsConfig::default()
    };
    let next = svds_solve(&a, None, &cfg)?;
    println!("next batch:  {:?}", next.sigma);
    Ok(())
}
