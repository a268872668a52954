//! Smallest singular values of an ill-conditioned matrix at high accuracy.
//! Stage 2 runs when the normal equations cannot reach the tolerance.

use hybrid_svds::matio::{synth_matrix, SpectrumSpec};
use hybrid_svds::{svds_solve, SvdTarget, SvdsConfig};

fn main() -> hybrid_svds::Result<()> {
    let spec = SpectrumSpec::geometric(200, 120, 1e3, 1);
    let a = synth_matrix(&spec)?;
    let cfg = SvdsConfig {
        num_svals: 5,
        target: SvdTarget::Smallest,
        eps: 1e-12,
        ..SvdsConfig::default()
    };
    let r = svds_solve(&a, None, &cfg)?;
    for (i, s) in r.sigma.iter().enumerate() {
        let exact = spec.sigma[spec.sigma.len() - 1 - i];
        println!("sigma[{i}] = {s:.15e}  exact {exact:.15e}  rnorm {:.2e}", r.rnorms[i]);
    }
    println!(
        "converged {}/{}  stage 1 matvecs {}  stage 2 matvecs {}",
        r.converged_count(),
        cfg.num_svals,
        r.stats.stage1_matvecs,
        r.stats.stage2_matvecs
    );
    Ok(())
}
