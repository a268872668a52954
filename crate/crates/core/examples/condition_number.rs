//! Estimate κ(A) = σ_max/σ_min for a few synthetic matrices.

use hybrid_svds::matio::{synth_matrix, SpectrumSpec};
use hybrid_svds::{estimate_condition_number, SvdsConfig};

fn main() -> hybrid_svds::Result<()> {
    for kappa in [10.0, 1e2, 1e3] {
        let a = synth_matrix(&SpectrumSpec::geometric(200, 120, kappa, 0))?;
        let c = estimate_condition_number(&a, None, &SvdsConfig::default())?;
        println!("true {kappa:>8.1e}  estimated {:>10.4e}  ({} matvecs)", c.kappa, c.matvecs);
    }
    Ok(())
}
