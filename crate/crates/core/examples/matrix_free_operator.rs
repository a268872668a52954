//! A matrix-free operator: the n×n second-difference matrix applied on the fly.
//! Its singular values are 2 − 2cos(jπ/(n+1)).

use hybrid_svds::operators::FnOperator;
use hybrid_svds::{svds_solve, SvdTarget, SvdsConfig};

fn main() -> hybrid_svds::Result<()> {
    let n = 500;
    let op = FnOperator::new(n, n, move |x: &[f64], ldx, y: &mut [f64], ldy, bs, _transpose| {
        for b in 0..bs {
            let (x, y) = (&x[b * ldx..b * ldx + n], &mut y[b * ldy..b * ldy + n]);
            for i in 0..n {
                let left = if i > 0 { x[i - 1] } else { 0.0 };
                let right = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.0 * x[i] - left - right;
            }
        }
    })?;
    let cfg = SvdsConfig {
        num_svals: 3,
        target: SvdTarget::Smallest,
        eps: 1e-10,
        ..SvdsConfig::default()
    };
    let r = svds_solve(&op, None, &cfg)?;
    for (j, s) in r.sigma.iter().enumerate() {
        let exact = 2.0 - 2.0 * ((j + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
        println!("sigma[{j}] = {s:.12e}  exact {exact:.12e}");
    }
    Ok(())
}
