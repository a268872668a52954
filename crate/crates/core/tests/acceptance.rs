//! One test per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line (visible with `--nocapture`) before asserting.

mod common;

use std::time::Instant;

use common::oracle::{householder_qr, jacobi_svd};
use common::{oracle_sigma, recomputed_rnorms};
use hybrid_svds::eigensolver::{eig_solve, EigConfig, EigInputs, IterationView, Target};
use hybrid_svds::kernels::{orthonormalize, qr_append, qr_restart, DenseBlock, SmallSymmetric};
use hybrid_svds::matio::{random_sparse, synth_diagonally_dominant, synth_matrix, SparseMatrixCsr, SpectrumSpec};
use hybrid_svds::operators::{apply_block, jacobi_precond_on_c, NormEstimate, NormalOperator};
use hybrid_svds::svds::{
    compute_svd_residual, estimate_condition_number, svds_solve, svds_solve_with_hooks, SvdTarget, SvdsConfig,
    SvdsHooks,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn config(k: usize, target: SvdTarget, eps: f64, seed: u64) -> SvdsConfig {
    SvdsConfig {
        num_svals: k,
        target,
        eps,
        seed,
        ..SvdsConfig::default()
    }
}

/// Worst `|σ − σ_exact|` and worst recomputed residual.
fn errors(a: &SparseMatrixCsr, exact: &[f64], cfg: &SvdsConfig) -> (f64, f64) {
    let r = svds_solve(a, None, cfg).unwrap();
    let err = r.sigma.iter().zip(exact).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let res = recomputed_rnorms(a, &r).into_iter().fold(0.0, f64::max);
    (err, res)
}

fn extreme(sigma_desc: &[f64], k: usize, target: &SvdTarget) -> Vec<f64> {
    match target {
        SvdTarget::Largest => sigma_desc[..k].to_vec(),
        _ => sigma_desc.iter().rev().take(k).copied().collect(),
    }
}

#[test]
fn criterion_01_oracle_equivalence() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let m = 150 + (seed as usize * 13) % 251;
        let n = 80 + (seed as usize * 7) % 171;
        let a = random_sparse(m, n, 0.02, seed).unwrap();
        let exact = oracle_sigma(&a);
        let a_norm = exact[0];
        for target in [SvdTarget::Largest, SvdTarget::Smallest] {
            for eps in [1e-6, 1e-12] {
                let cfg = config(5, target.clone(), eps, seed);
                let want = extreme(&exact, 5, &target);
                let (err, res) = errors(&a, &want, &cfg);
                if !(err <= a_norm * eps * 10.0 && res < a_norm * eps) {
                    failures.push(format!("seed {seed} {m}x{n} {target:?} eps {eps:e}: err {err:.2e} res {res:.2e}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    report(1, pass, format!("80 solves, {} failures, {secs:.1} s", failures.len()));
    assert!(pass, "{failures:?} in {secs:.1} s");
}

#[test]
fn criterion_02_stage_behavior() {
    let mut notes = Vec::new();
    let mut pass = true;
    for kappa in [10.0, 1e2, 1e3] {
        for seed in 0..2u64 {
            let spec = SpectrumSpec::geometric(120, 80, kappa, seed);
            let a = synth_matrix(&spec).unwrap();
            for target in [SvdTarget::Largest, SvdTarget::Smallest] {
                let cfg = config(3, target.clone(), 1e-6, seed);
                let r = svds_solve(&a, None, &cfg).unwrap();
                let want = extreme(&spec.sigma, 3, &target);
                let err = r.sigma.iter().zip(&want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let res = recomputed_rnorms(&a, &r).into_iter().fold(0.0, f64::max);
                let ok = r.stats.stage2_matvecs == 0 && err <= 1e-5 && res < 1e-6;
                if !ok {
                    notes.push(format!("1e-6 kappa {kappa:e} seed {seed} {target:?}: stage2 {}", r.stats.stage2_matvecs));
                }
                pass &= ok;
            }
        }
    }
    for seed in 0..3u64 {
        let spec = SpectrumSpec::geometric(200, 120, 1e3, seed);
        let a = synth_matrix(&spec).unwrap();
        let eps = 1e-12;
        let cfg = config(5, SvdTarget::Smallest, eps, seed);
        let r = svds_solve(&a, None, &cfg).unwrap();
        let want = extreme(&spec.sigma, 5, &SvdTarget::Smallest);
        let err = r.sigma.iter().zip(&want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let res = recomputed_rnorms(&a, &r).into_iter().fold(0.0, f64::max);
        // with u = Av/σ the stage-1 triplet residual is ‖r^C‖/σ
        let stage1_short = r.stage1_rnorms.iter().zip(&want).any(|(rc, s)| rc / s > eps);
        let ok = r.stats.stage2_matvecs > 0 && err <= 10.0 * eps && res < eps && stage1_short;
        if !ok {
            notes.push(format!(
                "1e-12 seed {seed}: stage2 {} err {err:.1e} res {res:.1e} stage1 short {stage1_short}",
                r.stats.stage2_matvecs
            ));
        }
        pass &= ok;
    }
    report(2, pass, if notes.is_empty() { "stage 2 idle at 1e-6, engaged at 1e-12".into() } else { notes.join("; ") });
    assert!(pass);
}

#[test]
fn criterion_03_multiplicity() {
    let (m, n) = (120, 80);
    let mut found = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let mut sigma: Vec<f64> = (0..n).map(|i| 0.2 + 0.8 * i as f64 / (n - 1) as f64).rev().collect();
        sigma[n - 1] = 0.1;
        sigma[n - 2] = 0.1;
        sigma[n - 3] = 0.1 * (1.0 + 1e-4);
        let a = synth_matrix(&SpectrumSpec { sigma, m, n, seed }).unwrap();
        let eps = 1e-10;
        let r = svds_solve(&a, None, &config(3, SvdTarget::Smallest, eps, seed)).unwrap();
        let res = recomputed_rnorms(&a, &r);
        let vgram = common::max_offdiag_gram(&[r.v.col(0), r.v.col(1)]);
        let ok = (r.sigma[0] - 0.1).abs() <= 10.0 * eps
            && (r.sigma[1] - 0.1).abs() <= 10.0 * eps
            && (r.sigma[2] - 0.1 * (1.0 + 1e-4)).abs() <= 10.0 * eps
            && res.iter().all(|x| *x < eps)
            && vgram < 1e-8;
        if ok {
            found += 1;
        } else {
            notes.push(format!("seed {seed}: {:?}", r.sigma));
        }
    }
    report(3, found == 10, format!("{found}/10 seeds found both copies {notes:?}"));
    assert_eq!(found, 10);
}

#[test]
fn criterion_04_null_space_guard() {
    let (m, n) = (300, 120);
    let mut good = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let mut sigma: Vec<f64> = (0..n).map(|i| 0.01 + 0.99 * i as f64 / (n - 1) as f64).rev().collect();
        sigma[n - 1] = 1e-6;
        let a = synth_matrix(&SpectrumSpec { sigma: sigma.clone(), m, n, seed }).unwrap();
        let eps = 1e-10;
        let r = svds_solve(&a, None, &config(3, SvdTarget::Smallest, eps, seed)).unwrap();
        let want = extreme(&sigma, 3, &SvdTarget::Smallest);
        let mut ok = r.sigma.len() == 3;
        for i in 0..r.sigma.len() {
            let res = compute_svd_residual(&a, r.sigma[i], r.u.col(i), r.v.col(i)).unwrap();
            let atu = common::oracle_norm_at(&a, r.u.col(i));
            // a left null vector would have Aᵀu = 0
            ok &= res < eps && (atu - want[i]).abs() <= 1e-3 * want[i] && (r.sigma[i] - want[i]).abs() <= 10.0 * eps;
        }
        if ok {
            good += 1;
        } else {
            notes.push(format!("seed {seed}: {:?}", r.sigma));
        }
    }
    report(4, good == 10, format!("{good}/10 seeds free of null-space vectors {notes:?}"));
    assert_eq!(good, 10);
}

fn reset_run(seed: u64, resets: bool) -> (f64, usize, bool) {
    let a = synth_matrix(&SpectrumSpec::geometric(250, 250, 1e3, seed)).unwrap();
    let c = NormalOperator::new(&a);
    let cfg = EigConfig {
        num_evals: 1,
        target: Target::SmallestAlgebraic,
        resets,
        accept_at_accuracy_limit: false,
        max_matvecs: 100_000,
        seed,
        ..EigConfig::default()
    };
    let test = |_: f64, _: &[f64], rnorm: f64, e: &NormEstimate| rnorm <= 10.0 * e.c_norm() * f64::EPSILON;
    let r = eig_solve(&c, &cfg, &test, EigInputs::default()).unwrap();
    // fresh residual against the exact ‖C‖ = σ_max² = 1
    let x = DenseBlock::from_col_major(250, 1, r.vectors.col(0).to_vec()).unwrap();
    let cx = apply_block(&c, &x).unwrap();
    let fresh: f64 = cx
        .col(0)
        .iter()
        .zip(x.col(0))
        .map(|(p, q)| (p - r.values[0] * q).powi(2))
        .sum::<f64>()
        .sqrt();
    (fresh / f64::EPSILON, r.stats.restarts, r.converged[0])
}

#[test]
fn criterion_05_reset_heuristic() {
    let mut pass = true;
    let mut notes = Vec::new();
    for seed in 0..2u64 {
        let (with, restarts, conv) = reset_run(seed, true);
        let (without, _, _) = reset_run(seed, false);
        let ok = conv && restarts >= 40 && with <= 10.0 && without > 10.0;
        notes.push(format!("seed {seed}: {restarts} restarts, residual {with:.1}·‖C‖ε with resets, {without:.1}·‖C‖ε without"));
        pass &= ok;
    }
    report(5, pass, notes.join("; "));
    assert!(pass);
}

#[test]
fn criterion_06_refined_optimality() {
    let (m, n) = (300, 120);
    let mut samples = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_oracle = 0.0f64;
    for seed in 0..10u64 {
        if samples >= 20 {
            break;
        }
        let mut sigma: Vec<f64> = (0..n).map(|i| 0.01 + 0.99 * i as f64 / (n - 1) as f64).rev().collect();
        sigma[n - 1] = 1e-6;
        let a = synth_matrix(&SpectrumSpec { sigma, m, n, seed }).unwrap();
        let mut taken = 0;
        let mut mon = |v: &IterationView| {
            let (Some(y), Some(tau)) = (v.refined_coefs, v.shift) else { return };
            if samples >= 20 || taken >= 2 || v.iteration % 3 != 0 {
                return;
            }
            let g = v.basis.cols();
            let mut shifted = v.image.clone();
            for j in 0..g {
                for (s, b) in shifted.col_mut(j).iter_mut().zip(v.basis.col(j)) {
                    *s -= tau * b;
                }
            }
            let q = |c: &[f64]| shifted.mul_vec(c).iter().map(|t| t * t).sum::<f64>().sqrt();
            let refined = q(y);
            for j in 0..v.ritz.vectors.cols() {
                worst_gap = worst_gap.max(refined - q(v.ritz.vectors.col(j)));
            }
            let (s, _, _) = jacobi_svd(shifted.as_slice(), shifted.rows(), g);
            worst_oracle = worst_oracle.max((refined - s[g - 1]).abs());
            samples += 1;
            taken += 1;
        };
        let cfg = config(3, SvdTarget::Smallest, 1e-10, seed);
        svds_solve_with_hooks(&a, None, &cfg, SvdsHooks { stage2_monitor: Some(&mut mon) }).unwrap();
    }
    let pass = samples >= 20 && worst_gap <= 1e-15 && worst_oracle <= 1e-14;
    report(
        6,
        pass,
        format!("{samples} iterations, refined minus best Ritz {worst_gap:.1e}, distance to oracle minimum {worst_oracle:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_qr_restart_equivalence() {
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let diag: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / 10.0).collect();
    let op = SmallSymmetric::from_diagonal(&diag);
    let tau = 3.3;
    let shifted = |v: &DenseBlock| {
        let mut w = apply_block(&op, v).unwrap();
        for j in 0..v.cols() {
            for (s, b) in w.col_mut(j).iter_mut().zip(v.col(j)) {
                *s -= tau * b;
            }
        }
        w
    };
    let mut v = DenseBlock::empty(n);
    let mut q = DenseBlock::empty(n);
    let mut r = hybrid_svds::kernels::SmallUpperTriangular::zeros(0);
    let mut worst = 0.0f64;
    for _cycle in 0..50 {
        while v.cols() < 12 {
            let mut t = DenseBlock::random(n, 1, &mut rng);
            let basis = v.clone();
            orthonormalize(&mut t, Some(&basis), 0, &mut rng).unwrap();
            v.push_col(t.col(0)).unwrap();
            let st = shifted(&t);
            qr_append(&mut q, &mut r, st.col(0), &mut rng).unwrap();
        }
        let mut y = DenseBlock::random(12, 5, &mut rng);
        orthonormalize(&mut y, None, 0, &mut rng).unwrap();
        v = v.mul(&y).unwrap();
        qr_restart(&mut q, &mut r, &y).unwrap();

        let m = shifted(&v);
        let (q_ref, r_ref) = householder_qr(m.as_slice(), n, v.cols());
        let p = v.cols();
        for j in 0..p {
            for i in 0..=j {
                worst = worst.max((r.get(i, j) - r_ref[j * p + i]).abs());
            }
            let sign = if q.col(j).iter().zip(&q_ref[j * n..(j + 1) * n]).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                -1.0
            } else {
                1.0
            };
            for i in 0..n {
                worst = worst.max((sign * q.get(i, j) - q_ref[j * n + i]).abs());
            }
        }
    }
    let pass = worst <= 1e-10;
    report(7, pass, format!("50 restart cycles, worst entry difference {worst:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_08_preconditioning() {
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let a = synth_diagonally_dominant(300, 200, 1e3, 0.01, seed).unwrap();
        let cfg = config(3, SvdTarget::Smallest, 1e-6, seed);
        let plain = svds_solve(&a, None, &cfg).unwrap();
        let p = jacobi_precond_on_c(&a).unwrap();
        let pre = svds_solve(&a, Some(&p), &cfg).unwrap();
        let cut = 1.0 - pre.stats.stage1_matvecs as f64 / plain.stats.stage1_matvecs as f64;
        if cut >= 0.3 && pre.converged_count() == 3 {
            wins += 1;
        }
        notes.push(format!("{:.0}%", 100.0 * cut));
    }
    report(8, wins >= 8, format!("{wins}/10 seeds cut stage-1 matvecs by 30% or more: {}", notes.join(" ")));
    assert!(wins >= 8);
}

#[test]
fn criterion_09_condition_number() {
    let mut good = 0;
    let mut worst = 0.0f64;
    for kappa in [10.0, 1e2, 1e3] {
        for seed in 0..10u64 {
            let a = synth_matrix(&SpectrumSpec::geometric(200, 120, kappa, seed)).unwrap();
            let c = estimate_condition_number(&a, None, &SvdsConfig { seed, ..SvdsConfig::default() }).unwrap();
            let rel = (c.kappa - kappa).abs() / kappa;
            worst = worst.max(rel);
            if rel <= 0.1 {
                good += 1;
            }
        }
    }
    report(9, good == 30, format!("{good}/30 estimates within 10%, worst {:.1}%", 100.0 * worst));
    assert_eq!(good, 30);
}

fn strip_seconds(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["stats"]["seconds"] = serde_json::Value::Null;
    v
}

#[test]
fn criterion_10_determinism() {
    let a = synth_matrix(&SpectrumSpec::geometric(150, 90, 1e3, 5)).unwrap();
    let mut same = true;
    for target in [SvdTarget::Largest, SvdTarget::Smallest] {
        let cfg = config(4, target, 1e-12, 9);
        let r1 = svds_solve(&a, None, &cfg).unwrap();
        let r2 = svds_solve(&a, None, &cfg).unwrap();
        let bits = |r: &hybrid_svds::SvdsResult| {
            let mut b: Vec<u64> = r.sigma.iter().chain(&r.rnorms).map(|x| x.to_bits()).collect();
            b.extend(r.u.as_slice().iter().chain(r.v.as_slice()).map(|x| x.to_bits()));
            b
        };
        let mut s1 = r1.stats;
        let mut s2 = r2.stats;
        s1.seconds = 0.0;
        s2.seconds = 0.0;
        same &= bits(&r1) == bits(&r2) && s1 == s2;
    }
    let run = || {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_hsvds"))
            .args([
                "--synth", "cond:1000:150x90", "--num-svals", "4", "--target", "smallest", "--tol", "1e-12", "--seed",
                "9", "--format", "json",
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        String::from_utf8(out.stdout).unwrap()
    };
    let (j1, j2) = (run(), run());
    let cli_same = strip_seconds(&j1) == strip_seconds(&j2);
    let pass = same && cli_same;
    report(10, pass, format!("library bitwise identical: {same}, CLI JSON identical: {cli_same}"));
    assert!(pass);
}
