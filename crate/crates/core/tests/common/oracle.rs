// Dense reference decompositions written against plain slices only.
//
// Cyclic Jacobi for symmetric eigenproblems and one-sided (Hestenes) Jacobi
// for the SVD. Slow, but simple enough to trust as a reference.

/// Eigenpairs of a symmetric `n×n` column-major matrix.
/// Returns ascending eigenvalues and column-major eigenvectors.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut s = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let at = |s: &[f64], i: usize, j: usize| s[j * n + i];
    for _sweep in 0..100 {
        let mut off = 0.0;
        let mut total = 0.0;
        for j in 0..n {
            for i in 0..n {
                let x = at(&s, i, j) * at(&s, i, j);
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= 1e-32 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = at(&s, p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = at(&s, p, p);
                let aqq = at(&s, q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[p * n + k];
                    let skq = s[q * n + k];
                    s[p * n + k] = c * skp - sn * skq;
                    s[q * n + k] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[k * n + p];
                    let sqk = s[k * n + q];
                    s[k * n + p] = c * spk - sn * sqk;
                    s[k * n + q] = sn * spk + c * sqk;
                }
                for k in 0..n {
                    let vkp = v[p * n + k];
                    let vkq = v[q * n + k];
                    v[p * n + k] = c * vkp - sn * vkq;
                    v[q * n + k] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| at(&s, i, i).total_cmp(&at(&s, j, j)));
    let values = order.iter().map(|&i| at(&s, i, i)).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        vectors.extend_from_slice(&v[i * n..(i + 1) * n]);
    }
    (values, vectors)
}

/// Thin SVD of an `m×n` column-major matrix.
/// Returns descending singular values, `U` (`m×p`) and `V` (`n×p`), `p = min(m, n)`.
pub fn jacobi_svd(a: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), m * n);
    if m < n {
        let mut t = vec![0.0; m * n];
        for j in 0..n {
            for i in 0..m {
                t[i * n + j] = a[j * m + i];
            }
        }
        let (s, u, v) = jacobi_svd(&t, n, m);
        return (s, v, u);
    }
    let mut u = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..m {
                    let x = u[p * m + k];
                    let y = u[q * m + k];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let x = u[p * m + k];
                    let y = u[q * m + k];
                    u[p * m + k] = c * x - s * y;
                    u[q * m + k] = s * x + c * y;
                }
                for k in 0..n {
                    let x = v[p * n + k];
                    let y = v[q * n + k];
                    v[p * n + k] = c * x - s * y;
                    v[q * n + k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n)
        .map(|j| u[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut s = Vec::with_capacity(n);
    let mut uu = Vec::with_capacity(m * n);
    let mut vv = Vec::with_capacity(n * n);
    for &j in &order {
        let sj = norms[j];
        s.push(sj);
        uu.extend(u[j * m..(j + 1) * m].iter().map(|x| if sj > 0.0 { x / sj } else { 0.0 }));
        vv.extend_from_slice(&v[j * n..(j + 1) * n]);
    }
    (s, uu, vv)
}

/// Column-major `m×k` times `k×n`.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for j in 0..n {
        for l in 0..k {
            let blj = b[j * k + l];
            for i in 0..m {
                c[j * m + i] += a[l * m + i] * blj;
            }
        }
    }
    c
}

/// Householder thin QR of a column-major `m×n` matrix (`m ≥ n`).
/// Returns `(Q m×n, R n×n)` with `R` upper triangular and its diagonal nonnegative.
pub fn householder_qr(a: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut w = a.to_vec();
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x: Vec<f64> = (k..m).map(|i| w[k * m + i]).collect();
        let alpha = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        let mut v = x.clone();
        v[0] += if x[0] >= 0.0 { alpha } else { -alpha };
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vn > 0.0 {
            for t in v.iter_mut() {
                *t /= vn;
            }
            for j in k..n {
                let d: f64 = (k..m).map(|i| v[i - k] * w[j * m + i]).sum();
                for i in k..m {
                    w[j * m + i] -= 2.0 * d * v[i - k];
                }
            }
        }
        vs.push(v);
    }
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[j * m + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        for j in 0..n {
            let d: f64 = (k..m).map(|i| v[i - k] * q[j * m + i]).sum();
            for i in k..m {
                q[j * m + i] -= 2.0 * d * v[i - k];
            }
        }
    }
    let mut r = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..=j {
            r[j * n + i] = w[j * m + i];
        }
    }
    for i in 0..n {
        if r[i * n + i] < 0.0 {
            for j in i..n {
                r[j * n + i] = -r[j * n + i];
            }
            for t in 0..m {
                q[i * m + t] = -q[i * m + t];
            }
        }
    }
    (q, r)
}
