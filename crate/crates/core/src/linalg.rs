//! Preconditioned conjugate gradients for symmetric positive
//! (semi-)definite operators.

pub(crate) struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` starting from `x`. `apply` writes `A v` into its second
/// argument; `inv_diag` is the Jacobi preconditioner. Stops once the
/// recomputed residual norm drops to `tol`.
pub(crate) fn pcg<F>(apply: F, inv_diag: &[f64], b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt();
    let mut it = 0;
    while res > tol && it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        // Refresh the residual now and then so round-off in the recurrence
        // cannot fake convergence.
        if it % 50 == 0 {
            apply(x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        res = dot(&r, &r).sqrt();
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    apply(x, &mut ap);
    let true_res = b.iter().zip(&ap).map(|(b, a)| (b - a).powi(2)).sum::<f64>().sqrt();
    CgOutcome {
        iterations: it,
        residual: true_res,
        converged: true_res <= tol,
    }
}
