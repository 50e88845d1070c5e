//! Restarted GMRES for matrix-free linear operators.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovSettings {
    pub restart: usize,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        Self { restart: 20, rel_tol: 1e-10, max_iter: 2000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresReport {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` starting from the contents of `x`. `inv_diag`, if given,
/// is a right Jacobi preconditioner (the inverse diagonal of `A`). The
/// reported residual is the true residual of the returned iterate.
pub fn gmres(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    inv_diag: Option<&[f64]>,
    settings: &KrylovSettings,
) -> Result<GmresReport> {
    let n = b.len();
    let m = settings.restart.max(1);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(GmresReport { iterations: 0, rel_residual: 0.0 });
    }
    let precondition = |v: &[f64], out: &mut [f64]| match inv_diag {
        Some(d) => out.iter_mut().zip(v.iter().zip(d)).for_each(|(o, (a, b))| *o = a * b),
        None => out.copy_from_slice(v),
    };

    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![0.0; m]; m + 1];
    let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
    let mut g = vec![0.0; m + 1];
    let mut iterations = 0;

    loop {
        apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= settings.rel_tol {
            return Ok(GmresReport { iterations, rel_residual: rel });
        }
        if iterations >= settings.max_iter {
            return Err(Error::KrylovNonConvergence { iterations, residual: rel });
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precondition(&basis[k], &mut z);
            apply(&z, &mut w);
            for i in 0..=k {
                h[i][k] = dot(&w, &basis[i]);
                let hik = h[i][k];
                w.iter_mut().zip(&basis[i]).for_each(|(a, v)| *a -= hik * v);
            }
            h[k + 1][k] = norm(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            let hk1 = h[k + 1][k];
            h[k][k] = cs[k] * h[k][k] + sn[k] * hk1;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            let happy = hk1 <= 1e-14 * beta;
            if g[k + 1].abs() / bnorm <= settings.rel_tol || happy || iterations >= settings.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hk1).collect());
        }
        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            update.iter_mut().zip(&basis[j]).for_each(|(u, v)| *u += yj * v);
        }
        precondition(&update, &mut z);
        x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
    }
}
