//! One-step integrators for linear, autonomous ODEs `dy/dt = L y`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{gmres, KrylovSettings};

/// A matrix-free linear operator `L`.
pub trait LinearFlow {
    fn dim(&self) -> usize;

    /// `out = L x`.
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// Diagonal of `L`, used to precondition implicit solves.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExplicitEuler,
    ImplicitEuler,
    /// Classical fourth-order Runge-Kutta.
    Rk4,
    /// Exact flow `exp(dt L)`, evaluated on the assembled matrix. Only for
    /// small operators.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepperConfig {
    pub scheme: Scheme,
    /// Number of equal substeps per call of [`advance`].
    pub substeps: usize,
    pub krylov: KrylovSettings,
    /// Precondition implicit solves with the diagonal of the operator.
    pub jacobi: bool,
}

impl StepperConfig {
    pub fn new(scheme: Scheme) -> Self {
        Self { scheme, substeps: 1, krylov: KrylovSettings::default(), jacobi: true }
    }
}

/// Largest operator dimension accepted by [`Scheme::Exponential`].
pub const EXPONENTIAL_MAX_DIM: usize = 4096;

/// Advances `y` by `dt` in place.
pub fn advance<F: LinearFlow + ?Sized>(
    flow: &F,
    y: &mut [f64],
    dt: f64,
    config: &StepperConfig,
) -> Result<()> {
    let n = flow.dim();
    assert_eq!(y.len(), n, "state length");
    let substeps = config.substeps.max(1);
    let h = dt / substeps as f64;
    match config.scheme {
        Scheme::ExplicitEuler => {
            let mut k = vec![0.0; n];
            for _ in 0..substeps {
                flow.apply(y, &mut k);
                y.iter_mut().zip(&k).for_each(|(a, b)| *a += h * b);
            }
        }
        Scheme::Rk4 => {
            let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let mut tmp = vec![0.0; n];
            for _ in 0..substeps {
                flow.apply(y, &mut k1);
                stage(&mut tmp, y, 0.5 * h, &k1);
                flow.apply(&tmp, &mut k2);
                stage(&mut tmp, y, 0.5 * h, &k2);
                flow.apply(&tmp, &mut k3);
                stage(&mut tmp, y, h, &k3);
                flow.apply(&tmp, &mut k4);
                for i in 0..n {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        Scheme::ImplicitEuler => {
            let inv_diag = if config.jacobi {
                flow.diagonal().map(|d| d.iter().map(|v| 1.0 / (1.0 - h * v)).collect::<Vec<_>>())
            } else {
                None
            };
            let op = |x: &[f64], out: &mut [f64]| {
                flow.apply(x, out);
                for i in 0..x.len() {
                    out[i] = x[i] - h * out[i];
                }
            };
            for _ in 0..substeps {
                let rhs = y.to_vec();
                // The previous value is the initial guess.
                gmres(op, &rhs, y, inv_diag.as_deref(), &config.krylov)?;
            }
        }
        Scheme::Exponential => {
            if n > EXPONENTIAL_MAX_DIM {
                return Err(Error::Dimension(format!(
                    "exponential scheme limited to {EXPONENTIAL_MAX_DIM} unknowns, got {n}"
                )));
            }
            let e = (assemble(flow) * dt).exp();
            let out = e * nalgebra::DVector::from_column_slice(y);
            y.copy_from_slice(out.as_slice());
        }
    }
    Ok(())
}

fn stage(out: &mut [f64], y: &[f64], h: f64, k: &[f64]) {
    for i in 0..y.len() {
        out[i] = y[i] + h * k[i];
    }
}

/// Dense matrix of a linear flow, column by column.
pub fn assemble<F: LinearFlow + ?Sized>(flow: &F) -> DMatrix<f64> {
    let n = flow.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        flow.apply(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}
