//! The three linear sub-flows of the integrator, written as matrix-free
//! operators on column-major coefficient arrays.

use nalgebra::DMatrix;

use super::coefficients::{Coef, EnvCoefficients, LeafOperator, LeafTerm, NodeCoefficients};
use crate::linalg::Tensor3;
use crate::stepper::LinearFlow;

/// `dK = Σ_μ (S_μ D_μ K) a_μᵀ - (D_μ K) b_μᵀ` for a leaf basis `K` (`n × r`).
pub struct KFlow<'a> {
    op: &'a LeafOperator,
    env: &'a EnvCoefficients,
    /// `Σ κ (a - b)ᵀ` over the reactions that act on the leaf as a constant.
    passive: Coef,
    r: usize,
}

impl<'a> KFlow<'a> {
    pub fn new(op: &'a LeafOperator, env: &'a EnvCoefficients, r: usize) -> Self {
        let mut scalar = 0.0;
        let mut full: Option<DMatrix<f64>> = None;
        for (mu, term) in op.terms.iter().enumerate() {
            if let LeafTerm::Passive(k) = term {
                match env.a[mu].sub(&env.b[mu]) {
                    Coef::Scaled { value, .. } => scalar += k * value,
                    Coef::Full(m) => {
                        let t = m.transpose() * *k;
                        full = Some(match full {
                            Some(acc) => acc + t,
                            None => t,
                        });
                    }
                }
            }
        }
        let passive = match full {
            Some(m) => Coef::Full(m + DMatrix::identity(r, r) * scalar),
            None => Coef::Scaled { value: scalar, dim: r },
        };
        Self { op, env, passive, r }
    }
}

impl LinearFlow for KFlow<'_> {
    fn dim(&self) -> usize {
        self.op.n * self.r
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.op.n;
        let k = DMatrix::from_column_slice(n, self.r, x);
        let mut acc = self.passive.right_mul(&k);
        for (mu, term) in self.op.terms.iter().enumerate() {
            match term {
                LeafTerm::Passive(_) => {}
                LeafTerm::Diagonal(d) => {
                    let dk = DMatrix::from_fn(n, self.r, |i, j| d[i] * k[(i, j)]);
                    acc += self.env.a[mu].sub(&self.env.b[mu]).transpose().right_mul(&dk);
                }
                LeafTerm::Shifted { gain, source, loss } => {
                    let sdk = DMatrix::from_fn(n, self.r, |i, j| gain[i] * k[(source[i], j)]);
                    let dk = DMatrix::from_fn(n, self.r, |i, j| loss[i] * k[(i, j)]);
                    acc += self.env.a[mu].transpose().right_mul(&sdk);
                    acc -= self.env.b[mu].transpose().right_mul(&dk);
                }
            }
        }
        out.copy_from_slice(acc.as_slice());
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let n = self.op.n;
        let mut d = vec![0.0; n * self.r];
        for i in 0..self.r {
            let base = self.passive.diagonal_entry(i);
            d[n * i..n * (i + 1)].iter_mut().for_each(|v| *v = base);
        }
        for (mu, term) in self.op.terms.iter().enumerate() {
            for i in 0..self.r {
                let col = &mut d[n * i..n * (i + 1)];
                match term {
                    LeafTerm::Passive(_) => {}
                    LeafTerm::Diagonal(t) => {
                        let c = self.env.a[mu].diagonal_entry(i) - self.env.b[mu].diagonal_entry(i);
                        col.iter_mut().zip(t).for_each(|(v, t)| *v += t * c);
                    }
                    LeafTerm::Shifted { loss, .. } => {
                        let c = self.env.b[mu].diagonal_entry(i);
                        col.iter_mut().zip(loss).for_each(|(v, l)| *v -= l * c);
                    }
                }
            }
        }
        Some(d)
    }
}

/// `dS = -Σ_μ (A_μ S a_μᵀ - B_μ S b_μᵀ)` for the coupling matrix `S`
/// between a child's basis (rows) and its environment (columns).
pub struct SFlow<'a> {
    child: &'a NodeCoefficients,
    env: &'a EnvCoefficients,
    rows: usize,
    cols: usize,
    scalar: f64,
}

impl<'a> SFlow<'a> {
    pub fn new(child: &'a NodeCoefficients, env: &'a EnvCoefficients) -> Self {
        let rows = child.a.first().map_or(0, Coef::dim);
        let cols = env.a.first().map_or(0, Coef::dim);
        let mut scalar = 0.0;
        for mu in 0..child.a.len() {
            if let (Some(x), Some(y)) = (child.a[mu].scalar(), env.a[mu].scalar()) {
                scalar -= x * y;
            }
            if let (Some(x), Some(y)) = (child.b[mu].scalar(), env.b[mu].scalar()) {
                scalar += x * y;
            }
        }
        Self { child, env, rows, cols, scalar }
    }
}

fn sandwich(left: &Coef, s: &DMatrix<f64>, right: &Coef) -> DMatrix<f64> {
    left.left_mul(&right.transpose().right_mul(s))
}

impl LinearFlow for SFlow<'_> {
    fn dim(&self) -> usize {
        self.rows * self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let s = DMatrix::from_column_slice(self.rows, self.cols, x);
        let mut acc = &s * self.scalar;
        for mu in 0..self.child.a.len() {
            let (ca, ea) = (&self.child.a[mu], &self.env.a[mu]);
            if ca.scalar().is_none() || ea.scalar().is_none() {
                acc -= sandwich(ca, &s, ea);
            }
            let (cb, eb) = (&self.child.b[mu], &self.env.b[mu]);
            if cb.scalar().is_none() || eb.scalar().is_none() {
                acc += sandwich(cb, &s, eb);
            }
        }
        out.copy_from_slice(acc.as_slice());
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d = vec![0.0; self.dim()];
        for mu in 0..self.child.a.len() {
            for i in 0..self.cols {
                for j in 0..self.rows {
                    d[j + self.rows * i] += self.child.b[mu].diagonal_entry(j) * self.env.b[mu].diagonal_entry(i)
                        - self.child.a[mu].diagonal_entry(j) * self.env.a[mu].diagonal_entry(i);
                }
            }
        }
        Some(d)
    }
}

/// `dC = Σ_μ C ×₀ a_μ ×₁ A⁰_μ ×₂ A¹_μ - C ×₀ b_μ ×₁ B⁰_μ ×₂ B¹_μ` for a
/// connection tensor.
pub struct CFlow<'a> {
    env: &'a EnvCoefficients,
    left: &'a NodeCoefficients,
    right: &'a NodeCoefficients,
    dims: [usize; 3],
    scalar: f64,
}

impl<'a> CFlow<'a> {
    pub fn new(
        env: &'a EnvCoefficients,
        left: &'a NodeCoefficients,
        right: &'a NodeCoefficients,
        dims: [usize; 3],
    ) -> Self {
        let mut scalar = 0.0;
        for mu in 0..env.a.len() {
            if let Some(v) = triple_scalar(&env.a[mu], &left.a[mu], &right.a[mu]) {
                scalar += v;
            }
            if let Some(v) = triple_scalar(&env.b[mu], &left.b[mu], &right.b[mu]) {
                scalar -= v;
            }
        }
        Self { env, left, right, dims, scalar }
    }
}

fn triple_scalar(a: &Coef, b: &Coef, c: &Coef) -> Option<f64> {
    Some(a.scalar()? * b.scalar()? * c.scalar()?)
}

fn triple_product(c: &Tensor3, a: &Coef, b: &Coef, d: &Coef) -> Tensor3 {
    d.mode_mul(&b.mode_mul(&a.mode_mul(c, 0), 1), 2)
}

impl LinearFlow for CFlow<'_> {
    fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let c = Tensor3::from_vec(self.dims, x.to_vec());
        let mut acc = c.clone();
        acc.scale(self.scalar);
        for mu in 0..self.env.a.len() {
            let (ea, la, ra) = (&self.env.a[mu], &self.left.a[mu], &self.right.a[mu]);
            if triple_scalar(ea, la, ra).is_none() {
                acc.axpy(1.0, &triple_product(&c, ea, la, ra));
            }
            let (eb, lb, rb) = (&self.env.b[mu], &self.left.b[mu], &self.right.b[mu]);
            if triple_scalar(eb, lb, rb).is_none() {
                acc.axpy(-1.0, &triple_product(&c, eb, lb, rb));
            }
        }
        out.copy_from_slice(acc.data());
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let [d0, d1, d2] = self.dims;
        let mut d = vec![0.0; self.dim()];
        for mu in 0..self.env.a.len() {
            for k in 0..d2 {
                for j in 0..d1 {
                    for i in 0..d0 {
                        let a = self.env.a[mu].diagonal_entry(i)
                            * self.left.a[mu].diagonal_entry(j)
                            * self.right.a[mu].diagonal_entry(k);
                        let b = self.env.b[mu].diagonal_entry(i)
                            * self.left.b[mu].diagonal_entry(j)
                            * self.right.b[mu].diagonal_entry(k);
                        d[i + d0 * (j + d1 * k)] += a - b;
                    }
                }
            }
        }
        Some(d)
    }
}
