//! Small dense tensor utilities: 3-way tensors, matricizations and QR.

use nalgebra::{DMatrix, DVector};

/// Three-way tensor with the first index varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dims[0] * dims[1] * dims[2], "tensor data length");
        Self { dims, data }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    t.data[i + dims[0] * (j + dims[1] * k)] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix with the index `mode` as column and the remaining two indices
    /// combined into the row, the lower-numbered one fastest.
    pub fn unfold(&self, mode: usize) -> DMatrix<f64> {
        let [d0, d1, d2] = self.dims;
        match mode {
            0 => DMatrix::from_fn(d1 * d2, d0, |row, i| self.get(i, row % d1, row / d1)),
            1 => DMatrix::from_fn(d0 * d2, d1, |row, j| self.get(row % d0, j, row / d0)),
            2 => DMatrix::from_vec(d0 * d1, d2, self.data.clone()),
            _ => panic!("mode {mode} out of range"),
        }
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(mode: usize, m: &DMatrix<f64>, dims: [usize; 3]) -> Self {
        let [d0, d1, d2] = dims;
        match mode {
            0 => {
                assert_eq!((m.nrows(), m.ncols()), (d1 * d2, d0));
                Self::from_fn(dims, |i, j, k| m[(j + d1 * k, i)])
            }
            1 => {
                assert_eq!((m.nrows(), m.ncols()), (d0 * d2, d1));
                Self::from_fn(dims, |i, j, k| m[(i + d0 * k, j)])
            }
            2 => {
                assert_eq!((m.nrows(), m.ncols()), (d0 * d1, d2));
                Self::from_vec(dims, m.as_slice().to_vec())
            }
            _ => panic!("mode {mode} out of range"),
        }
    }

    /// `out[.., a, ..] = Σ_b m[a, b] self[.., b, ..]` along `mode`.
    pub fn mode_mul(&self, mode: usize, m: &DMatrix<f64>) -> Self {
        let [d0, d1, d2] = self.dims;
        assert_eq!(m.ncols(), self.dims[mode], "mode product inner dimension");
        let n = m.nrows();
        match mode {
            0 => {
                // Columns of the d0 x (d1 d2) view are multiplied from the left.
                let view = DMatrix::from_column_slice(d0, d1 * d2, &self.data);
                let out = m * view;
                Self::from_vec([n, d1, d2], out.as_slice().to_vec())
            }
            1 => {
                let mut out = Self::zeros([d0, n, d2]);
                for k in 0..d2 {
                    let slab = DMatrix::from_column_slice(d0, d1, &self.data[d0 * d1 * k..d0 * d1 * (k + 1)]);
                    let prod = slab * m.transpose();
                    out.data[d0 * n * k..d0 * n * (k + 1)].copy_from_slice(prod.as_slice());
                }
                out
            }
            2 => {
                let view = DMatrix::from_column_slice(d0 * d1, d2, &self.data);
                let out = view * m.transpose();
                Self::from_vec([d0, d1, n], out.as_slice().to_vec())
            }
            _ => panic!("mode {mode} out of range"),
        }
    }

    /// `unfold(mode)` of the result equals `unfold(mode) * m`.
    pub fn apply_mode(&self, mode: usize, m: &DMatrix<f64>) -> Self {
        self.mode_mul(mode, &m.transpose())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        assert_eq!(self.dims, other.dims);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += s * b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Thin QR `a = q r` with a nonnegative diagonal of `r`. Requires
/// `nrows >= ncols`.
pub fn qr_positive(a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(a.nrows() >= a.ncols(), "thin QR needs at least as many rows as columns");
    let qr = a.qr();
    let (mut q, mut r) = qr.unpack();
    for k in 0..r.nrows() {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    (q, r)
}

/// QR of the mode-`mode` matricization: returns the orthonormal tensor `g`
/// and the square factor `s` with `unfold(c, mode) = unfold(g, mode) s^T`.
pub fn matricize_qr(c: &Tensor3, mode: usize) -> (Tensor3, DMatrix<f64>) {
    let (q, r) = qr_positive(c.unfold(mode));
    (Tensor3::fold(mode, &q, c.dims()), r.transpose())
}

/// Extends the orthonormal columns of `u` to `r` orthonormal columns by
/// Gram-Schmidt on unit vectors.
pub fn complete_basis(u: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let n = u.nrows();
    assert!(r <= n, "cannot complete {r} columns in dimension {n}");
    let mut cols: Vec<DVector<f64>> = u.column_iter().take(r).map(|c| c.into_owned()).collect();
    let mut candidate = 0;
    while cols.len() < r {
        let mut v = DVector::zeros(n);
        v[candidate % n] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 0.5 {
            cols.push(v / norm);
        }
        assert!(candidate <= 2 * n, "basis completion failed");
    }
    DMatrix::from_columns(&cols)
}

/// Leading `r` left singular vectors of `m`, completed to `r` columns when
/// `m` has fewer.
pub fn leading_left_singular_vectors(m: DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let nrows = m.nrows();
    let u = if m.ncols() > nrows {
        // Left singular vectors of m are those of the triangular factor of m^T.
        let (_, rt) = qr_positive(m.transpose());
        rt.transpose().svd(true, false).u.expect("u requested")
    } else {
        m.svd(true, false).u.expect("u requested")
    };
    let k = u.ncols().min(r);
    complete_basis(&u.columns(0, k).into_owned(), r)
}

/// Max absolute deviation of `q^T q` from the identity.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
