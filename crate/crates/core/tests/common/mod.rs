//! Independent oracles shared by the integration test targets.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use ttn_cme::grid::{build_shift_map, LeafGrid, TruncatedStateSpace};
use ttn_cme::linalg::Tensor3;
use ttn_cme::model::ReactionNetwork;
use ttn_cme::ttn::TtnState;

/// Full propensity of reaction `mu` restricted to the species of a subtree,
/// assuming every factor of `mu` on those species is placed inside it.
pub fn subtree_propensity(net: &ReactionNetwork, mu: usize, species: &[usize], x_local: &[i64], has_constant: bool) -> f64 {
    let r = &net.reactions[mu];
    let mut x = vec![0i64; net.n_species()];
    for (k, &s) in species.iter().enumerate() {
        x[s] = x_local[k];
    }
    let mut v = if has_constant { r.constant } else { 1.0 };
    for f in &r.factors {
        if f.species.iter().all(|s| species.contains(s)) {
            v *= f.eval(&x);
        }
    }
    v
}

/// One step of the matrix projector-splitting integrator written directly
/// in terms of the assembled CME matrix.
pub fn matrix_splitting_step(a: &DMatrix<f64>, u0: &DMatrix<f64>, s0: &DMatrix<f64>, v0: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let (m, r) = u0.shape();
    let n = v0.nrows();
    let apply = |y: &DMatrix<f64>| -> DMatrix<f64> {
        let v = a * DVector::from_column_slice(y.as_slice());
        DMatrix::from_column_slice(m, n, v.as_slice())
    };
    let flow_matrix = |dim: usize, f: &dyn Fn(&DVector<f64>) -> DVector<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            out.set_column(j, &f(&e));
        }
        out
    };
    // K step.
    let k0 = u0 * s0;
    let fk = flow_matrix(m * r, &|k| {
        let k = DMatrix::from_column_slice(m, r, k.as_slice());
        let dk = apply(&(k * v0.transpose())) * v0;
        DVector::from_column_slice(dk.as_slice())
    });
    let k1 = (fk * dt).exp() * DVector::from_column_slice(k0.as_slice());
    let qr = DMatrix::from_column_slice(m, r, k1.as_slice()).qr();
    let (u1, s_hat) = (qr.q(), qr.r());
    // S step, backwards.
    let fs = flow_matrix(r * r, &|s| {
        let s = DMatrix::from_column_slice(r, r, s.as_slice());
        let ds = -(u1.transpose() * apply(&(&u1 * s * v0.transpose())) * v0);
        DVector::from_column_slice(ds.as_slice())
    });
    let s1 = (fs * dt).exp() * DVector::from_column_slice(s_hat.as_slice());
    let s1 = DMatrix::from_column_slice(r, r, s1.as_slice());
    // L step.
    let l0 = v0 * s1.transpose();
    let fl = flow_matrix(n * r, &|l| {
        let l = DMatrix::from_column_slice(n, r, l.as_slice());
        let dl = apply(&(&u1 * l.transpose())).transpose() * &u1;
        DVector::from_column_slice(dl.as_slice())
    });
    let l1 = (fl * dt).exp() * DVector::from_column_slice(l0.as_slice());
    u1 * DMatrix::from_column_slice(n, r, l1.as_slice()).transpose()
}

/// `Xᵀ S D X` and `Xᵀ D X` by explicit summation over the subtree grid.
pub fn direct_inner_products(net: &ReactionNetwork, state: &TtnState, node: usize, mu: usize, has_constant: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let tree = state.tree();
    let species = tree.subtree_species(node);
    let grid = LeafGrid::new(state.space(), species.clone());
    let x = state.node_factor(node);
    let nu: Vec<i64> = species.iter().map(|&s| net.reactions[mu].stoich[s]).collect();
    let map = build_shift_map(&grid, &nu);
    let mut table = vec![0.0; grid.size()];
    grid.for_each(|i, xl| table[i] = subtree_propensity(net, mu, &species, xl, has_constant));
    let r = x.ncols();
    let (mut a, mut b) = (DMatrix::zeros(r, r), DMatrix::zeros(r, r));
    for i in 0..grid.size() {
        if let Some(j) = map.source(i) {
            a += x.row(i).transpose() * x.row(j) * table[j];
        }
        let target: Vec<i64> = grid.inverse_index(i).iter().zip(&nu).map(|(a, b)| a + b).collect();
        if target.iter().zip(grid.lower.iter().zip(&grid.upper)).all(|(t, (lo, hi))| lo <= t && t <= hi) {
            b += x.row(i).transpose() * x.row(i) * table[i];
        }
    }
    (a, b)
}

/// Index of the sub-state of `x` on `species` (in that order, first
/// fastest) within the grid of those species.
fn sub_index(space: &TruncatedStateSpace, species: &[usize], x: &[i64]) -> usize {
    let mut index = 0;
    let mut stride = 1;
    for &s in species {
        index += (x[s] - space.lower[s]) as usize * stride;
        stride *= space.extent(s);
    }
    index
}

fn sub_size(space: &TruncatedStateSpace, species: &[usize]) -> usize {
    species.iter().map(|&s| space.extent(s)).product()
}

fn complement(space: &TruncatedStateSpace, species: &[usize]) -> Vec<usize> {
    (0..space.n_species()).filter(|s| !species.contains(s)).collect()
}

/// Matricization of a full vector: rows over `rows`, columns over the
/// remaining species in increasing order.
fn matricize(space: &TruncatedStateSpace, y: &DVector<f64>, rows: &[usize]) -> DMatrix<f64> {
    let cols = complement(space, rows);
    let full = space.full_grid();
    let mut m = DMatrix::zeros(sub_size(space, rows), sub_size(space, &cols));
    full.for_each(|f, x| m[(sub_index(space, rows, x), sub_index(space, &cols, x))] = y[f]);
    m
}

fn unmatricize(space: &TruncatedStateSpace, m: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let cols = complement(space, rows);
    let full = space.full_grid();
    let mut y = DVector::zeros(full.size());
    full.for_each(|f, x| y[f] = m[(sub_index(space, rows, x), sub_index(space, &cols, x))]);
    y
}

/// Matrix of the linear map `f` on `rows x cols` matrices (column-major).
fn map_matrix(rows: usize, cols: usize, f: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>) -> DMatrix<f64> {
    let n = rows * cols;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DMatrix::zeros(rows, cols);
        e[j] = 1.0;
        out.set_column(j, &DVector::from_column_slice(f(&e).as_slice()));
    }
    out
}

fn exp_flow(x: &DMatrix<f64>, dt: f64, f: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = x.shape();
    let y = (map_matrix(r, c, f) * dt).exp() * DVector::from_column_slice(x.as_slice());
    DMatrix::from_column_slice(r, c, y.as_slice())
}

/// `n x m` matrix `Q R` with positive-free orientation; returns `(Q, R)`.
fn thin_qr(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.qr();
    (qr.q(), qr.r())
}

/// Complement basis of child `slot` (1 left, 2 right) of a node with
/// tensor `g[i, j, k]`, sibling factor `sib` and environment `w`, as a
/// matrix over the states of the complement of `child_species`.
fn child_environment(
    space: &TruncatedStateSpace,
    g: &Tensor3,
    slot: usize,
    child_species: &[usize],
    sib: &DMatrix<f64>,
    sib_species: &[usize],
    w: &DMatrix<f64>,
    w_species: &[usize],
) -> DMatrix<f64> {
    let rest = complement(space, child_species);
    let [d0, d1, d2] = g.dims();
    let r = if slot == 1 { d1 } else { d2 };
    let mut v = DMatrix::zeros(sub_size(space, &rest), r);
    let mut x = vec![0i64; space.n_species()];
    let grid = LeafGrid::new(space, rest.clone());
    for z in 0..grid.size() {
        let local = grid.inverse_index(z);
        for (k, &s) in rest.iter().enumerate() {
            x[s] = local[k];
        }
        let (si, wi) = (sub_index(space, sib_species, &x), sub_index(space, w_species, &x));
        for l in 0..r {
            let mut acc = 0.0;
            for i in 0..d0 {
                if slot == 1 {
                    for k in 0..d2 {
                        acc += g.get(i, l, k) * sib[(si, k)] * w[(wi, i)];
                    }
                } else {
                    for j in 0..d1 {
                        acc += g.get(i, j, l) * sib[(si, j)] * w[(wi, i)];
                    }
                }
            }
            v[(z, l)] = acc;
        }
    }
    v
}

/// Orthonormal `g` with `c[i, j, k] = Σ_l g[.., l, ..] s[., l]` along `mode`.
fn tensor_qr(c: &Tensor3, mode: usize) -> (Tensor3, DMatrix<f64>) {
    let [d0, d1, d2] = c.dims();
    let (rows, cols) = match mode {
        0 => (d1 * d2, d0),
        1 => (d0 * d2, d1),
        _ => (d0 * d1, d2),
    };
    let idx = |i: usize, j: usize, k: usize| match mode {
        0 => (j + d1 * k, i),
        1 => (i + d0 * k, j),
        _ => (i + d0 * j, k),
    };
    let mut m = DMatrix::zeros(rows, cols);
    for k in 0..d2 {
        for j in 0..d1 {
            for i in 0..d0 {
                m[idx(i, j, k)] = c.get(i, j, k);
            }
        }
    }
    let (q, r) = thin_qr(m);
    assert_eq!(q.ncols(), cols, "tensor QR needs at least as many rows as columns");
    let g = Tensor3::from_fn([d0, d1, d2], |i, j, k| q[idx(i, j, k)]);
    (g, r.transpose())
}

/// `out[.., a, ..] = Σ_b m[a, b] t[.., b, ..]`.
fn mode_product(t: &Tensor3, mode: usize, m: &DMatrix<f64>) -> Tensor3 {
    let [d0, d1, d2] = t.dims();
    let mut dims = [d0, d1, d2];
    dims[mode] = m.nrows();
    Tensor3::from_fn(dims, |i, j, k| {
        let mut acc = 0.0;
        for b in 0..m.ncols() {
            acc += m[([i, j, k][mode], b)]
                * match mode {
                    0 => t.get(b, j, k),
                    1 => t.get(i, b, k),
                    _ => t.get(i, j, b),
                };
        }
        acc
    })
}

struct TreeOracle<'a> {
    a: &'a DMatrix<f64>,
    space: TruncatedStateSpace,
    dt: f64,
}

impl TreeOracle<'_> {
    /// Full vector of `y = x * v^T` for a factor `x` over `species` and a
    /// complement basis `v`.
    fn apply_projected(&self, x: &DMatrix<f64>, v: &DMatrix<f64>, species: &[usize]) -> DMatrix<f64> {
        let y = unmatricize(&self.space, &(x * v.transpose()), species);
        matricize(&self.space, &(self.a * y), species)
    }

    /// Evolves child `child` whose coupling to the rest is `s0` (so that the
    /// full tensor is `factor(child) * s0 * v^T`); returns the new coupling.
    fn update_child(&self, state: &mut TtnState, child: usize, s0: DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let tree = state.tree().clone();
        let species = tree.subtree_species(child);
        if tree.is_leaf(child) {
            let k0 = state.leaf_matrix(child) * s0;
            let k1 = exp_flow(&k0, self.dt, &|k| self.apply_projected(k, v, &species) * v);
            let (u, r) = thin_qr(k1);
            state.set_leaf_matrix(child, u);
            r
        } else {
            let c0 = mode_product(state.tensor(child), 0, &s0.transpose());
            let c3 = self.node(state, child, c0, v, &species);
            let (q, s) = tensor_qr(&c3, 0);
            state.set_tensor(child, q);
            s.transpose()
        }
    }

    /// Sub-flow of the node `id` from the tensor `c0` within the complement
    /// basis `w` over the species outside the subtree.
    fn node(&self, state: &mut TtnState, id: usize, c0: Tensor3, w: &DMatrix<f64>, species: &[usize]) -> Tensor3 {
        let tree = state.tree().clone();
        let [left, right] = tree.children(id).unwrap();
        let (ls, rs) = (tree.subtree_species(left), tree.subtree_species(right));
        let w_species = complement(&self.space, species);

        let (g, s) = tensor_qr(&c0, 1);
        let v = child_environment(&self.space, &g, 1, &ls, &state.node_factor(right), &rs, w, &w_species);
        let s = self.update_child(state, left, s, &v);
        let x = state.node_factor(left);
        let s = exp_flow(&s, -self.dt, &|s| x.transpose() * self.apply_projected(&(&x * s), &v, &ls) * &v);
        let c1 = mode_product(&g, 1, &s);

        let (g, s) = tensor_qr(&c1, 2);
        let v = child_environment(&self.space, &g, 2, &rs, &state.node_factor(left), &ls, w, &w_species);
        let s = self.update_child(state, right, s, &v);
        let x = state.node_factor(right);
        let s = exp_flow(&s, -self.dt, &|s| x.transpose() * self.apply_projected(&(&x * s), &v, &rs) * &v);
        let c2 = mode_product(&g, 2, &s);

        // Galerkin flow of the connection tensor in the basis
        // x_left ⊗ x_right ⊗ w.
        let (xl, xr) = (state.node_factor(left), state.node_factor(right));
        let [d0, d1, d2] = c2.dims();
        let full = self.space.full_grid();
        let mut basis = DMatrix::zeros(full.size(), d0 * d1 * d2);
        full.for_each(|f, x| {
            let (a, b, c) =
                (sub_index(&self.space, &ls, x), sub_index(&self.space, &rs, x), sub_index(&self.space, &w_species, x));
            for k in 0..d2 {
                for j in 0..d1 {
                    for i in 0..d0 {
                        basis[(f, i + d0 * (j + d1 * k))] = xl[(a, j)] * xr[(b, k)] * w[(c, i)];
                    }
                }
            }
        });
        let galerkin = basis.transpose() * self.a * &basis;
        let c3 = (galerkin * self.dt).exp() * DVector::from_column_slice(c2.data());
        Tensor3::from_vec([d0, d1, d2], c3.as_slice().to_vec())
    }
}

/// One step of the tree projector-splitting integrator with exact
/// sub-flows, written on materialized factors and the assembled CME matrix
/// `a`. Returns the new state; the root must be internal.
pub fn tree_splitting_step(a: &DMatrix<f64>, state: &TtnState, dt: f64) -> TtnState {
    let mut state = state.clone();
    let oracle = TreeOracle { a, space: state.space().clone(), dt };
    let root = state.tree().root();
    let species = state.tree().subtree_species(root);
    let c0 = state.tensor(root).clone();
    let c3 = oracle.node(&mut state, root, c0, &DMatrix::from_element(1, 1, 1.0), &species);
    state.set_tensor(root, c3);
    state
}
