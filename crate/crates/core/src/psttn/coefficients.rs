//! Propensity-weighted inner products of node factors (`A`, `B`) and the
//! population-independent environment coefficients (`a`, `b`).

use nalgebra::DMatrix;

use crate::error::Result;
use crate::grid::{build_shift_map, leaf_propensity_table, Boundary, LeafGrid};
use crate::linalg::{matricize_qr, Tensor3};
use crate::model::{FactorAssignment, ReactionNetwork};
use crate::tree::PartitionTree;
use crate::ttn::TtnState;

/// A square coefficient matrix, kept symbolic when it is a multiple of the
/// identity.
#[derive(Clone, Debug, PartialEq)]
pub enum Coef {
    Scaled { value: f64, dim: usize },
    Full(DMatrix<f64>),
}

impl Coef {
    pub fn identity(dim: usize) -> Self {
        Coef::Scaled { value: 1.0, dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            Coef::Scaled { dim, .. } => *dim,
            Coef::Full(m) => m.nrows(),
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            Coef::Scaled { value, .. } => Some(*value),
            Coef::Full(_) => None,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Coef::Scaled { value, dim } => DMatrix::identity(*dim, *dim) * *value,
            Coef::Full(m) => m.clone(),
        }
    }

    pub fn sub(&self, other: &Coef) -> Coef {
        match (self, other) {
            (Coef::Scaled { value: a, dim }, Coef::Scaled { value: b, .. }) => Coef::Scaled { value: a - b, dim: *dim },
            _ => Coef::Full(self.to_matrix() - other.to_matrix()),
        }
    }

    pub fn transpose(&self) -> Coef {
        match self {
            Coef::Full(m) => Coef::Full(m.transpose()),
            s => s.clone(),
        }
    }

    /// `t ×_mode self`.
    pub fn mode_mul(&self, t: &Tensor3, mode: usize) -> Tensor3 {
        match self {
            Coef::Scaled { value, .. } => {
                let mut out = t.clone();
                if *value != 1.0 {
                    out.scale(*value);
                }
                out
            }
            Coef::Full(m) => t.mode_mul(mode, m),
        }
    }

    /// `x * self` for a matrix `x` with `dim` columns.
    pub fn right_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Coef::Scaled { value, .. } => x * *value,
            Coef::Full(m) => x * m,
        }
    }

    /// `self * x`.
    pub fn left_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Coef::Scaled { value, .. } => x * *value,
            Coef::Full(m) => m * x,
        }
    }

    pub fn diagonal_entry(&self, i: usize) -> f64 {
        match self {
            Coef::Scaled { value, .. } => *value,
            Coef::Full(m) => m[(i, i)],
        }
    }

    pub fn max_abs_diff(&self, other: &Coef) -> f64 {
        (self.to_matrix() - other.to_matrix()).amax()
    }
}

/// How one reaction acts on a leaf.
#[derive(Clone, Debug)]
pub enum LeafTerm {
    /// No factor on the leaf and no change of its species: the leaf
    /// propensity is the constant `κ`.
    Passive(f64),
    /// The leaf species do not change; `values` is the leaf propensity.
    Diagonal(Vec<f64>),
    /// General case. `gain[i] = α(x_i - ν)` when the source lies in the grid
    /// (else 0) with source index `source[i]`; `loss[i] = α(x_i)`.
    Shifted { gain: Vec<f64>, source: Vec<usize>, loss: Vec<f64> },
}

/// Per-reaction propensity tables and shift maps of one leaf.
#[derive(Clone, Debug)]
pub struct LeafOperator {
    pub n: usize,
    pub terms: Vec<LeafTerm>,
}

impl LeafOperator {
    pub fn new(
        network: &ReactionNetwork,
        assignment: &FactorAssignment,
        tree: &PartitionTree,
        leaf_position: usize,
        grid: &LeafGrid,
        boundary: Boundary,
    ) -> Result<Self> {
        let tables = leaf_propensity_table(network, assignment, tree, leaf_position, grid)?;
        let terms = tables
            .into_iter()
            .enumerate()
            .map(|(mu, table)| {
                let nu: Vec<i64> = grid.species.iter().map(|&s| network.reactions[mu].stoich[s]).collect();
                if nu.iter().all(|&v| v == 0) {
                    if assignment.is_constant_on(mu, leaf_position) {
                        LeafTerm::Passive(table[0])
                    } else {
                        LeafTerm::Diagonal(table)
                    }
                } else {
                    let map = build_shift_map(grid, &nu);
                    let mut gain = vec![0.0; table.len()];
                    let mut source = vec![0; table.len()];
                    for i in 0..table.len() {
                        if let Some(j) = map.source(i) {
                            gain[i] = table[j];
                            source[i] = j;
                        }
                    }
                    let mut loss = table;
                    grid.for_each(|i, x| {
                        if !boundary.keeps_loss(x, &nu, &grid.lower, &grid.upper) {
                            loss[i] = 0.0;
                        }
                    });
                    LeafTerm::Shifted { gain, source, loss }
                }
            })
            .collect();
        Ok(Self { n: grid.size(), terms })
    }

    /// `(S D U)` and `(D U)` for reaction `mu`.
    pub fn shifted_and_scaled(&self, mu: usize, u: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = u.ncols();
        match &self.terms[mu] {
            LeafTerm::Passive(k) => (u * *k, u * *k),
            LeafTerm::Diagonal(d) => {
                let du = DMatrix::from_fn(self.n, r, |i, j| d[i] * u[(i, j)]);
                (du.clone(), du)
            }
            LeafTerm::Shifted { gain, source, loss } => (
                DMatrix::from_fn(self.n, r, |i, j| gain[i] * u[(source[i], j)]),
                DMatrix::from_fn(self.n, r, |i, j| loss[i] * u[(i, j)]),
            ),
        }
    }
}

/// `A` (shifted) and `B` (unshifted) per reaction for one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCoefficients {
    pub a: Vec<Coef>,
    pub b: Vec<Coef>,
}

impl NodeCoefficients {
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.a
            .iter()
            .zip(&other.a)
            .chain(self.b.iter().zip(&other.b))
            .map(|(x, y)| x.max_abs_diff(y))
            .fold(0.0, f64::max)
    }
}

/// Environment coefficients `a`, `b` per reaction for one child edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvCoefficients {
    pub a: Vec<Coef>,
    pub b: Vec<Coef>,
}

impl EnvCoefficients {
    /// The root's trivial environment.
    pub fn root(n_reactions: usize) -> Self {
        Self { a: vec![Coef::identity(1); n_reactions], b: vec![Coef::identity(1); n_reactions] }
    }
}

/// Leaf inner products `A = Uᵀ S D U`, `B = Uᵀ D U`.
pub fn leaf_ab(u: &DMatrix<f64>, op: &LeafOperator) -> NodeCoefficients {
    let r = u.ncols();
    let mut a = Vec::with_capacity(op.terms.len());
    let mut b = Vec::with_capacity(op.terms.len());
    for (mu, term) in op.terms.iter().enumerate() {
        match term {
            LeafTerm::Passive(k) => {
                a.push(Coef::Scaled { value: *k, dim: r });
                b.push(Coef::Scaled { value: *k, dim: r });
            }
            LeafTerm::Diagonal(_) => {
                let (_, du) = op.shifted_and_scaled(mu, u);
                let m = Coef::Full(u.tr_mul(&du));
                a.push(m.clone());
                b.push(m);
            }
            LeafTerm::Shifted { .. } => {
                let (sdu, du) = op.shifted_and_scaled(mu, u);
                a.push(Coef::Full(u.tr_mul(&sdu)));
                b.push(Coef::Full(u.tr_mul(&du)));
            }
        }
    }
    NodeCoefficients { a, b }
}

/// `unfold0(q)ᵀ unfold0(q ×₁ c0 ×₂ c1)`.
fn double_contraction(q: &Tensor3, c0: &Coef, c1: &Coef) -> Coef {
    let up = q.dims()[0];
    if let (Some(s0), Some(s1)) = (c0.scalar(), c1.scalar()) {
        return Coef::Scaled { value: s0 * s1, dim: up };
    }
    let z = c1.mode_mul(&c0.mode_mul(q, 1), 2);
    Coef::Full(q.unfold(0).tr_mul(&z.unfold(0)))
}

/// Internal-node `A`/`B` from the children's coefficients.
pub fn internal_ab(q: &Tensor3, left: &NodeCoefficients, right: &NodeCoefficients) -> NodeCoefficients {
    let a = left.a.iter().zip(&right.a).map(|(c0, c1)| double_contraction(q, c0, c1)).collect();
    let b = left.b.iter().zip(&right.b).map(|(c0, c1)| double_contraction(q, c0, c1)).collect();
    NodeCoefficients { a, b }
}

fn env_contraction(g: &Tensor3, side: usize, parent: &Coef, sibling: &Coef) -> Coef {
    let dim = g.dims()[side + 1];
    if let (Some(s0), Some(s1)) = (parent.scalar(), sibling.scalar()) {
        return Coef::Scaled { value: s0 * s1, dim };
    }
    let sibling_mode = 2 - side;
    let z = sibling.mode_mul(&parent.mode_mul(g, 0), sibling_mode);
    let mode = side + 1;
    Coef::Full(g.unfold(mode).tr_mul(&z.unfold(mode)))
}

/// Environment coefficients of child `side` (0 = left, 1 = right) given the
/// orthonormal QR factor `g` of the node's working tensor in that child's
/// mode, the node's own environment and the sibling's `A`/`B`.
pub fn compute_ab(g: &Tensor3, side: usize, env: &EnvCoefficients, sibling: &NodeCoefficients) -> EnvCoefficients {
    let a = env.a.iter().zip(&sibling.a).map(|(p, s)| env_contraction(g, side, p, s)).collect();
    let b = env.b.iter().zip(&sibling.b).map(|(p, s)| env_contraction(g, side, p, s)).collect();
    EnvCoefficients { a, b }
}

/// `A`/`B` for every non-root node.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientStore {
    pub nodes: Vec<Option<NodeCoefficients>>,
}

impl CoefficientStore {
    /// Leaf-to-root evaluation on an orthonormalized state.
    pub fn compute(state: &TtnState, leaf_ops: &[Option<LeafOperator>]) -> Self {
        let tree = state.tree();
        let mut nodes: Vec<Option<NodeCoefficients>> = vec![None; tree.n_nodes()];
        for id in tree.postorder() {
            if tree.parent(id).is_none() {
                continue;
            }
            nodes[id] = Some(match tree.children(id) {
                None => leaf_ab(state.leaf_matrix(id), leaf_ops[id].as_ref().unwrap()),
                Some([l, r]) => internal_ab(state.tensor(id), nodes[l].as_ref().unwrap(), nodes[r].as_ref().unwrap()),
            });
        }
        Self { nodes }
    }

    pub fn node(&self, id: usize) -> &NodeCoefficients {
        self.nodes[id].as_ref().expect("coefficients of a non-root node")
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.nodes
            .iter()
            .zip(&other.nodes)
            .filter_map(|(a, b)| Some(a.as_ref()?.max_abs_diff(b.as_ref()?)))
            .fold(0.0, f64::max)
    }
}

/// Builds the leaf operators of a tree, indexed by node id.
pub fn leaf_operators(
    network: &ReactionNetwork,
    assignment: &FactorAssignment,
    state: &TtnState,
    boundary: Boundary,
) -> Result<Vec<Option<LeafOperator>>> {
    let tree = state.tree();
    let leaves = tree.leaves();
    let mut ops = vec![None; tree.n_nodes()];
    for (pos, &leaf) in leaves.iter().enumerate() {
        ops[leaf] = Some(LeafOperator::new(network, assignment, tree, pos, state.grid(leaf), boundary)?);
    }
    Ok(ops)
}

/// Environment coefficients of every node for a static state, taking each
/// internal node's connection tensor as its working tensor.
pub fn environments(state: &TtnState, store: &CoefficientStore, n_reactions: usize) -> Vec<EnvCoefficients> {
    let tree = state.tree();
    let mut envs = vec![EnvCoefficients::root(n_reactions); tree.n_nodes()];
    for id in 0..tree.n_nodes() {
        if let Some(children) = tree.children(id) {
            for side in 0..2 {
                let (g, _) = matricize_qr(state.tensor(id), side + 1);
                let sibling = store.node(children[1 - side]);
                envs[children[side]] = compute_ab(&g, side, &envs[id], sibling);
            }
        }
    }
    envs
}

/// Brute-force subtree propensity tables and grid of node `id`: the product
/// of the leaf factors below it, including the rate constant when the
/// designated leaf lies in the subtree.
fn subtree_tables(
    network: &ReactionNetwork,
    assignment: &FactorAssignment,
    state: &TtnState,
    id: usize,
) -> (LeafGrid, Vec<Vec<f64>>) {
    let tree = state.tree();
    let species = tree.subtree_species(id);
    let grid = LeafGrid::new(state.space(), species.clone());
    let leaves = tree.leaves();
    let below: Vec<usize> = (0..leaves.len())
        .filter(|&p| tree.leaf_species(leaves[p]).iter().all(|s| species.contains(s)))
        .collect();
    let mut x = vec![0i64; network.n_species()];
    let tables = (0..network.n_reactions())
        .map(|mu| {
            let mut t = vec![0.0; grid.size()];
            grid.for_each(|i, local| {
                for (k, &s) in species.iter().enumerate() {
                    x[s] = local[k];
                }
                t[i] = below.iter().map(|&p| assignment.leaf_value(network, mu, p, &x)).product();
            });
            t
        })
        .collect();
    (grid, tables)
}

/// `Xᵀ S D X` and `Xᵀ D X` over the states of a grid, by explicit summation.
fn explicit_inner_products(
    network: &ReactionNetwork,
    grid: &LeafGrid,
    tables: &[Vec<f64>],
    x: &DMatrix<f64>,
    mu: usize,
    boundary: Boundary,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nu: Vec<i64> = grid.species.iter().map(|&s| network.reactions[mu].stoich[s]).collect();
    let map = build_shift_map(grid, &nu);
    let r = x.ncols();
    let (mut a, mut b) = (DMatrix::zeros(r, r), DMatrix::zeros(r, r));
    let mut keep = vec![true; grid.size()];
    grid.for_each(|i, xl| keep[i] = boundary.keeps_loss(xl, &nu, &grid.lower, &grid.upper));
    for i in 0..grid.size() {
        let row = x.row(i);
        if let Some(j) = map.source(i) {
            a += row.transpose() * x.row(j) * tables[mu][j];
        }
        if keep[i] {
            b += row.transpose() * row * tables[mu][i];
        }
    }
    (a, b)
}

/// Checks the identity relating the right child's S-step coefficients
/// `e`/`f` to the node's C-step coefficients `g`/`h` at internal node `id`.
///
/// The left side is computed from materialized factors: the right child's
/// factor and the left child's factor combined with the orthonormal tensor
/// `G` (mode-2 QR of the node's connection tensor), with propensities
/// summed over explicit subtree states under the same `boundary` rule the
/// store was built with. The right side contracts `g`/`h`,
/// built from the recursively computed `A`/`B`, with two copies of `G`.
/// Returns the largest absolute deviation over all entries of `e` and `f`.
pub fn check_identity_ef_gh(
    network: &ReactionNetwork,
    assignment: &FactorAssignment,
    state: &TtnState,
    store: &CoefficientStore,
    id: usize,
    boundary: Boundary,
) -> f64 {
    let tree = state.tree();
    let [left, right] = tree.children(id).expect("internal node");
    let env = &environments(state, store, network.n_reactions())[id];
    let (g, _) = matricize_qr(state.tensor(id), 2);
    let [up, r0, r1] = g.dims();

    let x0 = state.node_factor(left);
    let x1 = state.node_factor(right);
    let (grid0, tables0) = subtree_tables(network, assignment, state, left);
    let (grid1, tables1) = subtree_tables(network, assignment, state, right);
    // W[(x0), (i_up + up * k)] = Σ_j G[i_up, j, k] X0[x0, j]
    let mut w = DMatrix::zeros(x0.nrows(), up * r1);
    for k in 0..r1 {
        for i in 0..up {
            let coeffs = nalgebra::DVector::from_fn(r0, |j, _| g.get(i, j, k));
            w.column_mut(i + up * k).copy_from(&(&x0 * coeffs));
        }
    }

    let dim = r1 * r1;
    let mut worst: f64 = 0.0;
    for shifted in [true, false] {
        let mut direct = DMatrix::<f64>::zeros(dim * dim, 1);
        let mut via_g = DMatrix::<f64>::zeros(dim * dim, 1);
        for mu in 0..network.n_reactions() {
            let (env_c, a0, a1) = if shifted {
                (&env.a[mu], &store.node(left).a[mu], &store.node(right).a[mu])
            } else {
                (&env.b[mu], &store.node(left).b[mu], &store.node(right).b[mu])
            };
            let (m1a, m1b) = explicit_inner_products(network, &grid1, &tables1, &x1, mu, boundary);
            let (nwa, nwb) = explicit_inner_products(network, &grid0, &tables0, &w, mu, boundary);
            let (m1, nw) = if shifted { (m1a, nwa) } else { (m1b, nwb) };
            let env_m = env_c.to_matrix();
            let a0m = a0.to_matrix();
            let a1m = a1.to_matrix();
            // e[i1, k, j1, l] for factor indices i1, j1 and environment
            // indices k, l; flattened as (i1 + r1 k) + dim (j1 + r1 l).
            for l in 0..r1 {
                for j1 in 0..r1 {
                    for k in 0..r1 {
                        for i1 in 0..r1 {
                            let mut lhs = 0.0;
                            for jt in 0..up {
                                for it in 0..up {
                                    lhs += env_m[(it, jt)] * nw[(it + up * k, jt + up * l)];
                                }
                            }
                            lhs *= m1[(i1, j1)];
                            let mut rhs = 0.0;
                            for jt in 0..up {
                                for j0 in 0..r0 {
                                    let gl = g.get(jt, j0, l);
                                    if gl == 0.0 {
                                        continue;
                                    }
                                    for it in 0..up {
                                        for i0 in 0..r0 {
                                            // g/h entry for (it, i0, i1, jt, j0, j1)
                                            let ghe = env_m[(it, jt)] * a0m[(i0, j0)] * a1m[(i1, j1)];
                                            rhs += g.get(it, i0, k) * gl * ghe;
                                        }
                                    }
                                }
                            }
                            let idx = (i1 + r1 * k) + dim * (j1 + r1 * l);
                            direct[idx] += lhs;
                            via_g[idx] += rhs;
                        }
                    }
                }
            }
        }
        worst = worst.max((direct - via_g).amax());
    }
    worst
}
