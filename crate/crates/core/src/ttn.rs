//! Binary tree tensor network states.
//!
//! Leaves store factor matrices `U` (`n × r`, grid index by row); internal
//! nodes store connection tensors `Q` of shape `r_up × r_left × r_right`.
//! The root tensor has `r_up = 1` and carries the norm of the distribution.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dense::DenseDistribution;
use crate::error::{Error, Result};
use crate::grid::{LeafGrid, TruncatedStateSpace};
use crate::linalg::{complete_basis, leading_left_singular_vectors, qr_positive, Tensor3};
use crate::tree::PartitionTree;

/// Default limit on the number of entries [`TtnState::eval_full`] may create.
pub const DEFAULT_GUARD: u128 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub enum NodeData {
    Leaf(DMatrix<f64>),
    Internal(Tensor3),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtnState {
    tree: PartitionTree,
    space: TruncatedStateSpace,
    grids: Vec<Option<LeafGrid>>,
    nodes: Vec<NodeData>,
}

/// Storage required by a tree tensor network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub entries: u128,
    pub bytes: u128,
}

/// Entries of all leaf factors and connection tensors, at 8 bytes each.
pub fn memory_footprint(tree: &PartitionTree, space: &TruncatedStateSpace) -> Footprint {
    let mut entries = 0u128;
    for id in 0..tree.n_nodes() {
        let up = tree.edge_rank(id) as u128;
        entries += match tree.rank(id) {
            Some(r) => up * (r as u128) * (r as u128),
            None => {
                let n: u128 = tree
                    .leaf_species(id)
                    .iter()
                    .map(|&s| space.extent(s) as u128)
                    .product();
                n * up
            }
        };
    }
    Footprint { entries, bytes: entries * 8 }
}

fn leaf_grids(tree: &PartitionTree, space: &TruncatedStateSpace) -> Result<Vec<Option<LeafGrid>>> {
    if space.n_species() != tree.n_species() {
        return Err(Error::Dimension(format!(
            "state space has {} species, tree has {}",
            space.n_species(),
            tree.n_species()
        )));
    }
    let grids: Vec<Option<LeafGrid>> = (0..tree.n_nodes())
        .map(|id| tree.is_leaf(id).then(|| LeafGrid::new(space, tree.leaf_species(id).to_vec())))
        .collect();
    tree.check_leaf_ranks(|id| grids[id].as_ref().unwrap().size())?;
    Ok(grids)
}

impl TtnState {
    /// Assembles a state from node data in preorder, checking shapes.
    pub fn new(tree: PartitionTree, space: TruncatedStateSpace, nodes: Vec<NodeData>) -> Result<Self> {
        let grids = leaf_grids(&tree, &space)?;
        if nodes.len() != tree.n_nodes() {
            return Err(Error::Dimension(format!(
                "{} node payloads for {} nodes",
                nodes.len(),
                tree.n_nodes()
            )));
        }
        for (id, data) in nodes.iter().enumerate() {
            let up = tree.edge_rank(id);
            let ok = match (data, tree.rank(id)) {
                (NodeData::Leaf(u), None) => u.nrows() == grids[id].as_ref().unwrap().size() && u.ncols() == up,
                (NodeData::Internal(q), Some(r)) => q.dims() == [up, r, r],
                _ => false,
            };
            if !ok {
                return Err(Error::Dimension(format!("payload of node {id} has the wrong shape")));
            }
        }
        Ok(Self { tree, space, grids, nodes })
    }

    /// Exact rank-one representation of a product distribution, padded to
    /// the tree's ranks. `leaf_distributions` are given in tree order.
    pub fn from_product(
        tree: &PartitionTree,
        space: &TruncatedStateSpace,
        leaf_distributions: &[Vec<f64>],
    ) -> Result<Self> {
        let grids = leaf_grids(tree, space)?;
        let leaves = tree.leaves();
        if leaf_distributions.len() != leaves.len() {
            return Err(Error::Dimension(format!(
                "{} leaf distributions for {} leaves",
                leaf_distributions.len(),
                leaves.len()
            )));
        }
        let mut nodes = Vec::with_capacity(tree.n_nodes());
        let mut scale = 1.0;
        for id in 0..tree.n_nodes() {
            let up = tree.edge_rank(id);
            match tree.rank(id) {
                None => {
                    let pos = leaves.iter().position(|&l| l == id).unwrap();
                    let p = &leaf_distributions[pos];
                    let n = grids[id].as_ref().unwrap().size();
                    if p.len() != n {
                        return Err(Error::Dimension(format!("leaf {pos}: {} values for {n} states", p.len())));
                    }
                    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                        return Err(Error::InvalidModel(format!("leaf {pos}: negative or non-finite probability")));
                    }
                    let v = DVector::from_column_slice(p);
                    let norm = v.norm();
                    if norm == 0.0 {
                        return Err(Error::ZeroNorm(pos));
                    }
                    if tree.n_nodes() == 1 {
                        nodes.push(NodeData::Leaf(DMatrix::from_column_slice(n, 1, p)));
                        continue;
                    }
                    scale *= norm;
                    let first = DMatrix::from_column_slice(n, 1, (v / norm).as_slice());
                    nodes.push(NodeData::Leaf(complete_basis(&first, up)));
                }
                Some(r) => {
                    let mut first = DMatrix::zeros(r * r, 1);
                    first[(0, 0)] = 1.0;
                    let cols = complete_basis(&first, up);
                    nodes.push(NodeData::Internal(Tensor3::fold(0, &cols, [up, r, r])));
                }
            }
        }
        if let NodeData::Internal(q) = &mut nodes[0] {
            q.scale(scale);
        }
        Ok(Self { tree: tree.clone(), space: space.clone(), grids, nodes })
    }

    /// Truncated hierarchical SVD of a dense distribution. Each node's basis
    /// is the leading left singular subspace of the matricization that
    /// separates its subtree; connection tensors are the projections onto
    /// the child bases.
    pub fn from_dense(dense: &DenseDistribution, tree: &PartitionTree) -> Result<Self> {
        let space = dense.space().clone();
        let grids = leaf_grids(tree, &space)?;
        if space.size() > DEFAULT_GUARD {
            return Err(Error::GuardExceeded { requested: space.size(), limit: DEFAULT_GUARD });
        }
        if tree.n_nodes() == 1 {
            let perm = dense.matricize(&tree.subtree_species(0));
            let n = perm.nrows();
            return Self::new(tree.clone(), space, vec![NodeData::Leaf(DMatrix::from_column_slice(n, 1, perm.as_slice()))]);
        }
        let mut bases: Vec<Option<DMatrix<f64>>> = vec![None; tree.n_nodes()];
        for id in 1..tree.n_nodes() {
            let m = dense.matricize(&tree.subtree_species(id));
            bases[id] = Some(leading_left_singular_vectors(m, tree.edge_rank(id)));
        }
        let mut nodes = Vec::with_capacity(tree.n_nodes());
        for id in 0..tree.n_nodes() {
            match tree.children(id) {
                None => nodes.push(NodeData::Leaf(bases[id].clone().unwrap())),
                Some([a, b]) => {
                    let va = bases[a].as_ref().unwrap();
                    let vb = bases[b].as_ref().unwrap();
                    let (na, nb) = (va.nrows(), vb.nrows());
                    let up = tree.edge_rank(id);
                    let r = tree.rank(id).unwrap();
                    let columns: Vec<Vec<f64>> = if id == 0 {
                        vec![dense.matricize(&tree.subtree_species(0)).as_slice().to_vec()]
                    } else {
                        let v = bases[id].as_ref().unwrap();
                        (0..up).map(|i| v.column(i).iter().copied().collect()).collect()
                    };
                    let mut q = Tensor3::zeros([up, r, r]);
                    for (i, col) in columns.iter().enumerate() {
                        let block = DMatrix::from_column_slice(na, nb, col);
                        let proj = va.transpose() * block * vb;
                        for k in 0..r {
                            for j in 0..r {
                                q.set(i, j, k, proj[(j, k)]);
                            }
                        }
                    }
                    nodes.push(NodeData::Internal(q));
                }
            }
        }
        let mut state = Self { tree: tree.clone(), space, grids, nodes };
        state.orthonormalize();
        Ok(state)
    }

    /// Random entries in `[-1, 1)`, then orthonormalized.
    pub fn random(tree: &PartitionTree, space: &TruncatedStateSpace, rng: &mut impl Rng) -> Result<Self> {
        let grids = leaf_grids(tree, space)?;
        let nodes = (0..tree.n_nodes())
            .map(|id| {
                let up = tree.edge_rank(id);
                match tree.rank(id) {
                    None => {
                        let n = grids[id].as_ref().unwrap().size();
                        NodeData::Leaf(DMatrix::from_fn(n, up, |_, _| rng.random_range(-1.0..1.0)))
                    }
                    Some(r) => NodeData::Internal(Tensor3::from_fn([up, r, r], |_, _, _| rng.random_range(-1.0..1.0))),
                }
            })
            .collect();
        let mut state = Self { tree: tree.clone(), space: space.clone(), grids, nodes };
        state.orthonormalize();
        Ok(state)
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn space(&self) -> &TruncatedStateSpace {
        &self.space
    }

    pub fn grid(&self, leaf: usize) -> &LeafGrid {
        self.grids[leaf].as_ref().expect("node is a leaf")
    }

    pub fn node(&self, id: usize) -> &NodeData {
        &self.nodes[id]
    }

    pub fn leaf_matrix(&self, id: usize) -> &DMatrix<f64> {
        match &self.nodes[id] {
            NodeData::Leaf(u) => u,
            NodeData::Internal(_) => panic!("node {id} is internal"),
        }
    }

    pub fn tensor(&self, id: usize) -> &Tensor3 {
        match &self.nodes[id] {
            NodeData::Internal(q) => q,
            NodeData::Leaf(_) => panic!("node {id} is a leaf"),
        }
    }

    pub fn set_leaf_matrix(&mut self, id: usize, u: DMatrix<f64>) {
        match &mut self.nodes[id] {
            NodeData::Leaf(old) => {
                assert_eq!(old.shape(), u.shape(), "leaf shape");
                *old = u;
            }
            NodeData::Internal(_) => panic!("node {id} is internal"),
        }
    }

    pub fn set_tensor(&mut self, id: usize, q: Tensor3) {
        match &mut self.nodes[id] {
            NodeData::Internal(old) => {
                assert_eq!(old.dims(), q.dims(), "tensor shape");
                *old = q;
            }
            NodeData::Leaf(_) => panic!("node {id} is a leaf"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            NodeData::Leaf(u) => u.iter().all(|v| v.is_finite()),
            NodeData::Internal(q) => q.is_finite(),
        })
    }

    /// Leaf-to-root QR sweep making every non-root factor orthonormal. The
    /// triangular factors are absorbed into the parents.
    pub fn orthonormalize(&mut self) {
        for id in self.tree.postorder() {
            let Some(parent) = self.tree.parent(id) else { continue };
            let r = match &mut self.nodes[id] {
                NodeData::Leaf(u) => {
                    let (q, r) = qr_positive(u.clone());
                    *u = q;
                    r
                }
                NodeData::Internal(t) => {
                    let dims = t.dims();
                    let (q, r) = qr_positive(t.unfold(0));
                    *t = Tensor3::fold(0, &q, dims);
                    r
                }
            };
            let slot = if self.tree.children(parent).unwrap()[0] == id { 1 } else { 2 };
            if let NodeData::Internal(p) = &mut self.nodes[parent] {
                *p = p.mode_mul(slot, &r);
            }
        }
    }

    /// Materialized factor of node `id`: rows index the states of the
    /// subtree's species (left subtree first, first species fastest).
    pub fn node_factor(&self, id: usize) -> DMatrix<f64> {
        match &self.nodes[id] {
            NodeData::Leaf(u) => u.clone(),
            NodeData::Internal(q) => {
                let [a, b] = self.tree.children(id).unwrap();
                let fa = self.node_factor(a);
                let fb = self.node_factor(b);
                let [up, ra, rb] = q.dims();
                let mut out = DMatrix::zeros(fa.nrows() * fb.nrows(), up);
                for i in 0..up {
                    let core = DMatrix::from_fn(ra, rb, |j, k| q.get(i, j, k));
                    let block = &fa * core * fb.transpose();
                    out.column_mut(i).copy_from_slice(block.as_slice());
                }
                out
            }
        }
    }

    /// The represented distribution over the full state space.
    pub fn eval_full(&self) -> Result<DenseDistribution> {
        self.eval_full_guarded(DEFAULT_GUARD)
    }

    pub fn eval_full_guarded(&self, guard: u128) -> Result<DenseDistribution> {
        let size = self.space.size();
        if size > guard {
            return Err(Error::GuardExceeded { requested: size, limit: guard });
        }
        let x = self.node_factor(0);
        DenseDistribution::from_matricized(&self.space, &self.tree.subtree_species(0), x.as_slice())
    }

    /// Contracts the network with one weight vector per leaf, already
    /// projected onto the leaf basis (`U^T w`).
    fn contract(&self, projected: &[Option<DVector<f64>>]) -> f64 {
        self.contract_node(0, projected)[0]
    }

    fn contract_node(&self, id: usize, projected: &[Option<DVector<f64>>]) -> DVector<f64> {
        match &self.nodes[id] {
            NodeData::Leaf(_) => projected[id].clone().expect("leaf vector"),
            NodeData::Internal(q) => {
                let [a, b] = self.tree.children(id).unwrap();
                let va = self.contract_node(a, projected);
                let vb = self.contract_node(b, projected);
                let [up, ra, rb] = q.dims();
                DVector::from_fn(up, |i, _| {
                    let mut s = 0.0;
                    for k in 0..rb {
                        let mut t = 0.0;
                        for j in 0..ra {
                            t += q.get(i, j, k) * va[j];
                        }
                        s += t * vb[k];
                    }
                    s
                })
            }
        }
    }

    fn ones_projections(&self) -> Vec<Option<DVector<f64>>> {
        (0..self.tree.n_nodes())
            .map(|id| match &self.nodes[id] {
                NodeData::Leaf(u) => Some(DVector::from_iterator(u.ncols(), u.column_iter().map(|c| c.sum()))),
                NodeData::Internal(_) => None,
            })
            .collect()
    }

    /// Total probability.
    pub fn mass(&self) -> f64 {
        self.contract(&self.ones_projections())
    }

    /// Contracts with per-species weights `weight(x_s)` on `species` and ones
    /// elsewhere.
    fn weighted_sum(&self, species: usize, weight: impl Fn(i64) -> f64) -> f64 {
        let leaf = self.tree.leaf_of_species()[species];
        let grid = self.grid(leaf);
        let k = grid.species.iter().position(|&s| s == species).unwrap();
        let mut w = vec![0.0; grid.size()];
        grid.for_each(|i, x| w[i] = weight(x[k]));
        let mut projected = self.ones_projections();
        projected[leaf] = Some(self.leaf_matrix(leaf).tr_mul(&DVector::from_vec(w)));
        self.contract(&projected)
    }

    /// Marginal distribution of one species over its truncated range.
    pub fn marginal(&self, species: usize) -> Vec<f64> {
        let leaf = self.tree.leaf_of_species()[species];
        let grid = self.grid(leaf);
        let k = grid.species.iter().position(|&s| s == species).unwrap();
        let m = self.space.extent(species);
        let lo = self.space.lower[species];
        let mut indicator = DMatrix::zeros(grid.size(), m);
        grid.for_each(|i, x| indicator[(i, (x[k] - lo) as usize)] = 1.0);
        let proj = self.leaf_matrix(leaf).tr_mul(&indicator);
        let mut projected = self.ones_projections();
        (0..m)
            .map(|v| {
                projected[leaf] = Some(proj.column(v).into_owned());
                self.contract(&projected)
            })
            .collect()
    }

    pub fn marginals(&self) -> Vec<Vec<f64>> {
        (0..self.tree.n_species()).map(|s| self.marginal(s)).collect()
    }

    /// Raw moment `Σ_x x_s^order P(x)`, not normalized by the mass.
    pub fn moment(&self, species: usize, order: u32) -> f64 {
        self.weighted_sum(species, |x| (x as f64).powi(order as i32))
    }

    /// Mean and standard deviation of a species, normalized by the mass.
    pub fn mean_std(&self, species: usize) -> (f64, f64) {
        let mass = self.mass();
        let mean = self.moment(species, 1) / mass;
        let second = self.moment(species, 2) / mass;
        (mean, (second - mean * mean).max(0.0).sqrt())
    }

    pub fn footprint(&self) -> Footprint {
        memory_footprint(&self.tree, &self.space)
    }

    /// Writes the binary snapshot format.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        let text = self.tree.to_string();
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        let ranks = self.tree.ranks();
        w.write_all(&(ranks.len() as u32).to_le_bytes())?;
        for r in ranks {
            w.write_all(&(r as u64).to_le_bytes())?;
        }
        for leaf in self.tree.leaves() {
            let g = self.grid(leaf);
            for k in 0..g.species.len() {
                w.write_all(&g.lower[k].to_le_bytes())?;
                w.write_all(&g.upper[k].to_le_bytes())?;
            }
        }
        for node in &self.nodes {
            let data = match node {
                NodeData::Leaf(u) => u.as_slice(),
                NodeData::Internal(q) => q.data(),
            };
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let len = read_u32(r)? as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|_| Error::Snapshot("tree string is not UTF-8".into()))?;
        let n_ranks = read_u32(r)? as usize;
        let ranks = (0..n_ranks).map(|_| read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let tree = PartitionTree::parse(&text, &ranks)?;
        let d = tree.n_species();
        let (mut lower, mut upper) = (vec![0i64; d], vec![0i64; d]);
        for leaf in tree.leaves() {
            for &s in tree.leaf_species(leaf) {
                lower[s] = read_i64(r)?;
                upper[s] = read_i64(r)?;
            }
        }
        let space = TruncatedStateSpace::new(lower, upper).map_err(|e| Error::Snapshot(e.to_string()))?;
        let grids = leaf_grids(&tree, &space)?;
        let mut nodes = Vec::with_capacity(tree.n_nodes());
        for id in 0..tree.n_nodes() {
            let up = tree.edge_rank(id);
            match tree.rank(id) {
                None => {
                    let n = grids[id].as_ref().unwrap().size();
                    let data = read_f64s(r, n * up)?;
                    nodes.push(NodeData::Leaf(DMatrix::from_vec(n, up, data)));
                }
                Some(rank) => {
                    let data = read_f64s(r, up * rank * rank)?;
                    nodes.push(NodeData::Internal(Tensor3::from_vec([up, rank, rank], data)));
                }
            }
        }
        Self::new(tree, space, nodes)
    }
}

const SNAPSHOT_MAGIC: &[u8; 7] = b"TTNCME1";

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64(r: &mut impl Read) -> Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
