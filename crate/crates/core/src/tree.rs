//! Binary partition trees over the species of a network.
//!
//! Nodes are stored in depth-first preorder with the root at index 0. Every
//! internal node carries a rank that is shared by the edges to both of its
//! children, so the factor of a node has as many columns as the rank of its
//! parent (the root has external rank 1).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Leaf { species: Vec<usize> },
    Internal { children: [usize; 2], rank: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub parent: Option<usize>,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionTree {
    nodes: Vec<Node>,
    n_species: usize,
}

enum Raw {
    Leaf(Vec<usize>),
    Pair(Box<Raw>, Box<Raw>),
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: 1,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            Some(got) => Err(self.err(format!("expected '{}', found '{}'", c as char, got as char))),
            None => Err(self.err(format!("expected '{}', found end of input", c as char))),
        }
    }

    fn tree(&mut self) -> Result<Raw> {
        self.expect(b'(')?;
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {
                let mut species = Vec::new();
                while let Some(c) = self.peek() {
                    if !c.is_ascii_digit() {
                        break;
                    }
                    let start = self.pos;
                    while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    let digits = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
                    species.push(digits.parse().map_err(|_| self.err("species index too large"))?);
                }
                self.expect(b')')?;
                Ok(Raw::Leaf(species))
            }
            Some(b'(') => {
                let left = self.tree()?;
                if self.peek() == Some(b')') {
                    // A parenthesized single tree, as in "((0 1 2))".
                    self.pos += 1;
                    return Ok(left);
                }
                let right = self.tree()?;
                self.expect(b')')?;
                Ok(Raw::Pair(Box::new(left), Box::new(right)))
            }
            Some(c) => Err(self.err(format!("unexpected '{}'", c as char))),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

impl PartitionTree {
    /// Parses a partition string such as `"((0 1)((2 3)(4)))"`. The ranks are
    /// listed for the internal nodes in depth-first preorder.
    pub fn parse(text: &str, ranks: &[usize]) -> Result<Self> {
        let mut parser = Parser { text: text.as_bytes(), pos: 0 };
        let raw = parser.tree()?;
        if parser.peek().is_some() {
            return Err(parser.err("trailing characters after partition"));
        }
        let mut nodes = Vec::new();
        let mut next_rank = ranks.iter().copied();
        let mut missing = false;
        flatten(&raw, None, &mut nodes, &mut next_rank, &mut missing);
        if missing || next_rank.next().is_some() {
            let internal = nodes
                .iter()
                .filter(|n| matches!(n.kind, NodeKind::Internal { .. }))
                .count();
            return Err(Error::InvalidPartition(format!(
                "{} ranks given for {internal} internal nodes",
                ranks.len()
            )));
        }
        let tree = Self::from_nodes(nodes)?;
        Ok(tree)
    }

    fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        let mut count = Vec::new();
        for node in &nodes {
            if let NodeKind::Leaf { species } = &node.kind {
                if species.is_empty() {
                    return Err(Error::InvalidPartition("empty leaf".into()));
                }
                for &s in species {
                    if s >= count.len() {
                        count.resize(s + 1, 0usize);
                    }
                    count[s] += 1;
                }
            }
        }
        if let Some(s) = count.iter().position(|&c| c == 0) {
            return Err(Error::InvalidPartition(format!("species {s} is missing")));
        }
        if let Some(s) = count.iter().position(|&c| c > 1) {
            return Err(Error::InvalidPartition(format!("species {s} appears more than once")));
        }
        let tree = Self { n_species: count.len(), nodes };
        tree.check_rank_conditions()?;
        Ok(tree)
    }

    /// Checks `r ≤ r0 r1`, `r0 ≤ r1 r` and `r1 ≤ r0 r` at every internal node.
    fn check_rank_conditions(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Internal { children, rank } = node.kind {
                if rank == 0 {
                    return Err(Error::InvalidPartition(format!("zero rank at node {id}")));
                }
                let up = self.edge_rank(id);
                let (r0, r1) = (self.edge_rank(children[0]), self.edge_rank(children[1]));
                if up > r0 * r1 || r0 > r1 * up || r1 > r0 * up {
                    return Err(Error::InvalidPartition(format!(
                        "rank condition violated at node {id}: ({up}, {r0}, {r1})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that no leaf has more columns than grid points.
    pub fn check_leaf_ranks(&self, leaf_sizes: impl Fn(usize) -> usize) -> Result<()> {
        for &leaf in &self.leaves() {
            let (r, n) = (self.edge_rank(leaf), leaf_sizes(leaf));
            if r > n {
                return Err(Error::InvalidPartition(format!(
                    "leaf {:?} has rank {r} but only {n} states",
                    self.leaf_species(leaf)
                )));
            }
        }
        Ok(())
    }

    /// Same tree shape with new internal ranks (preorder).
    pub fn with_ranks(&self, ranks: &[usize]) -> Result<Self> {
        Self::parse(&self.to_string(), ranks)
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.nodes[id].kind, NodeKind::Leaf { .. })
    }

    pub fn children(&self, id: usize) -> Option<[usize; 2]> {
        match self.nodes[id].kind {
            NodeKind::Internal { children, .. } => Some(children),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    /// Rank of an internal node, i.e. of both of its child edges.
    pub fn rank(&self, id: usize) -> Option<usize> {
        match self.nodes[id].kind {
            NodeKind::Internal { rank, .. } => Some(rank),
            NodeKind::Leaf { .. } => None,
        }
    }

    /// Number of columns of the factor of `id`.
    pub fn edge_rank(&self, id: usize) -> usize {
        self.nodes[id]
            .parent
            .map_or(1, |p| self.rank(p).expect("parent is internal"))
    }

    /// Internal ranks in preorder.
    pub fn ranks(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter_map(|id| self.rank(id)).collect()
    }

    pub fn leaf_species(&self, id: usize) -> &[usize] {
        match &self.nodes[id].kind {
            NodeKind::Leaf { species } => species,
            NodeKind::Internal { .. } => &[],
        }
    }

    /// Leaf node ids in tree order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&id| self.is_leaf(id)).collect()
    }

    /// Internal node ids in preorder.
    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&id| !self.is_leaf(id)).collect()
    }

    /// Node ids with every child before its parent.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        self.visit_post(0, &mut out);
        out
    }

    fn visit_post(&self, id: usize, out: &mut Vec<usize>) {
        if let Some([a, b]) = self.children(id) {
            self.visit_post(a, out);
            self.visit_post(b, out);
        }
        out.push(id);
    }

    /// Species below `id`, left subtree first.
    pub fn subtree_species(&self, id: usize) -> Vec<usize> {
        match self.children(id) {
            None => self.leaf_species(id).to_vec(),
            Some([a, b]) => {
                let mut s = self.subtree_species(a);
                s.extend(self.subtree_species(b));
                s
            }
        }
    }

    /// Index of the leaf containing each species (leaf ids, not positions).
    pub fn leaf_of_species(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_species];
        for leaf in self.leaves() {
            for &s in self.leaf_species(leaf) {
                out[s] = leaf;
            }
        }
        out
    }

    /// Child positions (0 = left, 1 = right) from the root to `id`.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            let [a, _] = self.children(p).unwrap();
            path.push(if a == cur { 0 } else { 1 });
            cur = p;
        }
        path.reverse();
        path
    }

    fn write_node(&self, id: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.nodes[id].kind {
            NodeKind::Leaf { species } => {
                let s: Vec<String> = species.iter().map(|s| s.to_string()).collect();
                write!(f, "({})", s.join(" "))
            }
            NodeKind::Internal { children, .. } => {
                write!(f, "(")?;
                self.write_node(children[0], f)?;
                self.write_node(children[1], f)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for PartitionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_leaf(0) {
            write!(f, "(")?;
            self.write_node(0, f)?;
            write!(f, ")")
        } else {
            self.write_node(0, f)
        }
    }
}

fn flatten(
    raw: &Raw,
    parent: Option<usize>,
    nodes: &mut Vec<Node>,
    ranks: &mut impl Iterator<Item = usize>,
    missing: &mut bool,
) -> usize {
    let id = nodes.len();
    match raw {
        Raw::Leaf(species) => nodes.push(Node {
            parent,
            kind: NodeKind::Leaf { species: species.clone() },
        }),
        Raw::Pair(left, right) => {
            let rank = ranks.next().unwrap_or_else(|| {
                *missing = true;
                1
            });
            nodes.push(Node {
                parent,
                kind: NodeKind::Internal { children: [0, 0], rank },
            });
            let a = flatten(left, Some(id), nodes, ranks, missing);
            let b = flatten(right, Some(id), nodes, ranks, missing);
            if let NodeKind::Internal { children, .. } = &mut nodes[id].kind {
                *children = [a, b];
            }
        }
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_p0() {
        let t = PartitionTree::parse("((0 1)((2 3)(4)))", &[5, 5]).unwrap();
        assert_eq!(t.n_species(), 5);
        assert_eq!(t.n_nodes(), 5);
        let leaves = t.leaves();
        assert_eq!(leaves.len(), 3);
        assert_eq!(t.leaf_species(leaves[0]), &[0, 1]);
        assert_eq!(t.leaf_species(leaves[2]), &[4]);
        assert_eq!(t.ranks(), vec![5, 5]);
        assert_eq!(t.edge_rank(0), 1);
        assert_eq!(t.to_string(), "((0 1)((2 3)(4)))");
        assert_eq!(t.path(leaves[2]), vec![1, 1]);
    }

    #[test]
    fn partition_p1_and_single_leaf() {
        let t = PartitionTree::parse("(((0 1)(2 3))(4))", &[5, 5]).unwrap();
        assert_eq!(t.subtree_species(0), vec![0, 1, 2, 3, 4]);
        let single = PartitionTree::parse("((0 1 2 3 4))", &[]).unwrap();
        assert!(single.is_leaf(0));
        assert_eq!(single.n_nodes(), 1);
        assert_eq!(single.to_string(), "((0 1 2 3 4))");
    }

    #[test]
    fn whitespace_between_subtrees_is_allowed() {
        let t = PartitionTree::parse(" ( (0 1) ( (2 3) (4) ) )", &[5, 5]).unwrap();
        assert_eq!(t.to_string(), "((0 1)((2 3)(4)))");
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            PartitionTree::parse("((0 1)(2)", &[1]),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            PartitionTree::parse("((0 1)(1))", &[1]),
            Err(Error::InvalidPartition(_))
        ));
        assert!(matches!(
            PartitionTree::parse("((0 2)(3))", &[1]),
            Err(Error::InvalidPartition(_))
        ));
        assert!(matches!(
            PartitionTree::parse("((0 1)(2))", &[]),
            Err(Error::InvalidPartition(_))
        ));
    }

    #[test]
    fn rank_condition_is_enforced() {
        // The inner node has rank 2 on its child edges but must carry rank 5
        // to its parent: 5 > 2 * 2.
        let err = PartitionTree::parse("((0)((1)(2)))", &[5, 2]).unwrap_err();
        assert!(err.to_string().contains("rank condition"), "{err}");
        PartitionTree::parse("((0)((1)(2)))", &[4, 2]).unwrap();
    }
}
