//! Truncated state spaces, leaf grids and shift maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorAssignment, ReactionNetwork};
use crate::tree::PartitionTree;

/// Treatment of reactions whose target state `x + ν` lies outside the box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Such reactions are blocked: their propensity is zero at `x`, so the
    /// truncated operator conserves mass.
    #[default]
    Closed,
    /// Such reactions still drain `x`; probability leaves the box.
    Leaky,
}

impl Boundary {
    /// Whether reaction firings from `x` (leaf-local state) with change `nu`
    /// count as a loss.
    pub fn keeps_loss(self, x: &[i64], nu: &[i64], lower: &[i64], upper: &[i64]) -> bool {
        match self {
            Boundary::Leaky => true,
            Boundary::Closed => (0..x.len()).all(|k| {
                let t = x[k] + nu[k];
                lower[k] <= t && t <= upper[k]
            }),
        }
    }
}

/// Box `lower[i] <= x[i] <= upper[i]` of admissible populations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncatedStateSpace {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
}

impl TruncatedStateSpace {
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension(format!(
                "bounds of lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] < 0 || lower[i] >= upper[i]) {
            return Err(Error::InvalidModel(format!(
                "species {i}: bounds {}..{} are not a valid range",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `0 <= x[i] <= upper` for all `d` species.
    pub fn uniform(d: usize, upper: i64) -> Self {
        Self::new(vec![0; d], vec![upper; d]).expect("valid uniform bounds")
    }

    pub fn n_species(&self) -> usize {
        self.lower.len()
    }

    pub fn extent(&self, species: usize) -> usize {
        (self.upper[species] - self.lower[species] + 1) as usize
    }

    /// Number of states, exact even when it does not fit in memory.
    pub fn size(&self) -> u128 {
        (0..self.n_species()).map(|i| self.extent(i) as u128).product()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    /// Grid over all species in natural order.
    pub fn full_grid(&self) -> LeafGrid {
        LeafGrid::new(self, (0..self.n_species()).collect())
    }
}

/// Linear indexing of the populations of an ordered set of species, the
/// first listed species varying fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafGrid {
    pub species: Vec<usize>,
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
    strides: Vec<usize>,
    size: usize,
}

impl LeafGrid {
    pub fn new(space: &TruncatedStateSpace, species: Vec<usize>) -> Self {
        let lower: Vec<i64> = species.iter().map(|&s| space.lower[s]).collect();
        let upper: Vec<i64> = species.iter().map(|&s| space.upper[s]).collect();
        let mut strides = Vec::with_capacity(species.len());
        let mut size = 1usize;
        for k in 0..species.len() {
            strides.push(size);
            size *= (upper[k] - lower[k] + 1) as usize;
        }
        Self { species, lower, upper, strides, size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.species.len())
            .map(|k| (self.upper[k] - self.lower[k] + 1) as usize)
            .collect()
    }

    pub fn linear_index(&self, x: &[i64]) -> Result<usize> {
        if x.len() != self.species.len() {
            return Err(Error::Dimension(format!(
                "tuple of length {} for a grid over {} species",
                x.len(),
                self.species.len()
            )));
        }
        let mut idx = 0;
        for k in 0..x.len() {
            if x[k] < self.lower[k] || x[k] > self.upper[k] {
                return Err(Error::OutOfBounds(format!(
                    "population {} of species {} outside {}..{}",
                    x[k], self.species[k], self.lower[k], self.upper[k]
                )));
            }
            idx += (x[k] - self.lower[k]) as usize * self.strides[k];
        }
        Ok(idx)
    }

    pub fn inverse_index(&self, index: usize) -> Vec<i64> {
        let mut x = vec![0; self.species.len()];
        self.inverse_into(index, &mut x);
        x
    }

    fn inverse_into(&self, mut index: usize, x: &mut [i64]) {
        for k in 0..self.species.len() {
            let n = (self.upper[k] - self.lower[k] + 1) as usize;
            x[k] = self.lower[k] + (index % n) as i64;
            index /= n;
        }
    }

    /// Calls `f(index, tuple)` for every state in index order.
    pub fn for_each(&self, mut f: impl FnMut(usize, &[i64])) {
        let mut x = self.lower.clone();
        for i in 0..self.size {
            f(i, &x);
            for k in 0..x.len() {
                if x[k] < self.upper[k] {
                    x[k] += 1;
                    break;
                }
                x[k] = self.lower[k];
            }
        }
    }
}

/// Source indices `x - ν` for every state `x` of a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftMap {
    source: Vec<usize>,
}

impl ShiftMap {
    pub const OUTSIDE: usize = usize::MAX;

    pub fn source(&self, i: usize) -> Option<usize> {
        let s = self.source[i];
        (s != Self::OUTSIDE).then_some(s)
    }

    pub fn raw(&self) -> &[usize] {
        &self.source
    }

    pub fn is_identity(&self) -> bool {
        self.source.iter().enumerate().all(|(i, &s)| s == i)
    }
}

/// Maps every state to the index of `x - nu`, or to the marker when that
/// source lies outside the grid.
pub fn build_shift_map(grid: &LeafGrid, nu: &[i64]) -> ShiftMap {
    assert_eq!(nu.len(), grid.species.len(), "stoichiometry restricted to the grid");
    let offset: i64 = nu
        .iter()
        .zip(&grid.strides)
        .map(|(&v, &s)| v * s as i64)
        .sum();
    let mut source = vec![ShiftMap::OUTSIDE; grid.size()];
    grid.for_each(|i, x| {
        let inside = (0..x.len()).all(|k| {
            let y = x[k] - nu[k];
            grid.lower[k] <= y && y <= grid.upper[k]
        });
        if inside {
            source[i] = (i as i64 - offset) as usize;
        }
    });
    ShiftMap { source }
}

/// `table[mu][i]`: product of the factors of reaction `mu` assigned to
/// `leaf`, evaluated at the leaf state `i`.
pub fn leaf_propensity_table(
    network: &ReactionNetwork,
    assignment: &FactorAssignment,
    tree: &PartitionTree,
    leaf_position: usize,
    grid: &LeafGrid,
) -> Result<Vec<Vec<f64>>> {
    let leaf = tree.leaves()[leaf_position];
    debug_assert_eq!(tree.leaf_species(leaf), grid.species.as_slice());
    let mut x = vec![0i64; network.n_species()];
    let mut tables = Vec::with_capacity(network.n_reactions());
    for mu in 0..network.n_reactions() {
        let mut table = vec![0.0; grid.size()];
        grid.for_each(|i, local| {
            for (k, &s) in grid.species.iter().enumerate() {
                x[s] = local[k];
            }
            table[i] = assignment.leaf_value(network, mu, leaf_position, &x);
        });
        if let Some(bad) = table.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "reaction {mu}: propensity factor {} at state {:?}",
                table[bad],
                grid.inverse_index(bad)
            )));
        }
        tables.push(table);
    }
    Ok(tables)
}
