//! Full probability arrays on the truncated state space and the matrix-free
//! CME operator acting on them.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Boundary, LeafGrid, TruncatedStateSpace};
use crate::model::ReactionNetwork;
use crate::stepper::{advance, LinearFlow, StepperConfig};
use crate::ttn::DEFAULT_GUARD;

/// Probabilities over all states, species 0 varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDistribution {
    space: TruncatedStateSpace,
    data: Vec<f64>,
}

fn guarded_size(space: &TruncatedStateSpace) -> Result<usize> {
    let size = space.size();
    if size > DEFAULT_GUARD {
        return Err(Error::GuardExceeded { requested: size, limit: DEFAULT_GUARD });
    }
    Ok(size as usize)
}

impl DenseDistribution {
    pub fn zeros(space: &TruncatedStateSpace) -> Result<Self> {
        let n = guarded_size(space)?;
        Ok(Self { space: space.clone(), data: vec![0.0; n] })
    }

    pub fn from_vec(space: &TruncatedStateSpace, data: Vec<f64>) -> Result<Self> {
        let n = guarded_size(space)?;
        if data.len() != n {
            return Err(Error::Dimension(format!("{} values for {n} states", data.len())));
        }
        Ok(Self { space: space.clone(), data })
    }

    pub fn from_fn(space: &TruncatedStateSpace, mut f: impl FnMut(&[i64]) -> f64) -> Result<Self> {
        let mut out = Self::zeros(space)?;
        space.full_grid().for_each(|i, x| out.data[i] = f(x));
        Ok(out)
    }

    /// Unit mass at one state.
    pub fn delta(space: &TruncatedStateSpace, x: &[i64]) -> Result<Self> {
        let mut out = Self::zeros(space)?;
        let i = space.full_grid().linear_index(x)?;
        out.data[i] = 1.0;
        Ok(out)
    }

    /// Builds a distribution from values listed with the species in `order`
    /// (first fastest) instead of the natural order.
    pub fn from_matricized(space: &TruncatedStateSpace, order: &[usize], values: &[f64]) -> Result<Self> {
        let mut out = Self::zeros(space)?;
        let grid = LeafGrid::new(space, order.to_vec());
        let mut local = vec![0i64; order.len()];
        space.full_grid().for_each(|i, x| {
            for (k, &s) in order.iter().enumerate() {
                local[k] = x[s];
            }
            out.data[i] = values[grid.linear_index(&local).expect("state in range")];
        });
        Ok(out)
    }

    pub fn space(&self) -> &TruncatedStateSpace {
        &self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn marginal(&self, species: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.space.extent(species)];
        let lo = self.space.lower[species];
        self.space
            .full_grid()
            .for_each(|i, x| out[(x[species] - lo) as usize] += self.data[i]);
        out
    }

    pub fn marginals(&self) -> Vec<Vec<f64>> {
        (0..self.space.n_species()).map(|s| self.marginal(s)).collect()
    }

    /// Mean and standard deviation of a species, normalized by the mass.
    pub fn mean_std(&self, species: usize) -> (f64, f64) {
        let lo = self.space.lower[species];
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (k, p) in self.marginal(species).iter().enumerate() {
            let x = (lo + k as i64) as f64;
            m0 += p;
            m1 += x * p;
            m2 += x * x * p;
        }
        let mean = m1 / m0;
        (mean, (m2 / m0 - mean * mean).max(0.0).sqrt())
    }

    /// Euclidean distance to another distribution on the same space.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.space != other.space {
            return Err(Error::Dimension("distributions live on different state spaces".into()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Matrix whose rows index the states of `row_species` (in that order,
    /// first fastest) and whose columns index the remaining species in
    /// natural order.
    pub fn matricize(&self, row_species: &[usize]) -> DMatrix<f64> {
        let d = self.space.n_species();
        let col_species: Vec<usize> = (0..d).filter(|s| !row_species.contains(s)).collect();
        let rows = LeafGrid::new(&self.space, row_species.to_vec());
        let cols = LeafGrid::new(&self.space, col_species.clone());
        let mut m = DMatrix::zeros(rows.size(), cols.size());
        let (mut xr, mut xc) = (vec![0i64; row_species.len()], vec![0i64; col_species.len()]);
        self.space.full_grid().for_each(|i, x| {
            for (k, &s) in row_species.iter().enumerate() {
                xr[k] = x[s];
            }
            for (k, &s) in col_species.iter().enumerate() {
                xc[k] = x[s];
            }
            let r = rows.linear_index(&xr).unwrap();
            let c = cols.linear_index(&xc).unwrap();
            m[(r, c)] = self.data[i];
        });
        m
    }

    fn from_matrix(space: &TruncatedStateSpace, row_species: &[usize], m: &DMatrix<f64>) -> Result<Self> {
        let d = space.n_species();
        let col_species: Vec<usize> = (0..d).filter(|s| !row_species.contains(s)).collect();
        let mut order = row_species.to_vec();
        order.extend(&col_species);
        Self::from_matricized(space, &order, m.as_slice())
    }
}

struct ReactionTerm {
    /// Linear index offset of `x - nu`.
    offset: isize,
    /// `alpha(x - nu)` where the source lies in the domain, else 0.
    gain: Vec<f64>,
}

/// The CME operator restricted to a truncated state space. Gains from
/// sources outside the domain are dropped; losses towards targets outside
/// the domain follow the [`Boundary`] rule.
pub struct CmeOperator {
    space: TruncatedStateSpace,
    terms: Vec<ReactionTerm>,
    loss: Vec<f64>,
}

const CHUNK: usize = 4096;

impl CmeOperator {
    pub fn new(network: &ReactionNetwork, space: &TruncatedStateSpace) -> Result<Self> {
        Self::with_boundary(network, space, Boundary::default())
    }

    pub fn with_boundary(network: &ReactionNetwork, space: &TruncatedStateSpace, boundary: Boundary) -> Result<Self> {
        if network.n_species() != space.n_species() {
            return Err(Error::Dimension(format!(
                "network has {} species, state space {}",
                network.n_species(),
                space.n_species()
            )));
        }
        let n = guarded_size(space)?;
        let grid = space.full_grid();
        let mut strides = vec![1isize; space.n_species()];
        for s in 1..space.n_species() {
            strides[s] = strides[s - 1] * space.extent(s - 1) as isize;
        }
        let mut loss = vec![0.0; n];
        let mut terms = Vec::with_capacity(network.n_reactions());
        let mut src = vec![0i64; space.n_species()];
        for r in &network.reactions {
            let offset: isize = r.stoich.iter().zip(&strides).map(|(&v, &s)| v as isize * s).sum();
            let mut gain = vec![0.0; n];
            grid.for_each(|i, x| {
                if boundary.keeps_loss(x, &r.stoich, &space.lower, &space.upper) {
                    loss[i] += r.propensity(x);
                }
                for k in 0..x.len() {
                    src[k] = x[k] - r.stoich[k];
                }
                if space.contains(&src) {
                    gain[i] = r.propensity(&src);
                }
            });
            terms.push(ReactionTerm { offset, gain });
        }
        if let Some(i) = loss.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "negative or non-finite total propensity at state {:?}",
                grid.inverse_index(i)
            )));
        }
        Ok(Self { space: space.clone(), terms, loss })
    }

    pub fn space(&self) -> &TruncatedStateSpace {
        &self.space
    }

    pub fn apply_operator(&self, p: &DenseDistribution) -> DenseDistribution {
        let mut out = DenseDistribution::zeros(&self.space).expect("operator space is guarded");
        self.apply(p.data(), out.data_mut());
        out
    }
}

impl LinearFlow for CmeOperator {
    fn dim(&self) -> usize {
        self.loss.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len() as isize;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let start = c * CHUNK;
            let end = start + chunk.len();
            for (o, (l, v)) in chunk.iter_mut().zip(self.loss[start..end].iter().zip(&x[start..end])) {
                *o = -l * v;
            }
            for t in &self.terms {
                // Rows whose source index lies inside the array; the gain is
                // zero wherever the source state is outside the domain.
                let lo = (start as isize).max(t.offset).max(0) as usize;
                let hi = (end as isize).min(n + t.offset).max(lo as isize) as usize;
                if lo >= hi {
                    continue;
                }
                let src = &x[(lo as isize - t.offset) as usize..(hi as isize - t.offset) as usize];
                let dst = &mut chunk[lo - start..hi - start];
                for ((o, g), v) in dst.iter_mut().zip(&t.gain[lo..hi]).zip(src) {
                    *o += g * v;
                }
            }
        });
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d: Vec<f64> = self.loss.iter().map(|v| -v).collect();
        for t in self.terms.iter().filter(|t| t.offset == 0) {
            d.iter_mut().zip(&t.gain).for_each(|(a, g)| *a += g);
        }
        Some(d)
    }
}

/// Number of steps of size `dt` that reach `t`, which must be a multiple.
pub fn steps_to(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let n = (t / dt).round();
    if n < 0.0 || (n * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::Config(format!("output time {t} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// Integrates the truncated CME and calls `observer` at every output time.
pub fn integrate_dense_with(
    op: &CmeOperator,
    p0: &DenseDistribution,
    output_times: &[f64],
    dt: f64,
    config: &StepperConfig,
    mut observer: impl FnMut(f64, &DenseDistribution) -> Result<()>,
) -> Result<DenseDistribution> {
    let mut p = p0.clone();
    let mut done = 0usize;
    for &t in output_times {
        let target = steps_to(t, dt)?;
        if target < done {
            return Err(Error::Config("output times must be increasing".into()));
        }
        for step in done..target {
            advance(op, p.data_mut(), dt, config)?;
            if p.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { stage: "dense step", path: vec![], step: step + 1 });
            }
        }
        done = target;
        observer(t, &p)?;
    }
    Ok(p)
}

/// Trajectory of the truncated CME at the output times.
pub fn integrate_dense(
    op: &CmeOperator,
    p0: &DenseDistribution,
    output_times: &[f64],
    dt: f64,
    config: &StepperConfig,
) -> Result<Vec<DenseDistribution>> {
    let mut out = Vec::with_capacity(output_times.len());
    integrate_dense_with(op, p0, output_times, dt, config, |_, p| {
        out.push(p.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Best rank-`r` approximation across the cut separating `row_species`
/// from the rest.
pub fn best_rank_approx(dense: &DenseDistribution, row_species: &[usize], r: usize) -> Result<DenseDistribution> {
    let m = dense.matricize(row_species);
    let svd = m.svd(true, true);
    let k = r.min(svd.singular_values.len());
    let u = svd.u.as_ref().unwrap().columns(0, k);
    let vt = svd.v_t.as_ref().unwrap().rows(0, k);
    let s = DMatrix::from_diagonal(&svd.singular_values.rows(0, k).into_owned());
    let approx = u * s * vt;
    DenseDistribution::from_matrix(dense.space(), row_species, &approx)
}

/// Right-hand side of the deterministic Schlögl rate equation.
pub fn schloegl_rate(x: f64) -> f64 {
    let (k0, k1, k2, k3) = (2.5e-4, 0.18, 37.5, 2200.0);
    -k0 * x * x * x + k1 * x * x - k2 * x + k3
}

/// Classical RK4 integration of the Schlögl rate equation; returns
/// `(t, x)` pairs including the initial point.
pub fn schloegl_ode(x0: f64, t_end: f64, dt: f64) -> Vec<(f64, f64)> {
    assert!(dt > 0.0, "dt must be positive");
    let n = (t_end / dt).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut x = x0;
    out.push((0.0, x));
    for i in 1..=n {
        let k1 = schloegl_rate(x);
        let k2 = schloegl_rate(x + 0.5 * dt * k1);
        let k3 = schloegl_rate(x + 0.5 * dt * k2);
        let k4 = schloegl_rate(x + dt * k3);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push((i as f64 * dt, x));
    }
    out
}
