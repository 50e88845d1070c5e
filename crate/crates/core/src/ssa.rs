//! Gillespie's direct method and ensemble statistics.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TruncatedStateSpace;
use crate::model::ReactionNetwork;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Time 0 followed by the event times.
    pub times: Vec<f64>,
    /// State at time 0 and after every event.
    pub states: Vec<Vec<i64>>,
    pub seed: u64,
}

/// Runs the direct method from `x` until `t_end` or until no reaction can
/// fire, calling `before_event(t, x)` just before each firing.
fn direct_method(
    network: &ReactionNetwork,
    x: &mut [i64],
    t_end: f64,
    rng: &mut impl Rng,
    mut before_event: impl FnMut(f64, &[i64]),
) {
    let m = network.n_reactions();
    let mut rates = vec![0.0; m];
    let mut t = 0.0;
    loop {
        let mut total = 0.0;
        for (mu, r) in network.reactions.iter().enumerate() {
            rates[mu] = r.propensity(x);
            total += rates[mu];
        }
        if total <= 0.0 {
            return;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        t += -u.ln() / total;
        if t > t_end {
            return;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = m - 1;
        for (mu, &a) in rates.iter().enumerate() {
            acc += a;
            if target < acc {
                chosen = mu;
                break;
            }
        }
        // Guard against rounding selecting a reaction with zero propensity.
        while rates[chosen] == 0.0 {
            chosen -= 1;
        }
        before_event(t, x);
        for (v, d) in x.iter_mut().zip(&network.reactions[chosen].stoich) {
            *v += d;
        }
    }
}

pub fn simulate_trajectory(network: &ReactionNetwork, x0: &[i64], t_end: f64, seed: u64) -> Trajectory {
    assert_eq!(x0.len(), network.n_species(), "initial state length");
    assert!(x0.iter().all(|&v| v >= 0), "populations must be nonnegative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    // The state before each event equals the state after the previous one.
    let mut states = Vec::new();
    direct_method(network, &mut x, t_end, &mut rng, |t, before| {
        times.push(t);
        states.push(before.to_vec());
    });
    states.push(x);
    Trajectory { times, states, seed }
}

/// Initial condition of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    Fixed(Vec<i64>),
    /// Each run draws its start from an explicit distribution.
    Sampled { states: Vec<Vec<i64>>, probabilities: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    /// `histograms[t][species][value - lower]` counts.
    pub histograms: Vec<Vec<Vec<u64>>>,
    /// Samples outside the truncated range, clipped into the boundary bins.
    pub clipped: Vec<Vec<u64>>,
    pub means: Vec<Vec<f64>>,
    pub standard_errors: Vec<Vec<f64>>,
    pub runs: u64,
    pub space: TruncatedStateSpace,
}

impl EnsembleSummary {
    /// Empirical marginal distributions at output time index `k`.
    pub fn marginals(&self, k: usize) -> Vec<Vec<f64>> {
        self.histograms[k]
            .iter()
            .map(|h| h.iter().map(|&c| c as f64 / self.runs as f64).collect())
            .collect()
    }
}

#[derive(Clone)]
struct Partial {
    counts: Vec<Vec<Vec<u64>>>,
    clipped: Vec<Vec<u64>>,
    sum: Vec<Vec<i128>>,
    sum_sq: Vec<Vec<i128>>,
}

impl Partial {
    fn new(n_times: usize, space: &TruncatedStateSpace) -> Self {
        let d = space.n_species();
        Self {
            counts: vec![(0..d).map(|s| vec![0; space.extent(s)]).collect(); n_times],
            clipped: vec![vec![0; d]; n_times],
            sum: vec![vec![0; d]; n_times],
            sum_sq: vec![vec![0; d]; n_times],
        }
    }

    fn record(&mut self, k: usize, x: &[i64], space: &TruncatedStateSpace) {
        for (s, &v) in x.iter().enumerate() {
            let c = v.clamp(space.lower[s], space.upper[s]);
            if c != v {
                self.clipped[k][s] += 1;
            }
            self.counts[k][s][(c - space.lower[s]) as usize] += 1;
            self.sum[k][s] += v as i128;
            self.sum_sq[k][s] += (v as i128) * (v as i128);
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for k in 0..self.counts.len() {
            for s in 0..self.counts[k].len() {
                self.counts[k][s].iter_mut().zip(&other.counts[k][s]).for_each(|(a, b)| *a += b);
                self.clipped[k][s] += other.clipped[k][s];
                self.sum[k][s] += other.sum[k][s];
                self.sum_sq[k][s] += other.sum_sq[k][s];
            }
        }
        self
    }
}

/// Samples one run at the output times (latest state at or before each).
fn sample_run(
    network: &ReactionNetwork,
    x0: &InitialState,
    output_times: &[f64],
    seed: u64,
    space: &TruncatedStateSpace,
    partial: &mut Partial,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match x0 {
        InitialState::Fixed(x) => x.clone(),
        InitialState::Sampled { states, probabilities } => {
            let dist = WeightedIndex::new(probabilities).expect("valid initial distribution");
            states[dist.sample(&mut rng)].clone()
        }
    };
    let t_end = output_times.last().copied().unwrap_or(0.0);
    let mut k = 0;
    direct_method(network, &mut x, t_end, &mut rng, |t, state| {
        while k < output_times.len() && output_times[k] < t {
            partial.record(k, state, space);
            k += 1;
        }
    });
    while k < output_times.len() {
        partial.record(k, &x, space);
        k += 1;
    }
}

/// Runs `n` independent trajectories with seeds `base_seed + i`.
pub fn run_ensemble(
    network: &ReactionNetwork,
    x0: &InitialState,
    output_times: &[f64],
    n: u64,
    base_seed: u64,
    space: &TruncatedStateSpace,
) -> Result<EnsembleSummary> {
    if n == 0 {
        return Err(Error::Config("ensemble needs at least one run".into()));
    }
    if output_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("output times must be increasing".into()));
    }
    if let InitialState::Sampled { states, probabilities } = x0 {
        if states.len() != probabilities.len() || WeightedIndex::new(probabilities).is_err() {
            return Err(Error::Config("invalid initial distribution".into()));
        }
    }
    let chunk = 256u64;
    let n_chunks = n.div_ceil(chunk);
    let total = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut p = Partial::new(output_times.len(), space);
            for i in c * chunk..((c + 1) * chunk).min(n) {
                sample_run(network, x0, output_times, base_seed.wrapping_add(i), space, &mut p);
            }
            p
        })
        .reduce(|| Partial::new(output_times.len(), space), Partial::merge);
    let nf = n as f64;
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for k in 0..output_times.len() {
        let mut m = Vec::new();
        let mut se = Vec::new();
        for s in 0..space.n_species() {
            let sum = total.sum[k][s] as f64;
            let mean = sum / nf;
            m.push(mean);
            if n > 1 {
                // Exact integer accumulation keeps the variance reproducible.
                let centered = total.sum_sq[k][s] as f64 - sum * sum / nf;
                se.push((centered.max(0.0) / (nf - 1.0) / nf).sqrt());
            } else {
                se.push(0.0);
            }
        }
        means.push(m);
        ses.push(se);
    }
    Ok(EnsembleSummary {
        times: output_times.to_vec(),
        histograms: total.counts,
        clipped: total.clipped,
        means,
        standard_errors: ses,
        runs: n,
        space: space.clone(),
    })
}
