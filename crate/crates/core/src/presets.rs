//! Partitions, truncations and initial conditions of the builtin studies.

use crate::dense::DenseDistribution;
use crate::error::Result;
use crate::grid::TruncatedStateSpace;

/// Lambda phage partition with the two regulatory pairs split at the root.
pub const LAMBDA_P0: &str = "((0 1)((2 3)(4)))";
pub const LAMBDA_P1: &str = "(((0 1)(2 3))(4))";
pub const LAMBDA_P2: &str = "(((0 1)(2))(3 4))";

pub fn lambda_phage_space() -> TruncatedStateSpace {
    TruncatedStateSpace::new(vec![0; 5], vec![15, 40, 10, 10, 10]).expect("valid bounds")
}

pub fn schloegl_space() -> TruncatedStateSpace {
    TruncatedStateSpace::uniform(1, 799)
}

pub fn cascade_space(n: usize) -> TruncatedStateSpace {
    TruncatedStateSpace::uniform(n, 63)
}

/// Multinomial initial condition with `trials` trials and per-species
/// probability `p` (the remaining probability going to "no molecule"):
/// returns the support states and their probabilities.
pub fn multinomial_states(n_species: usize, trials: i64, p: f64) -> (Vec<Vec<i64>>, Vec<f64>) {
    let rest = 1.0 - n_species as f64 * p;
    assert!(rest >= 0.0, "probabilities exceed one");
    let fact = |k: i64| (1..=k).map(|v| v as f64).product::<f64>();
    let mut states = Vec::new();
    let mut probs = Vec::new();
    let mut x = vec![0i64; n_species];
    loop {
        let total: i64 = x.iter().sum();
        if total <= trials {
            let coeff = fact(trials) / (x.iter().map(|&v| fact(v)).product::<f64>() * fact(trials - total));
            states.push(x.clone());
            probs.push(coeff * p.powi(total as i32) * rest.powi((trials - total) as i32));
        }
        // Odometer over 0..=trials per species.
        let mut s = 0;
        loop {
            if s == n_species {
                return (states, probs);
            }
            x[s] += 1;
            if x[s] <= trials {
                break;
            }
            x[s] = 0;
            s += 1;
        }
    }
}

/// Lambda phage initial distribution: multinomial with 3 trials and
/// probability 0.05 per species.
pub fn lambda_phage_initial() -> Result<DenseDistribution> {
    let space = lambda_phage_space();
    let (states, probs) = multinomial_states(5, 3, 0.05);
    let mut p = DenseDistribution::zeros(&space)?;
    let grid = space.full_grid();
    for (x, w) in states.iter().zip(&probs) {
        let i = grid.linear_index(x)?;
        p.data_mut()[i] = *w;
    }
    Ok(p)
}

/// Right comb over consecutive species pairs, e.g.
/// `((0 1)((2 3)(4 5)))` for six species.
pub fn cascade_tt_partition(n: usize) -> String {
    assert!(n >= 4 && n % 2 == 0, "pairing needs an even number of at least four species");
    let pair = |k: usize| format!("({} {})", 2 * k, 2 * k + 1);
    let pairs = n / 2;
    let mut s = format!("({}{})", pair(pairs - 2), pair(pairs - 1));
    for k in (0..pairs - 2).rev() {
        s = format!("({}{})", pair(k), s);
    }
    s
}

/// Balanced pairing of the 20-species cascade.
pub const CASCADE_BT: &str =
    "(((((0 1)(2 3))(4 5))((6 7)(8 9)))(((10 11)(12 13))((14 15)((16 17)(18 19)))))";
