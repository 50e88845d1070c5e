use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ttn_cme::dense::{CmeOperator, DenseDistribution};
use ttn_cme::grid::{LeafGrid, TruncatedStateSpace};
use ttn_cme::model::{parse_model, serialize_model, PropensityFactor, Reaction, ReactionNetwork};
use ttn_cme::ssa::{run_ensemble, simulate_trajectory, InitialState};
use ttn_cme::stepper::{advance, Scheme, StepperConfig};
use ttn_cme::tree::PartitionTree;
use ttn_cme::ttn::TtnState;

/// Random network on three species with single-species factors.
fn network() -> impl Strategy<Value = ReactionNetwork> {
    let reaction = (
        prop::collection::vec(-1i64..=1, 3),
        0.05f64..2.0,
        prop::option::of((0usize..3, prop::collection::vec(0.0f64..1.0, 1..3))),
    );
    prop::collection::vec(reaction, 1..6).prop_map(|rs| {
        let reactions = rs
            .into_iter()
            .map(|(stoich, constant, factor)| Reaction {
                stoich,
                constant,
                factors: factor.map(|(s, c)| vec![PropensityFactor::poly(s, &c)]).unwrap_or_default(),
            })
            .collect();
        ReactionNetwork::new(vec!["A".into(), "B".into(), "C".into()], reactions).unwrap()
    })
}

fn space() -> TruncatedStateSpace {
    TruncatedStateSpace::new(vec![0, 1, 0], vec![3, 3, 2]).unwrap()
}

fn distribution(seed: u64) -> DenseDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = DenseDistribution::from_fn(&space(), |_| rand::Rng::random_range(&mut rng, 0.0..1.0)).unwrap();
    let total = p.sum();
    DenseDistribution::from_vec(&space(), p.data().iter().map(|v| v / total).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_documents_round_trip(net in network()) {
        let text = serialize_model(&net);
        prop_assert_eq!(parse_model(&text).unwrap(), net);
    }

    #[test]
    fn grid_indices_round_trip(species in prop::sample::subsequence(vec![0usize, 1, 2], 1..=3), seed in 0u64..1000) {
        let space = space();
        let grid = LeafGrid::new(&space, species);
        let i = (seed as usize) % grid.size();
        let x = grid.inverse_index(i);
        prop_assert_eq!(grid.linear_index(&x).unwrap(), i);
    }

    #[test]
    fn closed_operator_conserves_mass(net in network(), seed in 0u64..1000) {
        let op = CmeOperator::new(&net, &space()).unwrap();
        let p = distribution(seed);
        prop_assert!(op.apply_operator(&p).sum().abs() < 1e-12);
        let mut y = p.data().to_vec();
        advance(&op, &mut y, 0.05, &StepperConfig::new(Scheme::Rk4)).unwrap();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_ttn_is_exact(seed in 0u64..1000) {
        let p = distribution(seed);
        let tree = PartitionTree::parse("((0)((1)(2)))", &[4, 3]).unwrap();
        let ttn = TtnState::from_dense(&p, &tree).unwrap();
        prop_assert!(ttn.eval_full().unwrap().distance(&p).unwrap() < 1e-12);
        prop_assert!((ttn.mass() - 1.0).abs() < 1e-12);
        for s in 0..3 {
            let (a, b) = (ttn.marginal(s), p.marginal(s));
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn snapshots_round_trip(seed in 0u64..1000) {
        let tree = PartitionTree::parse("((0 1)(2))", &[2]).unwrap();
        let ttn = TtnState::random(&tree, &space(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut bytes = Vec::new();
        ttn.write_snapshot(&mut bytes).unwrap();
        prop_assert_eq!(TtnState::read_snapshot(&mut bytes.as_slice()).unwrap(), ttn);
    }

    #[test]
    fn trajectories_are_reproducible(net in network(), seed in 0u64..1000) {
        let a = simulate_trajectory(&net, &[2, 1, 0], 3.0, seed);
        prop_assert_eq!(&a, &simulate_trajectory(&net, &[2, 1, 0], 3.0, seed));
        prop_assert!(a.times.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn ensembles_are_reproducible() {
    let net = ttn_cme::model::builtin_cascade(3);
    let space = TruncatedStateSpace::uniform(3, 20);
    let x0 = InitialState::Fixed(vec![0, 0, 0]);
    let a = run_ensemble(&net, &x0, &[1.0, 5.0], 600, 3, &space).unwrap();
    let b = run_ensemble(&net, &x0, &[1.0, 5.0], 600, 3, &space).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.histograms[1][0].iter().sum::<u64>(), 600);
}
