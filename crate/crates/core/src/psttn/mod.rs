//! Projector-splitting time integration of the CME on a tree tensor network.

pub mod coefficients;
pub mod flows;

use nalgebra::DMatrix;

pub use coefficients::{
    check_identity_ef_gh, compute_ab, environments, internal_ab, leaf_ab, leaf_operators, Coef, CoefficientStore,
    EnvCoefficients, LeafOperator, LeafTerm, NodeCoefficients,
};
pub use flows::{CFlow, KFlow, SFlow};

use crate::dense::steps_to;
use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::linalg::{matricize_qr, qr_positive, Tensor3};
use crate::model::{validate_factorization, FactorAssignment, ReactionNetwork};
use crate::stepper::{advance, LinearFlow, Scheme, StepperConfig};
use crate::ttn::TtnState;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    /// Scheme used for every K, S and C sub-flow.
    pub stepper: StepperConfig,
    pub boundary: Boundary,
}

impl SolverConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        Self { dt, stepper: StepperConfig::new(scheme), boundary: Boundary::default() }
    }
}

pub struct PsTtnIntegrator {
    network: ReactionNetwork,
    assignment: FactorAssignment,
    state: TtnState,
    leaf_ops: Vec<Option<LeafOperator>>,
    store: CoefficientStore,
    config: SolverConfig,
    steps: usize,
}

impl PsTtnIntegrator {
    pub fn new(network: ReactionNetwork, mut state: TtnState, config: SolverConfig) -> Result<Self> {
        if network.n_species() != state.tree().n_species() {
            return Err(Error::Dimension(format!(
                "network has {} species, tree {}",
                network.n_species(),
                state.tree().n_species()
            )));
        }
        if !(config.dt > 0.0) || !config.dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {}", config.dt)));
        }
        let assignment = validate_factorization(&network, state.tree())?;
        state.orthonormalize();
        let leaf_ops = leaf_operators(&network, &assignment, &state, config.boundary)?;
        let store = CoefficientStore::compute(&state, &leaf_ops);
        Ok(Self { network, assignment, state, leaf_ops, store, config, steps: 0 })
    }

    pub fn state(&self) -> &TtnState {
        &self.state
    }

    pub fn into_state(self) -> TtnState {
        self.state
    }

    pub fn network(&self) -> &ReactionNetwork {
        &self.network
    }

    pub fn assignment(&self) -> &FactorAssignment {
        &self.assignment
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Coefficients maintained incrementally during the sweeps.
    pub fn store(&self) -> &CoefficientStore {
        &self.store
    }

    /// Coefficients evaluated from scratch on the current state.
    pub fn recompute_store(&self) -> CoefficientStore {
        CoefficientStore::compute(&self.state, &self.leaf_ops)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.config.dt
    }

    /// One macro step of size `dt`.
    pub fn step(&mut self) -> Result<()> {
        let step = self.steps + 1;
        if self.network.n_reactions() == 0 {
            self.steps = step;
            return Ok(());
        }
        let root = self.state.tree().root();
        let env = EnvCoefficients::root(self.network.n_reactions());
        if self.state.tree().is_leaf(root) {
            let mut k = self.state.leaf_matrix(root).clone();
            let flow = KFlow::new(self.leaf_ops[root].as_ref().unwrap(), &env, k.ncols());
            self.run_flow(&flow, k.as_mut_slice(), "K", root, step)?;
            self.state.set_leaf_matrix(root, k);
        } else {
            let c0 = self.state.tensor(root).clone();
            let c3 = self.integrate_node(root, c0, &env, step)?;
            self.state.set_tensor(root, c3);
        }
        self.steps = step;
        Ok(())
    }

    /// Steps until `t`, which must be a multiple of `dt` not before the
    /// current time.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let target = steps_to(t, self.config.dt)?;
        if target < self.steps {
            return Err(Error::Config(format!("cannot integrate backwards to t = {t}")));
        }
        while self.steps < target {
            self.step()?;
        }
        Ok(())
    }

    /// Advances through increasing output times, calling `observer` at each.
    pub fn run(
        &mut self,
        output_times: &[f64],
        mut observer: impl FnMut(f64, &TtnState) -> Result<()>,
    ) -> Result<()> {
        for &t in output_times {
            self.advance_to(t)?;
            observer(t, &self.state)?;
        }
        Ok(())
    }

    fn run_flow(&self, flow: &impl LinearFlow, y: &mut [f64], stage: &'static str, node: usize, step: usize) -> Result<()> {
        advance(flow, y, self.config.dt, &self.config.stepper)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage, path: self.state.tree().path(node), step });
        }
        Ok(())
    }

    /// Sub-flow of the subtree at `id` starting from the working tensor
    /// `c0`; returns the evolved, non-orthonormal tensor.
    fn integrate_node(&mut self, id: usize, c0: Tensor3, env: &EnvCoefficients, step: usize) -> Result<Tensor3> {
        let [left, right] = self.state.tree().children(id).expect("internal node");

        let (g, s0) = matricize_qr(&c0, 1);
        let env_left = compute_ab(&g, 0, env, self.store.node(right));
        let s = self.update_child(left, s0, &env_left, step)?;
        let s = self.s_step(left, s, &env_left, step)?;
        let c1 = g.mode_mul(1, &s);

        let (g, s0) = matricize_qr(&c1, 2);
        let env_right = compute_ab(&g, 1, env, self.store.node(left));
        let s = self.update_child(right, s0, &env_right, step)?;
        let s = self.s_step(right, s, &env_right, step)?;
        let c2 = g.mode_mul(2, &s);

        let dims = c2.dims();
        let mut data = c2.into_vec();
        let flow = CFlow::new(env, self.store.node(left), self.store.node(right), dims);
        self.run_flow(&flow, &mut data, "C", id, step)?;
        Ok(Tensor3::from_vec(dims, data))
    }

    /// Evolves child `id` with the coupling `s0` absorbed into its basis,
    /// re-orthonormalizes it and returns the new coupling matrix.
    fn update_child(&mut self, id: usize, s0: DMatrix<f64>, env: &EnvCoefficients, step: usize) -> Result<DMatrix<f64>> {
        if self.state.tree().is_leaf(id) {
            let mut k = self.state.leaf_matrix(id) * s0;
            let op = self.leaf_ops[id].as_ref().unwrap();
            let flow = KFlow::new(op, env, k.ncols());
            self.run_flow(&flow, k.as_mut_slice(), "K", id, step)?;
            let (u, r) = qr_positive(k);
            self.store.nodes[id] = Some(leaf_ab(&u, op));
            self.state.set_leaf_matrix(id, u);
            Ok(r)
        } else {
            let c0 = self.state.tensor(id).apply_mode(0, &s0);
            let c3 = self.integrate_node(id, c0, env, step)?;
            let (g, s) = matricize_qr(&c3, 0);
            let [l, r] = self.state.tree().children(id).unwrap();
            self.store.nodes[id] = Some(internal_ab(&g, self.store.node(l), self.store.node(r)));
            self.state.set_tensor(id, g);
            Ok(s.transpose())
        }
    }

    /// Backward coupling flow for child `id`.
    fn s_step(&self, id: usize, s: DMatrix<f64>, env: &EnvCoefficients, step: usize) -> Result<DMatrix<f64>> {
        let (rows, cols) = s.shape();
        let mut data = s.as_slice().to_vec();
        let flow = SFlow::new(self.store.node(id), env);
        self.run_flow(&flow, &mut data, "S", id, step)?;
        Ok(DMatrix::from_vec(rows, cols, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{integrate_dense, CmeOperator, DenseDistribution};
    use crate::grid::TruncatedStateSpace;
    use crate::model::{builtin_cascade, PropensityFactor, Reaction};
    use crate::tree::PartitionTree;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(dt: f64, scheme: Scheme) -> SolverConfig {
        SolverConfig::new(dt, scheme)
    }

    #[test]
    fn no_reactions_leave_the_state_untouched() {
        let net = ReactionNetwork::new(vec!["A".into(), "B".into()], vec![]).unwrap();
        let tree = PartitionTree::parse("((0)(1))", &[2]).unwrap();
        let space = TruncatedStateSpace::uniform(2, 4);
        let state = TtnState::random(&tree, &space, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut integ = PsTtnIntegrator::new(net, state, config(0.1, Scheme::ExplicitEuler)).unwrap();
        let state = integ.state().clone();
        integ.advance_to(1.0).unwrap();
        assert_eq!(integ.state(), &state);
    }

    #[test]
    fn single_leaf_tree_is_the_dense_solver() {
        let net = builtin_cascade(2);
        let tree = PartitionTree::parse("((0 1))", &[]).unwrap();
        let space = TruncatedStateSpace::uniform(2, 5);
        let p0 = DenseDistribution::delta(&space, &[0, 0]).unwrap();
        let state = TtnState::from_dense(&p0, &tree).unwrap();
        let mut integ = PsTtnIntegrator::new(net.clone(), state, config(0.05, Scheme::Rk4)).unwrap();
        integ.advance_to(0.5).unwrap();
        let op = CmeOperator::new(&net, &space).unwrap();
        let dense = integrate_dense(&op, &p0, &[0.5], 0.05, &StepperConfig::new(Scheme::Rk4)).unwrap();
        let got = integ.state().eval_full().unwrap();
        assert!(got.distance(&dense[0]).unwrap() < 1e-13);
    }

    #[test]
    fn incremental_coefficients_match_recomputation() {
        let net = builtin_cascade(4);
        let tree = PartitionTree::parse("((0 1)((2)(3)))", &[3, 2]).unwrap();
        let space = TruncatedStateSpace::uniform(4, 5);
        let p0 = DenseDistribution::delta(&space, &[0, 0, 0, 0]).unwrap();
        let state = TtnState::from_dense(&p0, &tree).unwrap();
        let mut integ = PsTtnIntegrator::new(net, state, config(0.01, Scheme::ImplicitEuler)).unwrap();
        for _ in 0..5 {
            integ.step().unwrap();
        }
        assert!(integ.store().max_abs_diff(&integ.recompute_store()) < 1e-12);
        assert!((integ.state().mass() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn blow_up_is_reported_with_its_location() {
        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![Reaction { stoich: vec![1, 0], constant: 1e150, factors: vec![PropensityFactor::poly(1, &[1.0, 1e150])] }],
        )
        .unwrap();
        let tree = PartitionTree::parse("((0)(1))", &[1]).unwrap();
        let space = TruncatedStateSpace::uniform(2, 3);
        let p0 = DenseDistribution::from_fn(&space, |_| 1.0).unwrap();
        let state = TtnState::from_dense(&p0, &tree).unwrap();
        let mut integ = PsTtnIntegrator::new(net, state, config(1.0, Scheme::ExplicitEuler)).unwrap();
        match integ.step() {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }
}
