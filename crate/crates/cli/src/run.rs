//! Executes a validated plan and writes its output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use ttn_cme::dense::{integrate_dense_with, schloegl_ode, steps_to, CmeOperator, DenseDistribution};
use ttn_cme::grid::LeafGrid;
use ttn_cme::presets::multinomial_states;
use ttn_cme::psttn::PsTtnIntegrator;
use ttn_cme::ssa::{run_ensemble, EnsembleSummary, InitialState};
use ttn_cme::tree::PartitionTree;
use ttn_cme::ttn::{memory_footprint, TtnState};

use crate::config::{InitialCondition, Plan, SolverKind};
use crate::error::{invalid, io_error, CliError};
use crate::output::{self, join, num, Observation};

/// What a finished run reports besides its files.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub wall_seconds: f64,
    pub final_mass: f64,
    pub max_mass_error: f64,
    pub footprint: Vec<(&'static str, u128, u128)>,
}

pub fn footprint(plan: &Plan) -> Vec<(&'static str, u128, u128)> {
    let ttn = plan.tree.as_ref().map(|t| memory_footprint(t, &plan.space));
    output::footprint_rows(ttn, plan.space.size())
}

pub fn run(plan: &Plan, out: &Path) -> Result<RunReport, CliError> {
    fs::create_dir_all(out).map_err(io_error(out))?;
    let snapshots = plan.snapshots.then(|| out.join(output::SNAPSHOTS));
    if let Some(dir) = &snapshots {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    let start = Instant::now();
    let observations = match plan.solver {
        SolverKind::Psttn => run_psttn(plan, snapshots.as_deref())?,
        SolverKind::Dense => run_dense(plan, snapshots.as_deref())?,
        SolverKind::Ssa => run_ssa(plan, out)?,
        SolverKind::Ode => run_ode(plan)?,
    };
    let wall_seconds = start.elapsed().as_secs_f64();

    let names = plan.species_names();
    output::write_observations(out, &names, &plan.space.lower, &observations)?;
    // Sampling and the rate equation store no distribution.
    let rows = match plan.solver {
        SolverKind::Psttn | SolverKind::Dense => footprint(plan),
        SolverKind::Ssa | SolverKind::Ode => Vec::new(),
    };
    if !rows.is_empty() {
        output::write_footprint(&out.join(output::FOOTPRINT), &rows)?;
    }
    let final_mass = observations.last().map_or(1.0, |o| o.mass);
    let max_mass_error = observations.iter().map(|o| (o.mass - 1.0).abs()).fold(0.0, f64::max);
    let mut summary = vec![
        ("solver", plan.solver.name().to_string()),
        ("model", plan.model_name.clone()),
        ("species", join(&names)),
        ("lower", join(&plan.space.lower)),
        ("upper", join(&plan.space.upper)),
        ("output_times", plan.times.len().to_string()),
        ("final_mass", num(final_mass)),
        ("max_mass_error", num(max_mass_error)),
    ];
    if let Some(tree) = &plan.tree {
        summary.push(("partition", tree.to_string()));
        summary.push(("ranks", join(&tree.ranks())));
    }
    if plan.solver == SolverKind::Ssa {
        summary.push(("runs", plan.ssa_runs.to_string()));
        summary.push(("seed", plan.seed.to_string()));
    }
    output::write_key_values(&out.join(output::SUMMARY), &summary)?;
    // Wall time varies between identical runs, so it stays out of the CSVs.
    let timing = out.join("timing.txt");
    fs::write(&timing, format!("wall_time_seconds = {wall_seconds}\n")).map_err(io_error(&timing))?;

    Ok(RunReport { wall_seconds, final_mass, max_mass_error, footprint: rows })
}

fn write_snapshot(dir: Option<&Path>, k: usize, state: &TtnState) -> ttn_cme::Result<()> {
    if let Some(dir) = dir {
        let mut w = BufWriter::new(File::create(dir.join(output::snapshot_name(k)))?);
        state.write_snapshot(&mut w)?;
    }
    Ok(())
}

fn multinomial_dense(plan: &Plan, trials: i64, p: f64) -> Result<DenseDistribution, CliError> {
    let (states, probs) = multinomial_states(plan.space.n_species(), trials, p);
    let mut dense = DenseDistribution::zeros(&plan.space)?;
    let grid = plan.space.full_grid();
    for (x, w) in states.iter().zip(&probs) {
        let i = grid.linear_index(x)?;
        dense.data_mut()[i] = *w;
    }
    Ok(dense)
}

fn initial_dense(plan: &Plan) -> Result<DenseDistribution, CliError> {
    match &plan.initial {
        InitialCondition::Fixed(x) => Ok(DenseDistribution::delta(&plan.space, x)?),
        InitialCondition::Multinomial(m) => multinomial_dense(plan, m.trials, m.p),
    }
}

/// Point masses stay in product form, so they work on any state space.
fn initial_ttn(plan: &Plan, tree: &PartitionTree) -> Result<TtnState, CliError> {
    match &plan.initial {
        InitialCondition::Fixed(x) => {
            let mut deltas = Vec::new();
            for leaf in tree.leaves() {
                let species = tree.leaf_species(leaf).to_vec();
                let local: Vec<i64> = species.iter().map(|&s| x[s]).collect();
                let grid = LeafGrid::new(&plan.space, species);
                let mut v = vec![0.0; grid.size()];
                v[grid.linear_index(&local)?] = 1.0;
                deltas.push(v);
            }
            Ok(TtnState::from_product(tree, &plan.space, &deltas)?)
        }
        InitialCondition::Multinomial(_) => Ok(TtnState::from_dense(&initial_dense(plan)?, tree)?),
    }
}

fn observe_ttn(t: f64, s: &TtnState) -> Observation {
    let d = s.space().n_species();
    Observation {
        time: t,
        mass: s.mass(),
        moments: (0..d).map(|i| s.mean_std(i)).collect(),
        marginals: Some(s.marginals()),
    }
}

fn run_psttn(plan: &Plan, snapshots: Option<&Path>) -> Result<Vec<Observation>, CliError> {
    let tree = plan.tree.as_ref().expect("validated psttn plan");
    let config = plan.integrator.expect("validated psttn plan");
    let mut integ = PsTtnIntegrator::new(plan.network.clone(), initial_ttn(plan, tree)?, config)?;
    let mut observations = Vec::with_capacity(plan.times.len());
    integ.run(&plan.times, |t, s| {
        write_snapshot(snapshots, observations.len(), s)?;
        observations.push(observe_ttn(t, s));
        Ok(())
    })?;
    Ok(observations)
}

/// Dense snapshots are stored as a single-leaf network over all species.
fn whole_space_tree(d: usize) -> PartitionTree {
    let species = (0..d).map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
    PartitionTree::parse(&format!("(({species}))"), &[]).expect("single leaf tree")
}

fn run_dense(plan: &Plan, snapshots: Option<&Path>) -> Result<Vec<Observation>, CliError> {
    let config = plan.integrator.expect("validated dense plan");
    let op = CmeOperator::with_boundary(&plan.network, &plan.space, config.boundary)?;
    let p0 = initial_dense(plan)?;
    let tree = whole_space_tree(plan.space.n_species());
    let d = plan.space.n_species();
    let mut observations = Vec::with_capacity(plan.times.len());
    integrate_dense_with(&op, &p0, &plan.times, config.dt, &config.stepper, |t, p| {
        if snapshots.is_some() {
            write_snapshot(snapshots, observations.len(), &TtnState::from_dense(p, &tree)?)?;
        }
        observations.push(Observation {
            time: t,
            mass: p.sum(),
            moments: (0..d).map(|i| p.mean_std(i)).collect(),
            marginals: Some(p.marginals()),
        });
        Ok(())
    })?;
    Ok(observations)
}

fn run_ssa(plan: &Plan, out: &Path) -> Result<Vec<Observation>, CliError> {
    let x0 = match &plan.initial {
        InitialCondition::Fixed(x) => InitialState::Fixed(x.clone()),
        InitialCondition::Multinomial(m) => {
            let (states, probabilities) = multinomial_states(plan.space.n_species(), m.trials, m.p);
            InitialState::Sampled { states, probabilities }
        }
    };
    let summary = run_ensemble(&plan.network, &x0, &plan.times, plan.ssa_runs, plan.seed, &plan.space)?;
    write_ssa_tables(plan, &summary, out)?;
    let sqrt_n = (summary.runs as f64).sqrt();
    Ok((0..plan.times.len())
        .map(|k| Observation {
            time: plan.times[k],
            mass: 1.0,
            moments: summary.means[k].iter().zip(&summary.standard_errors[k]).map(|(&m, &se)| (m, se * sqrt_n)).collect(),
            marginals: Some(summary.marginals(k)),
        })
        .collect())
}

/// Per-time histograms and the mean / standard-error table.
fn write_ssa_tables(plan: &Plan, summary: &EnsembleSummary, out: &Path) -> Result<(), CliError> {
    let names = plan.species_names();
    let path = out.join("ssa_summary.csv");
    let mut w = output::writer(&path)?;
    let mut header = vec!["time".to_string()];
    for n in &names {
        header.extend([format!("mean_{n}"), format!("se_{n}"), format!("clipped_{n}")]);
    }
    w.write_record(&header)?;
    for k in 0..plan.times.len() {
        let mut row = vec![num(plan.times[k])];
        for s in 0..names.len() {
            row.extend([
                num(summary.means[k][s]),
                num(summary.standard_errors[k][s]),
                summary.clipped[k][s].to_string(),
            ]);
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_error(&path))?;

    let dir = out.join("histograms");
    fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    for (k, hist) in summary.histograms.iter().enumerate() {
        let path = dir.join(format!("t{k:05}.csv"));
        let mut w = output::writer(&path)?;
        let mut header = Vec::new();
        for n in &names {
            header.extend([format!("value_{n}"), format!("count_{n}")]);
        }
        w.write_record(&header)?;
        let rows = hist.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..rows {
            let mut row = Vec::new();
            for (s, h) in hist.iter().enumerate() {
                match h.get(i) {
                    Some(c) => row.extend([(plan.space.lower[s] + i as i64).to_string(), c.to_string()]),
                    None => row.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(io_error(&path))?;
    }
    Ok(())
}

/// Deterministic Schloegl trajectory sampled at the output times.
fn run_ode(plan: &Plan) -> Result<Vec<Observation>, CliError> {
    let config = plan.integrator.expect("validated ode plan");
    let InitialCondition::Fixed(x0) = &plan.initial else {
        return Err(invalid("initial", "the ode solver needs a fixed `state`"));
    };
    let t_end = plan.times.last().copied().unwrap_or(0.0);
    let trajectory = schloegl_ode(x0[0] as f64, t_end, config.dt);
    plan.times
        .iter()
        .map(|&t| {
            let (_, x) = trajectory[steps_to(t, config.dt)?];
            if !x.is_finite() {
                return Err(ttn_cme::Error::NonFinite { stage: "ode", path: vec![], step: steps_to(t, config.dt)? }.into());
            }
            Ok(Observation { time: t, mass: 1.0, moments: vec![(x, 0.0)], marginals: None })
        })
        .collect()
}
