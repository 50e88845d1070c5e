//! Run configuration files and their validation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use ttn_cme::grid::{Boundary, TruncatedStateSpace};
use ttn_cme::model::{builtin_cascade, builtin_lambda_phage, builtin_schloegl, parse_model, ReactionNetwork};
use ttn_cme::presets;
use ttn_cme::psttn::SolverConfig;
use ttn_cme::stepper::{Scheme, StepperConfig};
use ttn_cme::tree::PartitionTree;

use crate::error::{invalid, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Psttn,
    Dense,
    Ssa,
    Ode,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Psttn => "psttn",
            SolverKind::Dense => "dense",
            SolverKind::Ssa => "ssa",
            SolverKind::Ode => "ode",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Schloegl,
    LambdaPhage,
    Cascade,
}

/// Contents of a run configuration file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub t_end: f64,
    pub output_interval: f64,
    pub model: ModelSection,
    pub truncation: Option<TruncationSection>,
    pub initial: InitialSection,
    pub psttn: Option<PsttnSection>,
    pub integrator: Option<IntegratorSection>,
    pub ssa: Option<SsaSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub builtin: Option<Builtin>,
    /// Number of species of the cascade.
    pub species: Option<usize>,
    /// JSON model document, relative to the configuration file.
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub state: Option<Vec<i64>>,
    pub multinomial: Option<Multinomial>,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Multinomial {
    pub trials: i64,
    /// Probability of each species per trial.
    pub p: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsttnSection {
    pub partition: String,
    pub ranks: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsaSection {
    pub runs: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub snapshots: bool,
    /// Output directory of a reference run to compare against.
    pub compare_with: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Fixed(Vec<i64>),
    Multinomial(Multinomial),
}

/// A validated configuration with every reference resolved.
#[derive(Clone, Debug)]
pub struct Plan {
    pub solver: SolverKind,
    pub model_name: String,
    pub network: ReactionNetwork,
    pub space: TruncatedStateSpace,
    pub initial: InitialCondition,
    pub times: Vec<f64>,
    pub tree: Option<PartitionTree>,
    pub integrator: Option<SolverConfig>,
    pub ssa_runs: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub snapshots: bool,
    pub compare_with: Option<PathBuf>,
}

impl Plan {
    pub fn species_names(&self) -> Vec<String> {
        self.network.species.iter().map(|s| s.name.clone()).collect()
    }
}

/// Reads and validates a configuration file; relative paths inside it are
/// resolved against its directory.
pub fn load(path: &Path) -> Result<Plan, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| invalid(path.display(), e.to_string().trim_end()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.resolve(base)
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn resolve(self, base: &Path) -> Result<Plan, CliError> {
        let (model_name, network, default_space) = self.model.resolve(base)?;
        let d = network.n_species();

        let space = match &self.truncation {
            Some(t) => {
                if t.lower.len() != d || t.upper.len() != d {
                    return Err(invalid("truncation", format!("bounds must list {d} species")));
                }
                TruncatedStateSpace::new(t.lower.clone(), t.upper.clone())
                    .map_err(|e| invalid("truncation", e))?
            }
            None => default_space.ok_or_else(|| invalid("truncation", "required for model files"))?,
        };

        let initial = match (&self.initial.state, &self.initial.multinomial) {
            (Some(x), None) => {
                if x.len() != d {
                    return Err(invalid("initial.state", format!("expected {d} populations")));
                }
                if !space.contains(x) {
                    return Err(invalid("initial.state", "outside the truncation"));
                }
                InitialCondition::Fixed(x.clone())
            }
            (None, Some(m)) => {
                if m.trials < 0 || !(m.p >= 0.0) || m.p * d as f64 > 1.0 {
                    return Err(invalid("initial.multinomial", "needs trials >= 0 and species probabilities summing to at most 1"));
                }
                if space.lower.iter().any(|&l| l > 0) || space.upper.iter().any(|&u| u < m.trials) {
                    return Err(invalid("initial.multinomial", "support exceeds the truncation"));
                }
                InitialCondition::Multinomial(*m)
            }
            _ => return Err(invalid("initial", "set exactly one of `state` and `multinomial`")),
        };

        let times = output_times(self.t_end, self.output_interval)?;

        let tree = match (self.solver, &self.psttn) {
            (SolverKind::Psttn, Some(p)) => {
                let tree = PartitionTree::parse(&p.partition, &p.ranks).map_err(|e| invalid("psttn", e))?;
                if tree.n_species() != d {
                    return Err(invalid("psttn.partition", format!("covers {} species, the model has {d}", tree.n_species())));
                }
                Some(tree)
            }
            (SolverKind::Psttn, None) => return Err(invalid("psttn", "required when solver = \"psttn\"")),
            (_, Some(_)) => return Err(invalid("psttn", "only valid when solver = \"psttn\"")),
            (_, None) => None,
        };

        let integrator = match (self.solver, &self.integrator) {
            (SolverKind::Ssa, Some(_)) => return Err(invalid("integrator", "not used by the ssa solver")),
            (SolverKind::Ssa, None) => None,
            (_, None) => return Err(invalid("integrator", format!("required when solver = \"{}\"", self.solver.name()))),
            (_, Some(i)) => Some(i.resolve(&times)?),
        };

        let (ssa_runs, seed) = match (self.solver, &self.ssa) {
            (SolverKind::Ssa, Some(s)) if s.runs == 0 => return Err(invalid("ssa.runs", "must be positive")),
            (SolverKind::Ssa, Some(s)) => (s.runs, s.seed),
            (SolverKind::Ssa, None) => return Err(invalid("ssa", "required when solver = \"ssa\"")),
            (_, Some(_)) => return Err(invalid("ssa", "only valid when solver = \"ssa\"")),
            (_, None) => (0, 0),
        };

        match self.solver {
            SolverKind::Ode if model_name != "schloegl" => {
                return Err(invalid("solver", "the ode solver integrates the deterministic Schloegl model only"))
            }
            SolverKind::Ode if !matches!(initial, InitialCondition::Fixed(_)) => {
                return Err(invalid("initial", "the ode solver needs a fixed `state`"))
            }
            SolverKind::Ssa if self.output.snapshots => {
                return Err(invalid("output.snapshots", "the ssa solver has no distribution to snapshot"))
            }
            _ => {}
        }

        Ok(Plan {
            solver: self.solver,
            model_name,
            network,
            space,
            initial,
            times,
            tree,
            integrator,
            ssa_runs,
            seed,
            out: self.output.dir.map(|p| resolve_path(base, &p)),
            snapshots: self.output.snapshots,
            compare_with: self.output.compare_with.map(|p| resolve_path(base, &p)),
        })
    }
}

impl ModelSection {
    fn resolve(&self, base: &Path) -> Result<(String, ReactionNetwork, Option<TruncatedStateSpace>), CliError> {
        match (self.builtin, &self.file) {
            (Some(b), None) => {
                if self.species.is_some() && b != Builtin::Cascade {
                    return Err(invalid("model.species", "only the cascade takes a species count"));
                }
                Ok(match b {
                    Builtin::Schloegl => ("schloegl".into(), builtin_schloegl(), Some(presets::schloegl_space())),
                    Builtin::LambdaPhage => {
                        ("lambda_phage".into(), builtin_lambda_phage(), Some(presets::lambda_phage_space()))
                    }
                    Builtin::Cascade => {
                        let n = self.species.ok_or_else(|| invalid("model.species", "required for the cascade"))?;
                        if n < 2 {
                            return Err(invalid("model.species", "the cascade needs at least two species"));
                        }
                        (format!("cascade{n}"), builtin_cascade(n), Some(presets::cascade_space(n)))
                    }
                })
            }
            (None, Some(file)) => {
                if self.species.is_some() {
                    return Err(invalid("model.species", "only the cascade takes a species count"));
                }
                let path = resolve_path(base, file);
                let text =
                    std::fs::read_to_string(&path).map_err(|e| invalid("model.file", format!("{}: {e}", path.display())))?;
                let net = parse_model(&text).map_err(|e| invalid("model.file", format!("{}: {e}", path.display())))?;
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, net, None))
            }
            _ => Err(invalid("model", "set exactly one of `builtin` and `file`")),
        }
    }
}

impl IntegratorSection {
    fn resolve(&self, times: &[f64]) -> Result<SolverConfig, CliError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("integrator.dt", "must be positive"));
        }
        if self.substeps == 0 {
            return Err(invalid("integrator.substeps", "must be positive"));
        }
        if let Some(&t) = times.iter().find(|&&t| ttn_cme::dense::steps_to(t, self.dt).is_err()) {
            return Err(invalid("integrator.dt", format!("output time {t} is not a multiple of dt")));
        }
        let mut stepper = StepperConfig::new(self.scheme);
        stepper.substeps = self.substeps;
        Ok(SolverConfig { dt: self.dt, stepper, boundary: self.boundary })
    }
}

/// `0, h, 2h, ..., t_end`.
fn output_times(t_end: f64, interval: f64) -> Result<Vec<f64>, CliError> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(invalid("t_end", "must be finite and nonnegative"));
    }
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(invalid("output_interval", "must be positive"));
    }
    let n = (t_end / interval).round();
    if (n * interval - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(invalid("output_interval", "must divide t_end"));
    }
    Ok((0..=n as usize).map(|k| k as f64 * interval).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Plan, CliError> {
        toml::from_str::<RunConfig>(text).map_err(|e| invalid("config", e)).and_then(|c| c.resolve(Path::new(".")))
    }

    const BASE: &str = r#"
        solver = "psttn"
        t_end = 1.0
        output_interval = 0.5
        model = { builtin = "cascade", species = 2 }
        truncation = { lower = [0, 0], upper = [5, 5] }
        initial = { state = [0, 0] }
        psttn = { partition = "((0)(1))", ranks = [3] }
        integrator = { dt = 0.1, scheme = "explicit_euler" }
    "#;

    #[test]
    fn a_complete_config_resolves() {
        let plan = parse(BASE).unwrap();
        assert_eq!(plan.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(plan.integrator.unwrap().boundary, Boundary::Closed);
        assert_eq!(plan.species_names(), vec!["S0", "S1"]);
    }

    #[test]
    fn errors_name_the_offending_field() {
        let cases = [
            (BASE.replace("ranks = [3]", "ranks = [3, 3]"), "psttn"),
            (BASE.replace("state = [0, 0]", "state = [0, 9]"), "initial.state"),
            (BASE.replace("dt = 0.1", "dt = 0.3"), "integrator.dt"),
            (BASE.replace("solver = \"psttn\"", "solver = \"dense\""), "psttn"),
            (BASE.replace("species = 2", "species = 2, file = \"m.json\""), "model"),
        ];
        for (text, path) in cases {
            match parse(&text) {
                Err(CliError::Invalid { path: p, .. }) => assert_eq!(p, path),
                other => panic!("expected an error at {path}, got {other:?}"),
            }
        }
    }
}
