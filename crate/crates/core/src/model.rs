//! Reaction networks with factorized propensities.
//!
//! A propensity is a nonnegative rate constant times a product of
//! [`PropensityFactor`]s. Each factor depends on a set of species, and no
//! species appears in more than one factor of the same reaction. This makes
//! it possible to check statically whether a partition tree splits any factor
//! (see [`validate_factorization`]), which the tree integrator relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::PartitionTree;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Species {
    pub index: usize,
    pub name: String,
}

/// The closed set of factor shapes. The argument `x` is the sum of the
/// population counts of the factor's dependent species.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorForm {
    /// `params[0] + params[1] x + params[2] x^2 + ...`
    Poly,
    /// Michaelis-Menten style inhibition `a b / (b + x)` with `params = [a, b]`.
    Mm,
    /// Saturating activation `a b x / (b x + 1)` with `params = [a, b]`.
    Hill,
    /// `params[0]`, independent of the population.
    Const,
}

impl FactorForm {
    fn check_params(self, params: &[f64]) -> std::result::Result<(), String> {
        let ok = match self {
            FactorForm::Poly => !params.is_empty(),
            FactorForm::Mm | FactorForm::Hill => params.len() == 2,
            FactorForm::Const => params.len() == 1,
        };
        if !ok {
            return Err(format!("wrong number of parameters for form {self:?}: {}", params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err("non-finite factor parameter".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropensityFactor {
    pub species: Vec<usize>,
    pub form: FactorForm,
    pub params: Vec<f64>,
}

impl PropensityFactor {
    pub fn new(species: Vec<usize>, form: FactorForm, params: Vec<f64>) -> Self {
        Self { species, form, params }
    }

    pub fn poly(species: usize, coefficients: &[f64]) -> Self {
        Self::new(vec![species], FactorForm::Poly, coefficients.to_vec())
    }

    pub fn mm(species: usize, a: f64, b: f64) -> Self {
        Self::new(vec![species], FactorForm::Mm, vec![a, b])
    }

    pub fn hill(species: usize, a: f64, b: f64) -> Self {
        Self::new(vec![species], FactorForm::Hill, vec![a, b])
    }

    /// Evaluates the factor shape at the aggregated argument.
    pub fn eval_arg(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.form {
            FactorForm::Poly => p.iter().rev().fold(0.0, |acc, &c| acc * x + c),
            FactorForm::Mm => p[0] * p[1] / (p[1] + x),
            FactorForm::Hill => p[0] * p[1] * x / (p[1] * x + 1.0),
            FactorForm::Const => p[0],
        }
    }

    /// Evaluates the factor on a full population vector.
    pub fn eval(&self, x: &[i64]) -> f64 {
        let arg: i64 = self.species.iter().map(|&s| x[s]).sum();
        self.eval_arg(arg as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reaction {
    /// Change in population per species when the reaction fires.
    pub stoich: Vec<i64>,
    pub constant: f64,
    pub factors: Vec<PropensityFactor>,
}

impl Reaction {
    pub fn propensity(&self, x: &[i64]) -> f64 {
        self.factors
            .iter()
            .fold(self.constant, |acc, f| acc * f.eval(x))
    }

    /// Species whose counts the propensity depends on.
    pub fn dependencies(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors.iter().flat_map(|f| f.species.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReactionNetwork {
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
}

impl ReactionNetwork {
    /// Builds and validates a network.
    pub fn new(names: Vec<String>, reactions: Vec<Reaction>) -> Result<Self> {
        let species = names
            .into_iter()
            .enumerate()
            .map(|(index, name)| Species { index, name })
            .collect();
        let net = Self { species, reactions };
        net.validate()?;
        Ok(net)
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    /// `α_μ(x)`; fails if `mu` is out of range or `x` has the wrong length.
    pub fn propensity(&self, mu: usize, x: &[i64]) -> Result<f64> {
        let reaction = self.reactions.get(mu).ok_or_else(|| {
            Error::OutOfBounds(format!(
                "reaction {mu} (network has {} reactions)",
                self.reactions.len()
            ))
        })?;
        if x.len() != self.n_species() {
            return Err(Error::Dimension(format!(
                "population vector of length {} for {} species",
                x.len(),
                self.n_species()
            )));
        }
        Ok(reaction.propensity(x))
    }

    fn validate(&self) -> Result<()> {
        let d = self.n_species();
        if d == 0 {
            return Err(Error::InvalidModel("no species declared".into()));
        }
        for (mu, r) in self.reactions.iter().enumerate() {
            if r.stoich.len() != d {
                return Err(Error::InvalidModel(format!(
                    "reaction {mu}: stoichiometry has length {} but there are {d} species",
                    r.stoich.len()
                )));
            }
            if !(r.constant >= 0.0) || !r.constant.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "reaction {mu}: negative or non-finite rate constant {}",
                    r.constant
                )));
            }
            let mut seen = vec![false; d];
            for (k, f) in r.factors.iter().enumerate() {
                f.form
                    .check_params(&f.params)
                    .map_err(|m| Error::InvalidModel(format!("reaction {mu}, factor {k}: {m}")))?;
                if f.species.is_empty() && f.form != FactorForm::Const {
                    return Err(Error::InvalidModel(format!(
                        "reaction {mu}, factor {k}: non-constant factor without species"
                    )));
                }
                for &s in &f.species {
                    if s >= d {
                        return Err(Error::InvalidModel(format!(
                            "reaction {mu}, factor {k}: species {s} is not declared ({d} species)"
                        )));
                    }
                    if seen[s] {
                        return Err(Error::InvalidModel(format!(
                            "reaction {mu}: species {s} appears in more than one factor"
                        )));
                    }
                    seen[s] = true;
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    species: Vec<String>,
    reactions: Vec<ReactionDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionDoc {
    stoich: Vec<i64>,
    constant: f64,
    factors: Vec<FactorDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorDoc {
    species: Vec<usize>,
    form: FactorForm,
    params: Vec<f64>,
}

/// Parses a JSON model document.
pub fn parse_model(text: &str) -> Result<ReactionNetwork> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let reactions = doc
        .reactions
        .into_iter()
        .map(|r| Reaction {
            stoich: r.stoich,
            constant: r.constant,
            factors: r
                .factors
                .into_iter()
                .map(|f| PropensityFactor::new(f.species, f.form, f.params))
                .collect(),
        })
        .collect();
    ReactionNetwork::new(doc.species, reactions)
}

pub fn serialize_model(network: &ReactionNetwork) -> String {
    let doc = ModelDoc {
        species: network.species.iter().map(|s| s.name.clone()).collect(),
        reactions: network
            .reactions
            .iter()
            .map(|r| ReactionDoc {
                stoich: r.stoich.clone(),
                constant: r.constant,
                factors: r
                    .factors
                    .iter()
                    .map(|f| FactorDoc {
                        species: f.species.clone(),
                        form: f.form,
                        params: f.params.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

fn unit(d: usize, i: usize, v: i64) -> Vec<i64> {
    let mut s = vec![0; d];
    s[i] = v;
    s
}

/// Schlögl's bistable one-species model with `k = (2.5e-4, 0.18, 37.5, 2200)`.
pub fn builtin_schloegl() -> ReactionNetwork {
    let reactions = vec![
        // 3S -> 2S, k0 x(x-1)(x-2)
        Reaction {
            stoich: vec![-1],
            constant: 2.5e-4,
            factors: vec![PropensityFactor::poly(0, &[0.0, 2.0, -3.0, 1.0])],
        },
        // 2S -> 3S, k1 x(x-1)
        Reaction {
            stoich: vec![1],
            constant: 0.18,
            factors: vec![PropensityFactor::poly(0, &[0.0, -1.0, 1.0])],
        },
        // S -> *, k2 x
        Reaction {
            stoich: vec![-1],
            constant: 37.5,
            factors: vec![PropensityFactor::poly(0, &[0.0, 1.0])],
        },
        // * -> S, k3
        Reaction {
            stoich: vec![1],
            constant: 2200.0,
            factors: vec![],
        },
    ];
    ReactionNetwork::new(vec!["S".into()], reactions).expect("builtin model is valid")
}

/// Lambda phage toggle switch: five species, ten reactions.
pub fn builtin_lambda_phage() -> ReactionNetwork {
    let a = [0.5, 1.0, 0.15, 0.3, 0.3];
    let b = [0.12, 0.6, 1.0, 1.0, 1.0];
    let c = [0.0025, 0.0007, 0.0231, 0.01, 0.01];
    let d = 5;
    let mut reactions = vec![
        Reaction {
            stoich: unit(d, 0, 1),
            constant: a[0],
            factors: vec![PropensityFactor::mm(1, 1.0, b[0])],
        },
        Reaction {
            stoich: unit(d, 1, 1),
            constant: 1.0,
            factors: vec![
                PropensityFactor::mm(0, 1.0, b[1]),
                PropensityFactor::poly(4, &[a[1], 1.0]),
            ],
        },
        Reaction {
            stoich: unit(d, 2, 1),
            constant: a[2],
            factors: vec![PropensityFactor::hill(1, 1.0, b[2])],
        },
        Reaction {
            stoich: unit(d, 3, 1),
            constant: a[3],
            factors: vec![PropensityFactor::hill(2, 1.0, b[3])],
        },
        Reaction {
            stoich: unit(d, 4, 1),
            constant: a[4],
            factors: vec![PropensityFactor::hill(2, 1.0, b[4])],
        },
    ];
    for (i, &ci) in c.iter().enumerate() {
        reactions.push(Reaction {
            stoich: unit(d, i, -1),
            constant: ci,
            factors: vec![PropensityFactor::poly(i, &[0.0, 1.0])],
        });
    }
    let names = (0..d).map(|i| format!("S{i}")).collect();
    ReactionNetwork::new(names, reactions).expect("builtin model is valid")
}

/// Reaction cascade with `n` species: constant production of `S0`,
/// production of `S_i` at rate `x_{i-1} / (b + x_{i-1})`, and linear decay
/// `c x_j`. Parameters `a = 0.7`, `b = 5`, `c = 0.07`.
pub fn builtin_cascade(n: usize) -> ReactionNetwork {
    assert!(n >= 2, "cascade needs at least two species");
    let (a, b, c) = (0.7, 5.0, 0.07);
    let mut reactions = vec![Reaction {
        stoich: unit(n, 0, 1),
        constant: a,
        factors: vec![],
    }];
    for i in 1..n {
        // x / (b + x) == 1 * (1/b) x / ((1/b) x + 1)
        reactions.push(Reaction {
            stoich: unit(n, i, 1),
            constant: 1.0,
            factors: vec![PropensityFactor::hill(i - 1, 1.0, 1.0 / b)],
        });
    }
    for j in 0..n {
        reactions.push(Reaction {
            stoich: unit(n, j, -1),
            constant: c,
            factors: vec![PropensityFactor::poly(j, &[0.0, 1.0])],
        });
    }
    let names = (0..n).map(|i| format!("S{i}")).collect();
    ReactionNetwork::new(names, reactions).expect("builtin model is valid")
}

/// Per-reaction placement of propensity factors onto the leaves of a
/// partition tree. Leaves are numbered in tree order; the rate constant of
/// every reaction lives on leaf 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorAssignment {
    /// `placement[mu][leaf]` lists the factor indices of reaction `mu`
    /// assigned to `leaf`.
    pub placement: Vec<Vec<Vec<usize>>>,
}

impl FactorAssignment {
    pub const DESIGNATED_LEAF: usize = 0;

    pub fn n_leaves(&self) -> usize {
        self.placement.first().map_or(0, Vec::len)
    }

    /// Product of the factors of `mu` placed on `leaf`, evaluated on a full
    /// population vector, including the constant on the designated leaf.
    pub fn leaf_value(&self, network: &ReactionNetwork, mu: usize, leaf: usize, x: &[i64]) -> f64 {
        let r = &network.reactions[mu];
        let init = if leaf == Self::DESIGNATED_LEAF { r.constant } else { 1.0 };
        self.placement[mu][leaf]
            .iter()
            .fold(init, |acc, &k| acc * r.factors[k].eval(x))
    }

    /// True if reaction `mu` has no factor on `leaf` (its leaf propensity is a
    /// constant).
    pub fn is_constant_on(&self, mu: usize, leaf: usize) -> bool {
        self.placement[mu][leaf].is_empty()
    }
}

/// Checks that no propensity factor straddles two leaves of `tree` and
/// returns the factor placement.
pub fn validate_factorization(
    network: &ReactionNetwork,
    tree: &PartitionTree,
) -> Result<FactorAssignment> {
    let d = network.n_species();
    if tree.n_species() != d {
        return Err(Error::InvalidPartition(format!(
            "tree covers {} species but the network has {d}",
            tree.n_species()
        )));
    }
    let leaves = tree.leaves();
    let mut leaf_of = vec![0usize; d];
    for (l, &node) in leaves.iter().enumerate() {
        for &s in tree.leaf_species(node) {
            leaf_of[s] = l;
        }
    }
    let mut placement = Vec::with_capacity(network.n_reactions());
    for (mu, r) in network.reactions.iter().enumerate() {
        let mut per_leaf = vec![Vec::new(); leaves.len()];
        for (k, f) in r.factors.iter().enumerate() {
            let Some(&first) = f.species.first() else {
                per_leaf[FactorAssignment::DESIGNATED_LEAF].push(k);
                continue;
            };
            let leaf = leaf_of[first];
            if let Some(&other) = f.species.iter().find(|&&s| leaf_of[s] != leaf) {
                return Err(Error::Factorization {
                    reaction: mu,
                    factor: k,
                    species: f.species.clone(),
                    leaves: format!(
                        "{:?} | {:?}",
                        tree.leaf_species(leaves[leaf]),
                        tree.leaf_species(leaves[leaf_of[other]])
                    ),
                });
            }
            per_leaf[leaf].push(k);
        }
        placement.push(per_leaf);
    }
    Ok(FactorAssignment { placement })
}
