//! Instrumental-set identification of path coefficients on transformed
//! equations, with partial and conditional fallbacks.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{
    canonicalize, d_separated, descendants, enumerate_treks, has_trek, hop_distance, min_t_separator,
    remove_coefficient_edges, GraphError, Trek,
};
use crate::model::{equation_of, EquationSpec, ModelError, NodeId, ParamAssignment, PathDiagram, SemModel};
use crate::numeric::{implied_covariance, sources_positive_definite, DEFAULT_RANK_TOL};
use crate::transform::{l2o, partial_l2o, TransformError, TransformOutcome};

#[derive(Debug, Error)]
pub enum IdError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("instrument set has {0} members for {1} regressors")]
    SizeMismatch(usize, usize),
    #[error("graph has {0} non-error nodes, above the oracle bound of {1}")]
    OracleBound(usize, usize),
    #[error("error covariance is not positive definite at these parameters")]
    NonGeneric,
    #[error("{0}")]
    Precondition(String),
}

#[derive(Clone, Copy, Debug)]
pub struct IdConfig {
    /// Most instrument choices reported per strategy.
    pub max_sets: usize,
    /// Largest conditioning set tried for conditional instruments.
    pub max_cond: usize,
    /// Most keep-sets tried by the partial strategy.
    pub max_partial: usize,
    pub rank_tol: f64,
}

impl Default for IdConfig {
    fn default() -> Self {
        IdConfig { max_sets: 16, max_cond: 2, max_partial: 12, rank_tol: DEFAULT_RANK_TOL }
    }
}

/// Default node bound for [`verify_instrumental_set_permutation_oracle`].
pub const DEFAULT_ORACLE_BOUND: usize = 12;

/// Permutation-free instrumental set check: no trek from `i` to `y` once
/// the arrows `x -> y` are gone, and every trek separator of `i` and `x`
/// has at least `|x|` nodes.
pub fn verify_instrumental_set(g: &PathDiagram, i: &[NodeId], x: &[NodeId], y: NodeId) -> Result<bool, IdError> {
    if i.len() != x.len() {
        return Err(IdError::SizeMismatch(i.len(), x.len()));
    }
    let xs: BTreeSet<NodeId> = x.iter().copied().collect();
    let is: BTreeSet<NodeId> = i.iter().copied().collect();
    let removed = remove_coefficient_edges(g, &xs, y)?;
    if has_trek(&removed, &is, &BTreeSet::from([y])) {
        return Ok(false);
    }
    if is.len() < i.len() || xs.len() < x.len() {
        return Ok(false);
    }
    Ok(min_t_separator(g, &is, &xs).0 >= x.len())
}

/// Brute-force instrumental set check: some ordering of `i` and `x` and
/// some treks `π_j` from `i_j` to `x_j` such that for `a < b`, `i_b` is not
/// on `π_a` and every node shared by `π_a` and `π_b` sits strictly on the
/// left side of `π_a` and strictly on the right side of `π_b`.
pub fn verify_instrumental_set_permutation_oracle(
    g: &PathDiagram,
    i: &[NodeId],
    x: &[NodeId],
    y: NodeId,
    bound: usize,
) -> Result<bool, IdError> {
    if i.len() != x.len() {
        return Err(IdError::SizeMismatch(i.len(), x.len()));
    }
    let size = g.node_ids().filter(|&v| !g.is_error(v)).count();
    if size > bound {
        return Err(IdError::OracleBound(size, bound));
    }
    let xs: BTreeSet<NodeId> = x.iter().copied().collect();
    let removed = canonicalize(&remove_coefficient_edges(g, &xs, y)?);
    for &v in i {
        if !enumerate_treks(&removed, v, y)?.is_empty() {
            return Ok(false);
        }
    }
    let c = canonicalize(g);
    let mut treks: HashMap<(NodeId, NodeId), Vec<Trek>> = HashMap::new();
    for &a in i {
        for &b in x {
            treks.insert((a, b), enumerate_treks(&c, a, b)?);
        }
    }
    let k = i.len();
    for pi in i.iter().copied().permutations(k) {
        for px in x.iter().copied().permutations(k) {
            let lists: Vec<&[Trek]> = (0..k).map(|j| treks[&(pi[j], px[j])].as_slice()).collect();
            if trek_system(&lists, &pi, &mut Vec::new()) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn trek_system<'a>(lists: &[&'a [Trek]], inst: &[NodeId], chosen: &mut Vec<&'a Trek>) -> bool {
    let j = chosen.len();
    if j == lists.len() {
        return true;
    }
    for t in lists[j] {
        let fits = chosen.iter().all(|prev| !prev.nodes.contains(&inst[j]) && opposite_sided(prev, t));
        if fits {
            chosen.push(t);
            if trek_system(lists, inst, chosen) {
                return true;
            }
            chosen.pop();
        }
    }
    false
}

/// Every shared node lies only on the left side of `a` and only on the
/// right side of `b`, tops excluded.
fn opposite_sided(a: &Trek, b: &Trek) -> bool {
    let a_left = &a.nodes[..a.top];
    let a_right = &a.nodes[a.top + 1..];
    let b_left = &b.nodes[..b.top];
    let b_right = &b.nodes[b.top + 1..];
    a.nodes.iter().filter(|v| b.nodes.contains(v)).all(|v| {
        a_left.contains(v) && !a_right.contains(v) && v != &a.top_node()
            && b_right.contains(v) && !b_left.contains(v) && v != &b.top_node()
    })
}

/// Numeric instrumental set check on the original model: `i` uncorrelated
/// with the composite error of `outcome`, `Σ[i, X]` of rank `|X|` and
/// `Σ[i]` of rank `|i|`.
pub fn verify_algebraic_instrumental_set(
    model: &SemModel,
    params: &ParamAssignment,
    outcome: &TransformOutcome,
    i: &[NodeId],
    tol: f64,
) -> Result<bool, IdError> {
    if !sources_positive_definite(&model.diagram, params)? {
        return Err(IdError::NonGeneric);
    }
    let sigma = implied_covariance(model, params)?;
    let x = &outcome.regression.regressors;
    let mut weights = Vec::new();
    for (v, w) in &outcome.composite_error {
        weights.push((*v, w.eval(params)?));
    }
    let mut err_var = 0.0;
    for (a, wa) in &weights {
        for (b, wb) in &weights {
            err_var += wa * wb * sigma.get(*a, *b);
        }
    }
    for &v in i {
        let cov: f64 = weights.iter().map(|(u, w)| w * sigma.get(v, *u)).sum();
        if cov.abs() > tol * (sigma.get(v, v) * err_var.max(0.0)).sqrt() {
            return Ok(false);
        }
    }
    if sigma.block_rank(i, x, tol) != x.len() {
        return Ok(false);
    }
    Ok(sigma.block_rank(i, i, tol) == i.len())
}

/// Conditional instrument check: `w` holds no descendant of `y`, `z` is
/// d-separated from `y` given `w` once `x -> y` is removed, and `z` is
/// d-connected to `x` given `w`.
pub fn verify_conditional_iv(
    g: &PathDiagram,
    z: NodeId,
    w: &BTreeSet<NodeId>,
    x: NodeId,
    y: NodeId,
) -> Result<bool, IdError> {
    if w.contains(&z) {
        return Err(IdError::Precondition(format!("`{}` is both instrument and conditioning", g.name(z))));
    }
    if z == x || z == y || w.contains(&x) || w.contains(&y) {
        return Err(IdError::Precondition("instrument, regressor and dependent must be distinct".into()));
    }
    let desc = descendants(g, y);
    if w.iter().any(|v| desc.contains(v)) {
        return Ok(false);
    }
    let removed = remove_coefficient_edges(g, &BTreeSet::from([x]), y)?;
    if !d_separated(&removed, &BTreeSet::from([z]), &BTreeSet::from([y]), w)? {
        return Ok(false);
    }
    Ok(!d_separated(g, &BTreeSet::from([z]), &BTreeSet::from([x]), w)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Full,
    Partial,
    Conditional,
}

/// One usable regression: the transformed equation with its instruments.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstrumentChoice {
    pub strategy: Strategy,
    pub dependent: String,
    pub regressors: Vec<String>,
    /// Coefficient of each regressor in terms of original parameters.
    pub combinations: Vec<String>,
    pub instruments: Vec<String>,
    pub conditioning: Vec<String>,
    /// Latent covariates left in the error term.
    pub kept: Vec<String>,
    /// Targets the transform was asked for.
    pub transform_targets: Vec<String>,
    /// Targets this choice estimates on their own.
    pub for_targets: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum IdStatus {
    FullyIdentified,
    PartiallyIdentified,
    Underidentified,
    IdentifiedButAliased,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProvenanceRow {
    pub regressor: String,
    pub param: String,
    pub combination: String,
    pub aliased: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquationRecord {
    pub equation: String,
    pub targets: Vec<String>,
    pub status: IdStatus,
    pub strategies: Vec<Strategy>,
    pub identified: Vec<String>,
    pub unidentified: Vec<String>,
    pub estimable_combinations: Vec<String>,
    pub regression: RegressionRow,
    pub provenance: Vec<ProvenanceRow>,
    pub choices: Vec<InstrumentChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionRow {
    pub dependent: String,
    pub regressors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentificationReport {
    pub equations: Vec<EquationRecord>,
}

impl IdentificationReport {
    pub fn equation(&self, name: &str) -> Option<&EquationRecord> {
        self.equations.iter().find(|e| e.equation == name)
    }
}

fn sorted_by_distance(g: &PathDiagram, nodes: Vec<NodeId>, to: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let mut keyed: Vec<(usize, &str, NodeId)> =
        nodes.into_iter().map(|v| (hop_distance(g, v, to).unwrap_or(usize::MAX), g.name(v), v)).collect();
    keyed.sort();
    keyed.into_iter().map(|(_, _, v)| v).collect()
}

/// Size-`|X|` instrument sets for the transformed regression of `outcome`,
/// in deterministic order, at most `cap` of them.
pub fn search_instruments(
    model: &SemModel,
    outcome: &TransformOutcome,
    cap: usize,
) -> Result<Vec<Vec<NodeId>>, IdError> {
    let g = &outcome.diagram;
    let x = &outcome.regression.regressors;
    let y = outcome.regression.dependent;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let xs: BTreeSet<NodeId> = x.iter().copied().collect();
    let removed = remove_coefficient_edges(g, &xs, y)?;
    let ys = BTreeSet::from([y]);
    let candidates: Vec<NodeId> = model
        .observed()
        .into_iter()
        .filter(|&c| c != y && !has_trek(&removed, &BTreeSet::from([c]), &ys))
        .collect();
    let candidates = sorted_by_distance(g, candidates, &xs);
    let mut found = Vec::new();
    for set in candidates.iter().copied().combinations(x.len()) {
        if found.len() >= cap {
            break;
        }
        if verify_instrumental_set(g, &set, x, y)? {
            found.push(set);
        }
    }
    Ok(found)
}

/// Instrument choices for the full transform of `eq`.
pub fn find_instruments(model: &SemModel, eq: &EquationSpec, cfg: &IdConfig) -> Result<Vec<InstrumentChoice>, IdError> {
    let outcome = l2o(model, eq)?;
    let sets = search_instruments(model, &outcome, cfg.max_sets)?;
    Ok(sets.into_iter().map(|s| choice(model, &outcome, Strategy::Full, s, Vec::new(), &[])).collect())
}

fn choice(
    model: &SemModel,
    outcome: &TransformOutcome,
    strategy: Strategy,
    instruments: Vec<NodeId>,
    conditioning: Vec<NodeId>,
    kept: &[NodeId],
) -> InstrumentChoice {
    let g = &model.diagram;
    InstrumentChoice {
        strategy,
        dependent: g.name(outcome.regression.dependent).to_string(),
        regressors: g.names(outcome.regression.regressors.iter().copied()),
        combinations: outcome.provenance.iter().map(|p| p.combination.to_string()).collect(),
        instruments: g.names(instruments),
        conditioning: g.names(conditioning),
        kept: g.names(kept.iter().copied()),
        transform_targets: outcome.targets.iter().map(|p| p.label.clone()).collect(),
        for_targets: outcome.individually_estimable().iter().map(|p| p.label.clone()).collect(),
    }
}

fn absorb(
    record: &mut EquationRecord,
    identified: &mut BTreeSet<String>,
    outcome: &TransformOutcome,
    choices: Vec<InstrumentChoice>,
) {
    let Some(first) = choices.first() else { return };
    if !record.strategies.contains(&first.strategy) {
        record.strategies.push(first.strategy);
    }
    for p in outcome.individually_estimable() {
        identified.insert(p.label.clone());
    }
    for p in outcome.carriers() {
        push_unique(&mut record.estimable_combinations, p.combination.to_string());
    }
    record.choices.extend(choices);
}

fn push_unique(v: &mut Vec<String>, s: String) {
    if !v.contains(&s) {
        v.push(s);
    }
}

/// Runs the full, partial and conditional strategies in turn on one
/// equation and summarizes what is identified.
pub fn identify_equation(model: &SemModel, eq: &EquationSpec, cfg: &IdConfig) -> Result<EquationRecord, IdError> {
    let g = &model.diagram;
    let full = l2o(model, eq)?;
    let target_labels: Vec<String> = full.targets.iter().map(|p| p.label.clone()).collect();
    let mut record = EquationRecord {
        equation: g.name(eq.dependent).to_string(),
        targets: target_labels.clone(),
        status: IdStatus::Underidentified,
        strategies: Vec::new(),
        identified: Vec::new(),
        unidentified: Vec::new(),
        estimable_combinations: Vec::new(),
        regression: RegressionRow {
            dependent: g.name(full.regression.dependent).to_string(),
            regressors: g.names(full.regression.regressors.iter().copied()),
        },
        provenance: full
            .provenance
            .iter()
            .map(|p| ProvenanceRow {
                regressor: g.name(p.source).to_string(),
                param: p.param.label.clone(),
                combination: p.combination.to_string(),
                aliased: p.is_aliased(),
            })
            .collect(),
        choices: Vec::new(),
        note: None,
    };
    let mut identified: BTreeSet<String> = BTreeSet::new();
    // Full equation.
    let sets = search_instruments(model, &full, cfg.max_sets)?;
    let full_ok = !sets.is_empty();
    let choices = sets.into_iter().map(|s| choice(model, &full, Strategy::Full, s, Vec::new(), &[])).collect();
    absorb(&mut record, &mut identified, &full, choices);

    let latent_targets: Vec<NodeId> = eq.targets.iter().copied().filter(|&t| g.is_latent(t)).collect();
    if !full_ok {
        // Partial: leave some latent targets in the error.
        let keep_sets = (1..=latent_targets.len())
            .flat_map(|n| latent_targets.iter().copied().combinations(n))
            .filter(|k| k.len() < eq.targets.len())
            .take(cfg.max_partial);
        for keep in keep_sets {
            let rest: Vec<NodeId> = eq.targets.iter().copied().filter(|t| !keep.contains(t)).collect();
            let keep_set: BTreeSet<NodeId> = keep.iter().copied().collect();
            let outcome = match partial_l2o(model, &eq.with_targets(rest), &keep_set) {
                Ok(o) => o,
                Err(_) => continue,
            };
            let sets = search_instruments(model, &outcome, cfg.max_sets)?;
            let choices =
                sets.into_iter().map(|s| choice(model, &outcome, Strategy::Partial, s, Vec::new(), &keep)).collect();
            absorb(&mut record, &mut identified, &outcome, choices);
        }

        // Conditional: one target at a time, other latents in the error.
        for &t in &eq.targets {
            let label = &g.edge(t, eq.dependent).expect("target is a covariate").param.label;
            if identified.contains(label) {
                continue;
            }
            let keep: Vec<NodeId> =
                eq.covariates.iter().copied().filter(|&c| c != t && g.is_latent(c)).collect();
            let keep_set: BTreeSet<NodeId> = keep.iter().copied().collect();
            let outcome = match partial_l2o(model, &eq.with_targets(vec![t]), &keep_set) {
                Ok(o) => o,
                Err(_) => continue,
            };
            let Some(x) = outcome
                .provenance
                .iter()
                .find(|p| p.combination.as_single_label() == Some(label.as_str()))
                .map(|p| p.source)
            else {
                continue;
            };
            let found = search_conditional(model, &outcome, x, cfg)?;
            let choices = found
                .into_iter()
                .map(|(z, w)| {
                    let mut c = choice(model, &outcome, Strategy::Conditional, vec![z], w, &keep);
                    c.regressors = vec![g.name(x).to_string()];
                    c.combinations = vec![label.clone()];
                    c.for_targets = vec![label.clone()];
                    c
                })
                .collect();
            let mut single = outcome.clone();
            single.provenance.retain(|p| p.source == x);
            absorb(&mut record, &mut identified, &single, choices);
        }
    }

    record.identified = target_labels.iter().filter(|l| identified.contains(*l)).cloned().collect();
    record.unidentified = target_labels.iter().filter(|l| !identified.contains(*l)).cloned().collect();
    record.status = if record.choices.is_empty() {
        IdStatus::Underidentified
    } else if record.unidentified.is_empty() {
        IdStatus::FullyIdentified
    } else if full_ok || record.identified.is_empty() {
        IdStatus::IdentifiedButAliased
    } else {
        IdStatus::PartiallyIdentified
    };
    Ok(record)
}

/// Singleton conditional instruments for the arrow `x -> y` of the
/// transformed regression, using the smallest conditioning size that works.
fn search_conditional(
    model: &SemModel,
    outcome: &TransformOutcome,
    x: NodeId,
    cfg: &IdConfig,
) -> Result<Vec<(NodeId, Vec<NodeId>)>, IdError> {
    let g = &outcome.diagram;
    let y = outcome.regression.dependent;
    let desc = descendants(g, y);
    let pool: Vec<NodeId> = model.observed().into_iter().filter(|&v| v != y && v != x && !desc.contains(&v)).collect();
    let zs = sorted_by_distance(g, pool.clone(), &BTreeSet::from([x]));
    for size in 0..=cfg.max_cond {
        let mut found = Vec::new();
        for &z in &zs {
            let others: Vec<NodeId> = pool.iter().copied().filter(|&v| v != z).collect();
            for w in others.into_iter().combinations(size) {
                if found.len() >= cfg.max_sets {
                    return Ok(found);
                }
                let ws: BTreeSet<NodeId> = w.iter().copied().collect();
                if verify_conditional_iv(g, z, &ws, x, y)? {
                    found.push((z, w));
                }
            }
        }
        if !found.is_empty() {
            return Ok(found);
        }
    }
    Ok(Vec::new())
}

/// Equations with at least one free coefficient, in node order.
pub fn equations(model: &SemModel) -> Vec<EquationSpec> {
    model
        .diagram
        .node_ids()
        .filter(|&v| !model.diagram.is_error(v))
        .filter_map(|v| equation_of(model, v).ok())
        .filter(|eq| !eq.targets.is_empty())
        .collect()
}

/// One record per equation; equations are processed in parallel and
/// reported in node order.
pub fn identify_model(model: &SemModel, cfg: &IdConfig) -> IdentificationReport {
    let eqs = equations(model);
    let equations = eqs
        .par_iter()
        .map(|eq| {
            identify_equation(model, eq, cfg).unwrap_or_else(|e| {
                let g = &model.diagram;
                let targets: Vec<String> =
                    eq.targets.iter().map(|&t| g.edge(t, eq.dependent).unwrap().param.label.clone()).collect();
                EquationRecord {
                    equation: g.name(eq.dependent).to_string(),
                    unidentified: targets.clone(),
                    targets,
                    status: IdStatus::Underidentified,
                    strategies: Vec::new(),
                    identified: Vec::new(),
                    estimable_combinations: Vec::new(),
                    regression: RegressionRow { dependent: g.name(eq.dependent).to_string(), regressors: Vec::new() },
                    provenance: Vec::new(),
                    choices: Vec::new(),
                    note: Some(e.to_string()),
                }
            })
        })
        .collect();
    IdentificationReport { equations }
}

/// Builds the transform behind a reported choice again.
pub fn choice_outcome(model: &SemModel, choice: &InstrumentChoice, equation: &str) -> Result<TransformOutcome, IdError> {
    let g = &model.diagram;
    let v = g.require(equation)?;
    let eq = equation_of(model, v)?;
    let by_label: BTreeMap<&str, NodeId> =
        eq.covariates.iter().map(|&c| (g.edge(c, v).unwrap().param.label.as_str(), c)).collect();
    let targets = choice
        .transform_targets
        .iter()
        .map(|l| by_label.get(l.as_str()).copied().ok_or_else(|| IdError::Precondition(format!("unknown target `{l}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let keep = choice.kept.iter().map(|k| g.require(k)).collect::<Result<BTreeSet<_>, _>>()?;
    Ok(partial_l2o(model, &eq.with_targets(targets), &keep)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeKind, ParamRef};

    fn set(v: &[NodeId]) -> BTreeSet<NodeId> {
        v.iter().copied().collect()
    }

    /// i -> x -> y with correlated errors of x and y.
    fn classic_iv() -> (PathDiagram, NodeId, NodeId, NodeId) {
        let mut g = PathDiagram::new();
        let i = g.add_variable("i", NodeKind::Observed);
        let x = g.add_variable("x", NodeKind::Observed);
        let y = g.add_variable("y", NodeKind::Observed);
        g.add_directed(i, x, ParamRef::free("a"));
        g.add_directed(x, y, ParamRef::free("b"));
        let (ex, ey) = (g.error_of(x).unwrap(), g.error_of(y).unwrap());
        g.add_bidirected(ex, ey, ParamRef::free("c"));
        (g, i, x, y)
    }

    #[test]
    fn classic_instrument_passes_both_checks() {
        let (g, i, x, y) = classic_iv();
        assert!(verify_instrumental_set(&g, &[i], &[x], y).unwrap());
        assert!(verify_instrumental_set_permutation_oracle(&g, &[i], &[x], y, 12).unwrap());
        assert!(!verify_instrumental_set(&g, &[x], &[x], y).unwrap());
        assert!(!verify_instrumental_set_permutation_oracle(&g, &[x], &[x], y, 12).unwrap());
        assert!(matches!(verify_instrumental_set(&g, &[i, x], &[x], y), Err(IdError::SizeMismatch(2, 1))));
        assert!(matches!(
            verify_instrumental_set_permutation_oracle(&g, &[i], &[x], y, 2),
            Err(IdError::OracleBound(3, 2))
        ));
    }

    #[test]
    fn conditional_instrument_needs_conditioning() {
        // z <- w -> y, z -> x -> y
        let mut g = PathDiagram::new();
        let z = g.add_variable("z", NodeKind::Observed);
        let w = g.add_variable("w", NodeKind::Observed);
        let x = g.add_variable("x", NodeKind::Observed);
        let y = g.add_variable("y", NodeKind::Observed);
        for (a, b) in [(w, z), (w, y), (z, x), (x, y)] {
            g.add_directed(a, b, ParamRef::free(format!("b{}{}", a.0, b.0)));
        }
        assert!(!verify_conditional_iv(&g, z, &set(&[]), x, y).unwrap());
        assert!(verify_conditional_iv(&g, z, &set(&[w]), x, y).unwrap());
        assert!(verify_conditional_iv(&g, z, &set(&[z]), x, y).is_err());
    }
}
