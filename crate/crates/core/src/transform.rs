//! Graphical latent-to-observed transformation of single equations.
//!
//! A latent `x` with scaling indicator `s` satisfies
//! `x = s - e_s - sum(b_k * k)` over the other parents `k` of `s`. The
//! transform substitutes this identity for the requested latent covariates,
//! rehomes a latent dependent onto its scaling indicator, and rewrites the
//! arrows into the resulting observed dependent. Each rewritten arrow keeps
//! the symbolic combination of original parameters it stands for.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    coefficient_label, EquationSpec, ModelError, NodeId, ParamAssignment, ParamRef, PathDiagram, SemModel,
};

/// Default limit on nested substitutions of latent co-parents.
pub const DEFAULT_DEPTH_LIMIT: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("latent `{0}` has no scaling indicator")]
    NoScalingIndicator(String),
    #[error("`{0}` is not a covariate of `{1}`")]
    NotCovariate(String, String),
    #[error("coefficient `{0}` is fixed and cannot be a target")]
    FixedTarget(String),
    #[error("substitution puts `{0}` on the right-hand side of its own equation")]
    SelfReference(String),
    #[error("latent substitution deeper than {0} levels")]
    DepthExceeded(usize),
    #[error("`{0}` is both kept as error and a target")]
    KeepOverlapsTargets(String),
    #[error("`{0}` is not a latent covariate of the equation")]
    KeepNotLatentCovariate(String),
    #[error("nothing to estimate: no targets remain")]
    NothingToEstimate,
    #[error("transformed equation of `{0}` feeds back into its own regressors")]
    Cyclic(String),
}

/// Product of parameter labels with a numeric factor. Fixed parameters are
/// folded into the factor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Monomial {
    pub coef: f64,
    /// Sorted, may repeat.
    pub labels: Vec<String>,
}

impl Monomial {
    fn render(&self) -> String {
        let body = self.labels.join("*");
        if self.labels.is_empty() {
            format!("{}", self.coef)
        } else if self.coef == 1.0 {
            body
        } else if self.coef == -1.0 {
            format!("-{body}")
        } else {
            format!("{}*{body}", self.coef)
        }
    }
}

/// Polynomial in parameter labels, kept in a canonical form: monomials
/// sorted by label list, like terms merged and zero terms dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Polynomial {
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms(vec![Monomial { coef: c, labels: Vec::new() }])
    }

    pub fn label(label: &str) -> Self {
        Self::from_terms(vec![Monomial { coef: 1.0, labels: vec![label.to_string()] }])
    }

    /// The value of a parameter: its label when free, its value when fixed.
    pub fn param(p: &ParamRef) -> Self {
        match p.fixed_value() {
            Some(v) => Self::constant(v),
            None => Self::label(&p.label),
        }
    }

    fn from_terms(mut terms: Vec<Monomial>) -> Self {
        terms.sort_by(|a, b| a.labels.cmp(&b.labels));
        let mut merged: Vec<Monomial> = Vec::with_capacity(terms.len());
        for t in terms {
            match merged.last_mut() {
                Some(last) if last.labels == t.labels => last.coef += t.coef,
                _ => merged.push(t),
            }
        }
        merged.retain(|m| m.coef != 0.0);
        Polynomial { terms: merged }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        Self::from_terms(self.terms.iter().chain(&other.terms).cloned().collect())
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut labels: Vec<String> = a.labels.iter().chain(&b.labels).cloned().collect();
                labels.sort();
                out.push(Monomial { coef: a.coef * b.coef, labels });
            }
        }
        Self::from_terms(out)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        self.mul(&Polynomial::constant(c))
    }

    /// `Some(v)` when the polynomial has no labels.
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [] => Some(0.0),
            [m] if m.labels.is_empty() => Some(m.coef),
            _ => None,
        }
    }

    /// The label when the polynomial is exactly one free parameter.
    pub fn as_single_label(&self) -> Option<&str> {
        match self.terms.as_slice() {
            [m] if m.coef == 1.0 && m.labels.len() == 1 => Some(&m.labels[0]),
            _ => None,
        }
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.terms.iter().flat_map(|m| m.labels.iter().map(String::as_str)).collect()
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.terms.iter().any(|m| m.labels.iter().any(|l| l == label))
    }

    /// Value at `params`; every label must be assigned.
    pub fn eval(&self, params: &ParamAssignment) -> Result<f64, ModelError> {
        let mut sum = 0.0;
        for m in &self.terms {
            let mut prod = m.coef;
            for l in &m.labels {
                prod *= params.get(l).ok_or_else(|| ModelError::MissingParam(l.clone()))?;
            }
            sum += prod;
        }
        Ok(sum)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, m) in self.terms.iter().enumerate() {
            let r = m.render();
            if i > 0 && !r.starts_with('-') {
                f.write_str("+")?;
            }
            f.write_str(&r)?;
        }
        Ok(())
    }
}

/// Symbolic origin of one rewritten arrow into the transformed dependent.
#[derive(Clone, Debug, PartialEq)]
pub struct ProvenanceEntry {
    pub source: NodeId,
    pub param: ParamRef,
    pub combination: Polynomial,
}

impl ProvenanceEntry {
    /// More than one monomial: only the sum is estimable.
    pub fn is_aliased(&self) -> bool {
        self.combination.terms().len() > 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Regression {
    pub dependent: NodeId,
    pub regressors: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct TransformOutcome {
    /// The input diagram with the arrows into the regression dependent
    /// rewritten.
    pub diagram: PathDiagram,
    /// Dependent of the original equation.
    pub equation: NodeId,
    pub regression: Regression,
    /// Error terms and untransformed latents absorbed into the equation
    /// error, each with its weight.
    pub composite_error: Vec<(NodeId, Polynomial)>,
    /// One entry per regressor, in regressor order.
    pub provenance: Vec<ProvenanceEntry>,
    /// Coefficients whose values were requested.
    pub targets: Vec<ParamRef>,
}

impl TransformOutcome {
    pub fn provenance_of(&self, regressor: NodeId) -> Option<&ProvenanceEntry> {
        self.provenance.iter().find(|p| p.source == regressor)
    }

    /// Regressor coefficients that involve at least one target.
    pub fn carriers(&self) -> impl Iterator<Item = &ProvenanceEntry> {
        self.provenance
            .iter()
            .filter(|p| self.targets.iter().any(|t| p.combination.contains_label(&t.label)))
    }

    /// Targets that equal some regressor coefficient on their own.
    pub fn individually_estimable(&self) -> Vec<&ParamRef> {
        self.targets
            .iter()
            .filter(|t| self.provenance.iter().any(|p| p.combination.as_single_label() == Some(t.label.as_str())))
            .collect()
    }

    pub fn composite_nodes(&self) -> BTreeSet<NodeId> {
        self.composite_error.iter().map(|(v, _)| *v).collect()
    }
}

/// Linear expression over nodes, kept in insertion order.
#[derive(Default)]
struct Expr {
    terms: Vec<(NodeId, Polynomial, usize)>,
}

impl Expr {
    fn add(&mut self, v: NodeId, p: Polynomial, depth: usize) {
        if let Some(i) = self.terms.iter().position(|(u, _, _)| *u == v) {
            let sum = self.terms[i].1.add(&p);
            if sum.is_zero() {
                self.terms.remove(i);
            } else {
                self.terms[i].1 = sum;
                self.terms[i].2 = self.terms[i].2.max(depth);
            }
        } else if !p.is_zero() {
            self.terms.push((v, p, depth));
        }
    }

    fn take(&mut self, v: NodeId) -> Option<(Polynomial, usize)> {
        let i = self.terms.iter().position(|(u, _, _)| *u == v)?;
        let (_, p, d) = self.terms.remove(i);
        Some((p, d))
    }
}

/// Full transform: substitutes every latent target of `eq`; latent
/// covariates outside the targets stay in the composite error.
pub fn l2o(model: &SemModel, eq: &EquationSpec) -> Result<TransformOutcome, TransformError> {
    transform(model, eq, DEFAULT_DEPTH_LIMIT)
}

/// Partial transform: the latents in `keep_as_error` are left in the
/// composite error; the remaining targets are transformed.
pub fn partial_l2o(
    model: &SemModel,
    eq: &EquationSpec,
    keep_as_error: &BTreeSet<NodeId>,
) -> Result<TransformOutcome, TransformError> {
    let g = &model.diagram;
    for &k in keep_as_error {
        if !eq.covariates.contains(&k) || !g.is_latent(k) {
            return Err(TransformError::KeepNotLatentCovariate(g.name(k).to_string()));
        }
        if eq.targets.contains(&k) {
            return Err(TransformError::KeepOverlapsTargets(g.name(k).to_string()));
        }
    }
    if eq.targets.is_empty() {
        return Err(TransformError::NothingToEstimate);
    }
    transform(model, eq, DEFAULT_DEPTH_LIMIT)
}

/// [`l2o`] with an explicit substitution depth limit.
pub fn transform(model: &SemModel, eq: &EquationSpec, depth_limit: usize) -> Result<TransformOutcome, TransformError> {
    let g = &model.diagram;
    let v = eq.dependent;
    if g.is_error(v) {
        return Err(ModelError::ErrorNode(g.name(v).to_string()).into());
    }
    let mut targets = Vec::new();
    for &t in &eq.targets {
        if !eq.covariates.contains(&t) {
            return Err(TransformError::NotCovariate(g.name(t).to_string(), g.name(v).to_string()));
        }
        let e = g
            .edge(t, v)
            .ok_or_else(|| TransformError::NotCovariate(g.name(t).to_string(), g.name(v).to_string()))?;
        if !e.param.is_free() {
            return Err(TransformError::FixedTarget(e.param.label.clone()));
        }
        targets.push(e.param.clone());
    }
    let scaling_of = |x: NodeId| {
        model
            .scaling_indicator(x)
            .ok_or_else(|| TransformError::NoScalingIndicator(g.name(x).to_string()))
    };

    // The equation as written, with a latent dependent rehomed onto its
    // scaling indicator.
    let mut expr = Expr::default();
    let dep = if g.is_latent(v) {
        let s = scaling_of(v)?;
        let through = Polynomial::param(&g.edge(v, s).expect("scaling indicator is a child").param);
        for &p in g.parents(s) {
            if p != v {
                expr.add(p, Polynomial::param(&g.edge(p, s).unwrap().param), 0);
            }
        }
        for &p in g.parents(v) {
            expr.add(p, Polynomial::param(&g.edge(p, v).unwrap().param).mul(&through), 0);
        }
        s
    } else {
        for &p in g.parents(v) {
            expr.add(p, Polynomial::param(&g.edge(p, v).unwrap().param), 0);
        }
        v
    };

    // Latents written in the equation but not targeted stay in the error.
    let kept: BTreeSet<NodeId> =
        expr.terms.iter().map(|(u, _, _)| *u).filter(|&u| g.is_latent(u) && !eq.targets.contains(&u)).collect();
    let mut pending: Vec<NodeId> = eq.targets.iter().copied().filter(|&t| g.is_latent(t)).collect();
    while let Some(x) = pending.pop() {
        let Some((weight, depth)) = expr.take(x) else { continue };
        if depth >= depth_limit {
            return Err(TransformError::DepthExceeded(depth_limit));
        }
        let s = scaling_of(x)?;
        let through = g.edge(x, s).expect("scaling indicator is a child").param.fixed_value().unwrap_or(1.0);
        let w = weight.scale(1.0 / through);
        expr.add(s, w.clone(), depth + 1);
        for &p in g.parents(s) {
            if p == x {
                continue;
            }
            let b = Polynomial::param(&g.edge(p, s).unwrap().param);
            expr.add(p, w.mul(&b).scale(-1.0), depth + 1);
            if g.is_latent(p) && !kept.contains(&p) {
                pending.push(p);
            }
        }
    }
    for &(u, _, _) in &expr.terms {
        if u == v || u == dep {
            return Err(TransformError::SelfReference(g.name(u).to_string()));
        }
    }

    // Rewrite arrows into the dependent: existing ones in place, new ones
    // appended in expression order.
    let mut out = g.skeleton();
    let mut placed: BTreeSet<NodeId> = BTreeSet::new();
    let edge_param = |u: NodeId, poly: &Polynomial| -> ParamRef {
        if let Some(e) = g.edge(u, dep) {
            if Polynomial::param(&e.param) == *poly {
                return e.param.clone();
            }
        }
        match poly.as_constant() {
            Some(c) => ParamRef::fixed(coefficient_label(g.name(u), g.name(dep)), c),
            None => ParamRef::free(poly.to_string()),
        }
    };
    for e in g.directed_edges() {
        if e.to != dep {
            out.add_directed(e.from, e.to, e.param.clone());
        } else if let Some((_, poly, _)) = expr.terms.iter().find(|(u, _, _)| *u == e.from) {
            out.add_directed(e.from, dep, edge_param(e.from, poly));
            placed.insert(e.from);
        }
    }
    for (u, poly, _) in &expr.terms {
        if !placed.contains(u) {
            out.add_directed(*u, dep, edge_param(*u, poly));
        }
    }
    for e in g.bidirected_edges() {
        out.add_bidirected(e.a, e.b, e.param.clone());
    }
    if !out.is_acyclic() {
        return Err(TransformError::Cyclic(g.name(v).to_string()));
    }

    let mut regressors = Vec::new();
    let mut provenance = Vec::new();
    let mut composite_error = Vec::new();
    for e in out.directed_edges().iter().filter(|e| e.to == dep) {
        let (_, poly, _) = expr.terms.iter().find(|(u, _, _)| *u == e.from).expect("edge comes from a term");
        if g.is_observed(e.from) {
            regressors.push(e.from);
            provenance.push(ProvenanceEntry { source: e.from, param: e.param.clone(), combination: poly.clone() });
        } else {
            composite_error.push((e.from, poly.clone()));
        }
    }
    Ok(TransformOutcome {
        diagram: out,
        equation: v,
        regression: Regression { dependent: dep, regressors },
        composite_error,
        provenance,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{equation_of, NodeKind};
    use std::collections::BTreeMap;

    struct Builder {
        g: PathDiagram,
        scaling: BTreeMap<NodeId, NodeId>,
    }

    impl Builder {
        fn new() -> Self {
            Builder { g: PathDiagram::new(), scaling: BTreeMap::new() }
        }
        fn lat(&mut self, n: &str) -> NodeId {
            self.g.add_variable(n, NodeKind::Latent)
        }
        fn obs(&mut self, n: &str) -> NodeId {
            self.g.add_variable(n, NodeKind::Observed)
        }
        fn arrow(&mut self, a: NodeId, b: NodeId, label: &str) {
            self.g.add_directed(a, b, ParamRef::free(label));
        }
        fn scale(&mut self, l: NodeId, y: NodeId) {
            let label = coefficient_label(self.g.name(l), self.g.name(y));
            self.g.add_directed(l, y, ParamRef::fixed(label, 1.0));
            self.scaling.insert(l, y);
        }
        fn build(self) -> SemModel {
            let m = SemModel::new(self.g, self.scaling);
            assert!(crate::model::validate(&m).is_empty(), "{:?}", crate::model::validate(&m));
            m
        }
    }

    fn names(m: &SemModel, ids: &[NodeId]) -> Vec<String> {
        m.diagram.names(ids.iter().copied())
    }

    #[test]
    fn polynomial_rendering() {
        let p = Polynomial::label("λ34").add(&Polynomial::label("λ14"));
        assert_eq!(p.to_string(), "λ14+λ34");
        let q = Polynomial::label("β").mul(&Polynomial::label("b_y1_y2")).scale(-1.0);
        assert_eq!(q.to_string(), "-b_y1_y2*β");
        assert_eq!(Polynomial::label("a").add(&Polynomial::label("a").scale(-1.0)), Polynomial::zero());
        assert_eq!(Polynomial::constant(2.0).mul(&Polynomial::label("a")).to_string(), "2*a");
    }

    #[test]
    fn latent_to_observed_arrow() {
        // l1 scaled by y2, y1 -> y2, l1 -> y3 (beta), y5 -> y3
        let mut b = Builder::new();
        let l1 = b.lat("l1");
        let y1 = b.obs("y1");
        let y2 = b.obs("y2");
        let y3 = b.obs("y3");
        let y5 = b.obs("y5");
        b.scale(l1, y2);
        b.arrow(y1, y2, "b_y1_y2");
        b.arrow(l1, y3, "β");
        b.arrow(y5, y3, "b_y5_y3");
        let m = b.build();
        let out = l2o(&m, &equation_of(&m, y3).unwrap()).unwrap();
        assert_eq!(out.regression.dependent, y3);
        assert_eq!(names(&m, &out.regression.regressors), ["y5", "y2", "y1"]);
        let g2 = &out.diagram;
        assert!(g2.edge(l1, y3).is_none());
        assert!(g2.edge(y2, y3).is_some() && g2.edge(y1, y3).is_some());
        let e2 = m.diagram.find("ε_y2").unwrap();
        assert_eq!(g2.edge(e2, y3).unwrap().param.label, "-β");
        assert_eq!(out.provenance_of(y2).unwrap().combination.to_string(), "β");
        assert_eq!(out.provenance_of(y1).unwrap().combination.to_string(), "-b_y1_y2*β");
        assert_eq!(out.provenance_of(y5).unwrap().param.label, "b_y5_y3");
        let comp: Vec<String> = out.composite_error.iter().map(|(v, _)| m.diagram.name(*v).to_string()).collect();
        assert_eq!(comp, ["ε_y3", "ε_y2"]);
        // unchanged elsewhere
        assert!(g2.edge(l1, y2).is_some() && g2.edge(y1, y2).is_some());
    }

    #[test]
    fn observed_to_latent_arrow() {
        let mut b = Builder::new();
        let y1 = b.obs("y1");
        let l1 = b.lat("l1");
        let y2 = b.obs("y2");
        let y3 = b.obs("y3");
        let y4 = b.obs("y4");
        b.arrow(y1, l1, "β");
        b.scale(l1, y4);
        b.arrow(y3, y4, "b_y3_y4");
        b.arrow(y2, y4, "b_y2_y4");
        let m = b.build();
        let out = l2o(&m, &equation_of(&m, l1).unwrap()).unwrap();
        assert_eq!(out.regression.dependent, y4);
        let mut r = names(&m, &out.regression.regressors);
        r.sort();
        assert_eq!(r, ["y1", "y2", "y3"]);
        let z1 = m.diagram.find("ζ_l1").unwrap();
        assert!(out.composite_nodes().contains(&z1));
        assert!(out.diagram.edge(l1, y4).is_none());
        assert!(out.diagram.edge(z1, l1).is_some());
        assert_eq!(out.provenance_of(y1).unwrap().combination.to_string(), "β");
    }

    #[test]
    fn latent_to_latent_arrow() {
        let mut b = Builder::new();
        let l1 = b.lat("l1");
        let l2 = b.lat("l2");
        let y1 = b.obs("y1");
        let y2 = b.obs("y2");
        b.arrow(l1, l2, "β");
        b.scale(l1, y1);
        b.scale(l2, y2);
        let m = b.build();
        let out = l2o(&m, &equation_of(&m, l2).unwrap()).unwrap();
        assert_eq!(out.regression, Regression { dependent: y2, regressors: vec![y1] });
        let mut comp = names(&m, &out.composite_nodes().into_iter().collect::<Vec<_>>());
        comp.sort();
        assert_eq!(comp, ["ε_y1", "ε_y2", "ζ_l2"]);
        assert_eq!(out.provenance[0].combination.to_string(), "β");
    }

    #[test]
    fn all_observed_equation_is_identity() {
        let mut b = Builder::new();
        let x = b.obs("x");
        let y = b.obs("y");
        b.arrow(x, y, "β");
        let m = b.build();
        let out = l2o(&m, &equation_of(&m, y).unwrap()).unwrap();
        assert_eq!(out.diagram.directed_edges(), m.diagram.directed_edges());
        assert_eq!(out.provenance[0].param, ParamRef::free("β"));
    }

    #[test]
    fn aliasing_sums_colliding_arrows() {
        let mut b = Builder::new();
        let x1 = b.lat("x1");
        let y1 = b.obs("y1");
        let y2 = b.obs("y2");
        let y3 = b.obs("y3");
        let y4 = b.obs("y4");
        b.scale(x1, y3);
        b.arrow(x1, y1, "λ12");
        b.arrow(x1, y2, "λ13");
        b.arrow(x1, y4, "λ14");
        b.arrow(y2, y4, "λ24");
        b.arrow(y3, y4, "λ34");
        b.arrow(y1, y2, "b_y1_y2");
        let m = b.build();
        let out = l2o(&m, &equation_of(&m, y4).unwrap()).unwrap();
        let p3 = out.provenance_of(y3).unwrap();
        assert_eq!(p3.combination.to_string(), "λ14+λ34");
        assert!(p3.is_aliased());
        assert_eq!(out.provenance_of(y2).unwrap().combination.to_string(), "λ24");
        let est: Vec<&str> = out.individually_estimable().iter().map(|p| p.label.as_str()).collect();
        assert_eq!(est, ["λ24"]);
    }

    #[test]
    fn partial_keeps_latent_in_error() {
        let mut b = Builder::new();
        let l1 = b.lat("l1");
        let l2 = b.lat("l2");
        let ys: Vec<NodeId> = (1..=5).map(|i| b.obs(&format!("y{i}"))).collect();
        b.scale(l1, ys[1]);
        b.arrow(l1, ys[0], "λ11");
        b.arrow(l1, ys[2], "λ13");
        b.scale(l2, ys[3]);
        b.arrow(l2, ys[4], "λ25");
        b.arrow(l2, ys[2], "λ23");
        let m = b.build();
        let eq = equation_of(&m, ys[2]).unwrap();
        let keep = BTreeSet::from([l1]);
        let out = partial_l2o(&m, &eq.with_targets(vec![l2]), &keep).unwrap();
        assert_eq!(out.regression.regressors, vec![ys[3]]);
        assert!(out.composite_nodes().contains(&l1));
        assert!(matches!(partial_l2o(&m, &eq, &keep), Err(TransformError::KeepOverlapsTargets(_))));
        assert!(matches!(
            partial_l2o(&m, &eq.with_targets(vec![]), &BTreeSet::from([l1, l2])),
            Err(TransformError::NothingToEstimate)
        ));
        let full = l2o(&m, &eq).unwrap();
        let same = partial_l2o(&m, &eq, &BTreeSet::new()).unwrap();
        assert_eq!(full.diagram.directed_edges(), same.diagram.directed_edges());
    }
}
