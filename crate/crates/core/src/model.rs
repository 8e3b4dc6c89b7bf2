//! RAM-form structural equation models: nodes, parameters, path diagrams and
//! the scaling-indicator map.
//!
//! A [`PathDiagram`] carries every variable of the model explicitly,
//! including one error node per latent or observed variable. Error
//! covariances live on bidirected edges between error nodes and error
//! variances are attached to the error nodes themselves.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` is an error node and has no structural equation")]
    ErrorNode(String),
    #[error("no structural equation for `{0}`: it has no covariates")]
    NoStructuralEquation(String),
    #[error("`{0}` is not a latent variable")]
    NotLatent(String),
    #[error("scaling factor must be nonzero")]
    ZeroScale,
    #[error("parameter `{0}` has no assigned value")]
    MissingParam(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("malformed model JSON: {0}")]
    Json(String),
}

/// Index of a node inside its [`PathDiagram`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Latent,
    Observed,
    Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamStatus {
    Free,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamRef {
    pub label: String,
    pub status: ParamStatus,
}

impl ParamRef {
    pub fn free(label: impl Into<String>) -> Self {
        ParamRef { label: label.into(), status: ParamStatus::Free }
    }

    pub fn fixed(label: impl Into<String>, value: f64) -> Self {
        ParamRef { label: label.into(), status: ParamStatus::Fixed(value) }
    }

    pub fn is_free(&self) -> bool {
        matches!(self.status, ParamStatus::Free)
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match self.status {
            ParamStatus::Fixed(v) => Some(v),
            ParamStatus::Free => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectedEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub param: ParamRef,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BidirectedEdge {
    pub a: NodeId,
    pub b: NodeId,
    pub param: ParamRef,
}

/// Mixed graph over latent, observed and error nodes.
///
/// The builder methods do not enforce RAM invariants; [`validate`] reports
/// them. Derived graphs (canonical forms, transformed equations) reuse this
/// type with relaxed invariants.
#[derive(Clone, Debug, Default)]
pub struct PathDiagram {
    nodes: Vec<Node>,
    variances: Vec<Option<ParamRef>>,
    directed: Vec<DirectedEdge>,
    bidirected: Vec<BidirectedEdge>,
    parents: Vec<Vec<NodeId>>,
    children: Vec<Vec<NodeId>>,
}

impl PathDiagram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>, kind: NodeKind) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { name: name.into(), kind });
        self.variances.push(None);
        self.parents.push(Vec::new());
        self.children.push(Vec::new());
        id
    }

    /// Adds a latent or observed variable together with its error node, the
    /// unit error edge and a free error variance, all with default labels.
    pub fn add_variable(&mut self, name: &str, kind: NodeKind) -> NodeId {
        let v = self.add_node(name, kind);
        let err_name = error_name(name, kind);
        let e = self.add_node(err_name.clone(), NodeKind::Error);
        self.set_variance(e, ParamRef::free(variance_label(name)));
        self.add_directed(e, v, ParamRef::fixed(coefficient_label(&err_name, name), 1.0));
        v
    }

    pub fn set_variance(&mut self, v: NodeId, param: ParamRef) {
        self.variances[v.0] = Some(param);
    }

    pub fn add_directed(&mut self, from: NodeId, to: NodeId, param: ParamRef) {
        self.parents[to.0].push(from);
        self.children[from.0].push(to);
        self.directed.push(DirectedEdge { from, to, param });
    }

    pub fn add_bidirected(&mut self, a: NodeId, b: NodeId, param: ParamRef) {
        self.bidirected.push(BidirectedEdge { a, b, param });
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn node(&self, v: NodeId) -> &Node {
        &self.nodes[v.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn name(&self, v: NodeId) -> &str {
        &self.nodes[v.0].name
    }

    pub fn kind(&self, v: NodeId) -> NodeKind {
        self.nodes[v.0].kind
    }

    pub fn is_observed(&self, v: NodeId) -> bool {
        self.kind(v) == NodeKind::Observed
    }

    pub fn is_latent(&self, v: NodeId) -> bool {
        self.kind(v) == NodeKind::Latent
    }

    pub fn is_error(&self, v: NodeId) -> bool {
        self.kind(v) == NodeKind::Error
    }

    /// Looks a node up by name. Latent and observed nodes win over error
    /// nodes when names collide.
    pub fn find(&self, name: &str) -> Option<NodeId> {
        let mut fallback = None;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.name == name {
                if n.kind != NodeKind::Error {
                    return Some(NodeId(i));
                }
                fallback.get_or_insert(NodeId(i));
            }
        }
        fallback
    }

    pub fn require(&self, name: &str) -> Result<NodeId, ModelError> {
        self.find(name).ok_or_else(|| ModelError::UnknownNode(name.to_string()))
    }

    pub fn variance(&self, v: NodeId) -> Option<&ParamRef> {
        self.variances[v.0].as_ref()
    }

    pub fn directed_edges(&self) -> &[DirectedEdge] {
        &self.directed
    }

    pub fn bidirected_edges(&self) -> &[BidirectedEdge] {
        &self.bidirected
    }

    pub fn parents(&self, v: NodeId) -> &[NodeId] {
        &self.parents[v.0]
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v.0]
    }

    pub fn edge(&self, from: NodeId, to: NodeId) -> Option<&DirectedEdge> {
        self.directed.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn bidirected_between(&self, a: NodeId, b: NodeId) -> Option<&BidirectedEdge> {
        self.bidirected
            .iter()
            .find(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
    }

    /// The error parent of a latent or observed node, if any.
    pub fn error_of(&self, v: NodeId) -> Option<NodeId> {
        self.parents(v).iter().copied().find(|&p| self.is_error(p))
    }

    /// Kahn ordering of the directed part, or `None` when it has a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = (0..n).map(|i| self.parents[i].len()).collect();
        let mut queue: Vec<NodeId> = (0..n).filter(|&i| indeg[i] == 0).map(NodeId).collect();
        queue.reverse();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop() {
            order.push(v);
            for &c in self.children(v).iter().rev() {
                indeg[c.0] -= 1;
                if indeg[c.0] == 0 {
                    queue.push(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Rebuilds the diagram keeping only directed edges accepted by `keep`.
    pub fn retain_directed(&self, mut keep: impl FnMut(&DirectedEdge) -> bool) -> PathDiagram {
        let mut g = self.skeleton();
        for e in &self.directed {
            if keep(e) {
                g.add_directed(e.from, e.to, e.param.clone());
            }
        }
        for e in &self.bidirected {
            g.add_bidirected(e.a, e.b, e.param.clone());
        }
        g
    }

    /// Same nodes and variances, no edges.
    pub fn skeleton(&self) -> PathDiagram {
        let n = self.nodes.len();
        PathDiagram {
            nodes: self.nodes.clone(),
            variances: self.variances.clone(),
            directed: Vec::new(),
            bidirected: Vec::new(),
            parents: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
        }
    }

    /// Every parameter referenced by the diagram, in a stable order:
    /// directed edges, bidirected edges, then variances.
    pub fn params(&self) -> Vec<&ParamRef> {
        let mut out: Vec<&ParamRef> = self.directed.iter().map(|e| &e.param).collect();
        out.extend(self.bidirected.iter().map(|e| &e.param));
        out.extend(self.variances.iter().flatten());
        out
    }

    pub fn names(&self, ids: impl IntoIterator<Item = NodeId>) -> Vec<String> {
        ids.into_iter().map(|v| self.name(v).to_string()).collect()
    }
}

/// Default name of the error node attached to a variable.
pub fn error_name(var: &str, kind: NodeKind) -> String {
    match kind {
        NodeKind::Latent => format!("ζ_{var}"),
        _ => format!("ε_{var}"),
    }
}

pub fn coefficient_label(from: &str, to: &str) -> String {
    format!("b_{from}_{to}")
}

pub fn covariance_label(a: &str, b: &str) -> String {
    format!("phi_{a}_{b}")
}

pub fn variance_label(var: &str) -> String {
    format!("phi_{var}_{var}")
}

/// A path diagram together with the scaling indicator of every latent.
#[derive(Clone, Debug, Default)]
pub struct SemModel {
    pub diagram: PathDiagram,
    pub scaling: BTreeMap<NodeId, NodeId>,
}

impl SemModel {
    pub fn new(diagram: PathDiagram, scaling: BTreeMap<NodeId, NodeId>) -> Self {
        SemModel { diagram, scaling }
    }

    pub fn latents(&self) -> Vec<NodeId> {
        self.diagram.node_ids().filter(|&v| self.diagram.is_latent(v)).collect()
    }

    pub fn observed(&self) -> Vec<NodeId> {
        self.diagram.node_ids().filter(|&v| self.diagram.is_observed(v)).collect()
    }

    pub fn scaling_indicator(&self, latent: NodeId) -> Option<NodeId> {
        self.scaling.get(&latent).copied()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ModelJson::from_model(self)).expect("model JSON is always serializable")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelJson::from_model(self)).expect("model JSON is always serializable")
    }

    pub fn from_json_str(text: &str) -> Result<SemModel, ModelError> {
        let dto: ModelJson = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        dto.into_model()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Cycle,
    SelfLoop,
    DuplicateEdge,
    DuplicateName,
    DuplicateLabel,
    BidirectedNotBetweenErrors,
    ErrorStructure,
    MissingError,
    MissingVariance,
    NonFiniteValue,
    NonPositiveVariance,
    MissingScalingIndicator,
    InvalidScalingIndicator,
    SharedScalingIndicator,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn violation(kind: ViolationKind, message: String) -> Violation {
    Violation { kind, message }
}

/// Checks every RAM and scaling invariant. An empty list means the model is
/// usable by the transformation and identification routines.
pub fn validate(model: &SemModel) -> Vec<Violation> {
    use ViolationKind::*;
    let g = &model.diagram;
    let mut out = Vec::new();

    let mut seen_names: HashMap<&str, NodeId> = HashMap::new();
    for v in g.node_ids() {
        if seen_names.insert(g.name(v), v).is_some() {
            out.push(violation(DuplicateName, format!("duplicate node name `{}`", g.name(v))));
        }
    }

    let mut seen_edges = BTreeSet::new();
    for e in g.directed_edges() {
        if e.from == e.to {
            out.push(violation(SelfLoop, format!("self-loop on `{}`", g.name(e.from))));
        }
        if !seen_edges.insert((e.from, e.to)) {
            out.push(violation(
                DuplicateEdge,
                format!("duplicate edge {} -> {}", g.name(e.from), g.name(e.to)),
            ));
        }
    }
    let mut seen_bi = BTreeSet::new();
    for e in g.bidirected_edges() {
        let key = (e.a.min(e.b), e.a.max(e.b));
        if e.a == e.b {
            out.push(violation(SelfLoop, format!("bidirected self-loop on `{}`", g.name(e.a))));
        }
        if !seen_bi.insert(key) {
            out.push(violation(
                DuplicateEdge,
                format!("duplicate covariance {} <-> {}", g.name(e.a), g.name(e.b)),
            ));
        }
        if !g.is_error(e.a) || !g.is_error(e.b) {
            out.push(violation(
                BidirectedNotBetweenErrors,
                format!("covariance {} <-> {} must connect error terms", g.name(e.a), g.name(e.b)),
            ));
        }
    }

    if !g.is_acyclic() {
        out.push(violation(Cycle, "directed cycle in the path diagram".to_string()));
    }

    for v in g.node_ids() {
        match g.kind(v) {
            NodeKind::Error => {
                if !g.parents(v).is_empty() {
                    out.push(violation(
                        ErrorStructure,
                        format!("error node `{}` has parents", g.name(v)),
                    ));
                }
                let ch = g.children(v);
                if ch.len() != 1 || g.is_error(ch[0]) {
                    out.push(violation(
                        ErrorStructure,
                        format!("error node `{}` must have exactly one non-error child", g.name(v)),
                    ));
                } else if g.edge(v, ch[0]).and_then(|e| e.param.fixed_value()) != Some(1.0) {
                    out.push(violation(
                        ErrorStructure,
                        format!("error edge {} -> {} must be fixed to 1", g.name(v), g.name(ch[0])),
                    ));
                }
                match g.variance(v) {
                    None => out.push(violation(
                        MissingVariance,
                        format!("error node `{}` has no variance parameter", g.name(v)),
                    )),
                    Some(p) => {
                        if let Some(x) = p.fixed_value() {
                            if !x.is_finite() {
                                out.push(violation(
                                    NonFiniteValue,
                                    format!("variance `{}` is not finite", p.label),
                                ));
                            } else if x < 0.0 {
                                out.push(violation(
                                    NonPositiveVariance,
                                    format!("variance `{}` is negative", p.label),
                                ));
                            }
                        }
                    }
                }
            }
            _ => {
                let errs = g.parents(v).iter().filter(|&&p| g.is_error(p)).count();
                if errs != 1 {
                    out.push(violation(
                        MissingError,
                        format!("`{}` must have exactly one error parent (found {errs})", g.name(v)),
                    ));
                }
            }
        }
    }

    let mut labels: HashMap<&str, usize> = HashMap::new();
    for p in g.params() {
        *labels.entry(p.label.as_str()).or_default() += 1;
        if let Some(x) = p.fixed_value() {
            if !x.is_finite() {
                out.push(violation(NonFiniteValue, format!("fixed value of `{}` is not finite", p.label)));
            }
        }
    }
    let mut dup: Vec<&str> = labels.iter().filter(|(_, &c)| c > 1).map(|(l, _)| *l).collect();
    dup.sort_unstable();
    for l in dup {
        out.push(violation(DuplicateLabel, format!("parameter label `{l}` is used more than once")));
    }

    let mut used_indicators: HashMap<NodeId, NodeId> = HashMap::new();
    for l in model.latents() {
        let Some(s) = model.scaling_indicator(l) else {
            out.push(violation(
                MissingScalingIndicator,
                format!("latent `{}` has no scaling indicator", g.name(l)),
            ));
            continue;
        };
        if s.0 >= g.node_count() || !g.is_observed(s) {
            out.push(violation(
                InvalidScalingIndicator,
                format!("scaling indicator of `{}` must be an observed variable", g.name(l)),
            ));
            continue;
        }
        match g.edge(l, s) {
            Some(e) if e.param.fixed_value() == Some(1.0) => {}
            Some(_) => out.push(violation(
                InvalidScalingIndicator,
                format!("loading {} -> {} must be fixed to 1", g.name(l), g.name(s)),
            )),
            None => out.push(violation(
                InvalidScalingIndicator,
                format!("scaling indicator `{}` is not a child of `{}`", g.name(s), g.name(l)),
            )),
        }
        let latent_parents = g.parents(s).iter().filter(|&&p| g.is_latent(p)).count();
        if latent_parents != 1 {
            out.push(violation(
                SharedScalingIndicator,
                format!("scaling indicator `{}` must have exactly one latent parent", g.name(s)),
            ));
        }
        if let Some(other) = used_indicators.insert(s, l) {
            out.push(violation(
                SharedScalingIndicator,
                format!(
                    "`{}` is the scaling indicator of both `{}` and `{}`",
                    g.name(s),
                    g.name(other),
                    g.name(l)
                ),
            ));
        }
    }
    for (&l, _) in model.scaling.iter() {
        if l.0 >= g.node_count() || !g.is_latent(l) {
            out.push(violation(
                InvalidScalingIndicator,
                "scaling map entry for a non-latent node".to_string(),
            ));
        }
    }
    out
}

/// One structural equation: `dependent` regressed on its non-error parents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquationSpec {
    pub dependent: NodeId,
    pub covariates: Vec<NodeId>,
    /// Covariates whose coefficients are sought.
    pub targets: Vec<NodeId>,
}

impl EquationSpec {
    pub fn with_targets(&self, targets: Vec<NodeId>) -> EquationSpec {
        EquationSpec { dependent: self.dependent, covariates: self.covariates.clone(), targets }
    }
}

/// The equation of `v`; targets default to every free covariate coefficient.
pub fn equation_of(model: &SemModel, v: NodeId) -> Result<EquationSpec, ModelError> {
    let g = &model.diagram;
    if v.0 >= g.node_count() {
        return Err(ModelError::UnknownNode(format!("#{}", v.0)));
    }
    if g.is_error(v) {
        return Err(ModelError::ErrorNode(g.name(v).to_string()));
    }
    let covariates: Vec<NodeId> = g.parents(v).iter().copied().filter(|&p| !g.is_error(p)).collect();
    if covariates.is_empty() {
        return Err(ModelError::NoStructuralEquation(g.name(v).to_string()));
    }
    let targets = covariates
        .iter()
        .copied()
        .filter(|&c| g.edge(c, v).is_some_and(|e| e.param.is_free()))
        .collect();
    Ok(EquationSpec { dependent: v, covariates, targets })
}

/// Values for model parameters keyed by label. Labels absent from the map
/// fall back to their fixed value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamAssignment {
    values: BTreeMap<String, f64>,
}

impl ParamAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, value: f64) {
        self.values.insert(label.into(), value);
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.values.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value_of(&self, param: &ParamRef) -> Result<f64, ModelError> {
        if let Some(v) = self.values.get(&param.label) {
            return Ok(*v);
        }
        param
            .fixed_value()
            .ok_or_else(|| ModelError::MissingParam(param.label.clone()))
    }

    /// Errors with the first free parameter of the diagram lacking a value.
    pub fn check_complete(&self, g: &PathDiagram) -> Result<(), ModelError> {
        for p in g.params() {
            self.value_of(p)?;
        }
        Ok(())
    }
}

/// Rescales variable `l` by `alpha`: incoming coefficients by 1/alpha,
/// outgoing by alpha, covariances of its error by 1/alpha and its error
/// variance by 1/alpha². The implied covariance among all other variables
/// is unchanged.
pub fn rescale_latent(
    model: &SemModel,
    params: &ParamAssignment,
    l: NodeId,
    alpha: f64,
) -> Result<ParamAssignment, ModelError> {
    let g = &model.diagram;
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(ModelError::ZeroScale);
    }
    if l.0 >= g.node_count() || !g.is_latent(l) {
        return Err(ModelError::NotLatent(
            if l.0 < g.node_count() { g.name(l).to_string() } else { format!("#{}", l.0) },
        ));
    }
    params.check_complete(g)?;
    let mut out = params.clone();
    let err = g.error_of(l);
    for e in g.directed_edges() {
        if e.to == l && Some(e.from) != err {
            out.insert(e.param.label.clone(), params.value_of(&e.param)? / alpha);
        } else if e.from == l {
            out.insert(e.param.label.clone(), params.value_of(&e.param)? * alpha);
        }
    }
    if let Some(err) = err {
        for e in g.bidirected_edges() {
            if e.a == err || e.b == err {
                out.insert(e.param.label.clone(), params.value_of(&e.param)? / alpha);
            }
        }
        if let Some(p) = g.variance(err) {
            out.insert(p.label.clone(), params.value_of(p)? / (alpha * alpha));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON interchange

#[derive(Serialize, Deserialize)]
struct ModelJson {
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
    scaling: BTreeMap<String, String>,
    params: BTreeMap<String, ParamJson>,
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    name: String,
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variance: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EdgeType {
    Directed,
    Bidirected,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    #[serde(rename = "type")]
    kind: EdgeType,
    from: String,
    to: String,
    param: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum ParamJson {
    Free,
    Fixed { value: f64 },
}

impl ModelJson {
    fn from_model(model: &SemModel) -> ModelJson {
        let g = &model.diagram;
        let mut params = BTreeMap::new();
        let mut record = |p: &ParamRef| {
            let j = match p.status {
                ParamStatus::Free => ParamJson::Free,
                ParamStatus::Fixed(value) => ParamJson::Fixed { value },
            };
            params.insert(p.label.clone(), j);
        };
        let nodes = g
            .node_ids()
            .map(|v| {
                if let Some(p) = g.variance(v) {
                    record(p);
                }
                NodeJson {
                    name: g.name(v).to_string(),
                    kind: g.kind(v),
                    variance: g.variance(v).map(|p| p.label.clone()),
                }
            })
            .collect();
        let mut edges = Vec::new();
        for e in g.directed_edges() {
            record(&e.param);
            edges.push(EdgeJson {
                kind: EdgeType::Directed,
                from: g.name(e.from).to_string(),
                to: g.name(e.to).to_string(),
                param: e.param.label.clone(),
            });
        }
        for e in g.bidirected_edges() {
            record(&e.param);
            edges.push(EdgeJson {
                kind: EdgeType::Bidirected,
                from: g.name(e.a).to_string(),
                to: g.name(e.b).to_string(),
                param: e.param.label.clone(),
            });
        }
        let scaling = model
            .scaling
            .iter()
            .map(|(&l, &s)| (g.name(l).to_string(), g.name(s).to_string()))
            .collect();
        ModelJson { nodes, edges, scaling, params }
    }

    fn into_model(self) -> Result<SemModel, ModelError> {
        let mut g = PathDiagram::new();
        let mut by_name: HashMap<String, NodeId> = HashMap::new();
        let param = |label: &str, params: &BTreeMap<String, ParamJson>| -> Result<ParamRef, ModelError> {
            match params.get(label) {
                Some(ParamJson::Free) => Ok(ParamRef::free(label)),
                Some(ParamJson::Fixed { value }) => Ok(ParamRef::fixed(label, *value)),
                None => Err(ModelError::Json(format!("parameter `{label}` is not declared in params"))),
            }
        };
        for n in &self.nodes {
            let id = g.add_node(n.name.clone(), n.kind);
            if by_name.insert(n.name.clone(), id).is_some() {
                return Err(ModelError::Json(format!("duplicate node name `{}`", n.name)));
            }
            if let Some(v) = &n.variance {
                g.set_variance(id, param(v, &self.params)?);
            }
        }
        let lookup = |name: &str| {
            by_name.get(name).copied().ok_or_else(|| ModelError::UnknownNode(name.to_string()))
        };
        for e in &self.edges {
            let (from, to) = (lookup(&e.from)?, lookup(&e.to)?);
            let p = param(&e.param, &self.params)?;
            match e.kind {
                EdgeType::Directed => g.add_directed(from, to, p),
                EdgeType::Bidirected => g.add_bidirected(from, to, p),
            }
        }
        let mut scaling = BTreeMap::new();
        for (l, s) in &self.scaling {
            scaling.insert(lookup(l)?, lookup(s)?);
        }
        Ok(SemModel { diagram: g, scaling })
    }
}
