//! Mixed-graph algorithms over path diagrams: canonical form, treks, trek
//! separation, d-separation and edge surgery.
//!
//! Bidirected edges are always eliminated through [`canonicalize`] before
//! trek or flow computations, so everything below reasons about the
//! directed acyclic part only. Auxiliary nodes created by canonicalization
//! are appended after the original nodes, which keeps original [`NodeId`]s
//! valid in the canonical graph.

mod flow;

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

pub use flow::FlowNetwork;

use crate::model::{NodeId, NodeKind, ParamRef, PathDiagram};

/// Default upper bound on the number of treks an enumeration may produce.
pub const DEFAULT_TREK_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph has bidirected edges; canonicalize it first")]
    NotCanonical,
    #[error("graph has a directed cycle")]
    Cyclic,
    #[error("trek enumeration exceeded the cap of {0}")]
    TrekCap(usize),
    #[error("`{0}` is not a parent of `{1}`")]
    NotParent(String, String),
    #[error("query sets overlap on `{0}`")]
    Overlap(String),
}

/// Replaces every bidirected edge `a <-> b` by a fresh node with unit
/// arrows into `a` and `b`; the new node carries the covariance parameter
/// as its variance. Original nodes and edges are untouched.
pub fn canonicalize(g: &PathDiagram) -> PathDiagram {
    let mut c = g.skeleton();
    for e in g.directed_edges() {
        c.add_directed(e.from, e.to, e.param.clone());
    }
    for e in g.bidirected_edges() {
        let name = format!("{}↔{}", g.name(e.a), g.name(e.b));
        let aux = c.add_node(name.clone(), NodeKind::Error);
        c.set_variance(aux, e.param.clone());
        c.add_directed(aux, e.a, ParamRef::fixed(format!("b_{name}_{}", g.name(e.a)), 1.0));
        c.add_directed(aux, e.b, ParamRef::fixed(format!("b_{name}_{}", g.name(e.b)), 1.0));
    }
    c
}

fn closure(g: &PathDiagram, seeds: impl IntoIterator<Item = NodeId>, up: bool) -> Vec<bool> {
    let mut mark = vec![false; g.node_count()];
    let mut stack: Vec<NodeId> = Vec::new();
    for s in seeds {
        if !mark[s.0] {
            mark[s.0] = true;
            stack.push(s);
        }
    }
    while let Some(v) = stack.pop() {
        let next = if up { g.parents(v) } else { g.children(v) };
        for &w in next {
            if !mark[w.0] {
                mark[w.0] = true;
                stack.push(w);
            }
        }
    }
    mark
}

fn mask_to_set(mask: &[bool]) -> BTreeSet<NodeId> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| NodeId(i)).collect()
}

pub fn ancestors(g: &PathDiagram, v: NodeId) -> BTreeSet<NodeId> {
    mask_to_set(&closure(g, [v], true))
}

pub fn descendants(g: &PathDiagram, v: NodeId) -> BTreeSet<NodeId> {
    mask_to_set(&closure(g, [v], false))
}

pub fn ancestors_of_set(g: &PathDiagram, vs: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    mask_to_set(&closure(g, vs.iter().copied(), true))
}

pub fn descendants_of_set(g: &PathDiagram, vs: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    mask_to_set(&closure(g, vs.iter().copied(), false))
}

/// A collider-free path, stored as its node sequence from source to target.
/// `nodes[..=top]` read backwards is the left side (a directed path from
/// the top to the source) and `nodes[top..]` is the right side.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trek {
    pub nodes: Vec<NodeId>,
    pub top: usize,
}

impl Trek {
    pub fn top_node(&self) -> NodeId {
        self.nodes[self.top]
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn target(&self) -> NodeId {
        *self.nodes.last().expect("treks are nonempty")
    }

    /// Left side, from the source up to and including the top.
    pub fn left(&self) -> &[NodeId] {
        &self.nodes[..=self.top]
    }

    /// Right side, from the top down to the target.
    pub fn right(&self) -> &[NodeId] {
        &self.nodes[self.top..]
    }

    /// Directed edges `(from, to)` traversed by the trek.
    pub fn arrows(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.nodes.len().saturating_sub(1)).map(move |i| {
            if i < self.top {
                (self.nodes[i + 1], self.nodes[i])
            } else {
                (self.nodes[i], self.nodes[i + 1])
            }
        })
    }
}

fn directed_paths(
    g: &PathDiagram,
    from: NodeId,
    to: NodeId,
    allowed: &[bool],
    cap: usize,
    out: &mut Vec<Vec<NodeId>>,
) -> Result<(), GraphError> {
    fn walk(
        g: &PathDiagram,
        v: NodeId,
        to: NodeId,
        allowed: &[bool],
        cap: usize,
        path: &mut Vec<NodeId>,
        out: &mut Vec<Vec<NodeId>>,
    ) -> Result<(), GraphError> {
        path.push(v);
        if v == to {
            if out.len() >= cap {
                return Err(GraphError::TrekCap(cap));
            }
            out.push(path.clone());
        } else {
            for &c in g.children(v) {
                if allowed[c.0] {
                    walk(g, c, to, allowed, cap, path, out)?;
                }
            }
        }
        path.pop();
        Ok(())
    }
    let mut path = Vec::new();
    walk(g, from, to, allowed, cap, &mut path, out)
}

/// Every trek from `a` to `b`, each exactly once, including the trivial
/// trek `[a]` when `a == b`.
pub fn enumerate_treks(g: &PathDiagram, a: NodeId, b: NodeId) -> Result<Vec<Trek>, GraphError> {
    enumerate_treks_capped(g, a, b, DEFAULT_TREK_CAP)
}

pub fn enumerate_treks_capped(
    g: &PathDiagram,
    a: NodeId,
    b: NodeId,
    cap: usize,
) -> Result<Vec<Trek>, GraphError> {
    if !g.bidirected_edges().is_empty() {
        return Err(GraphError::NotCanonical);
    }
    if !g.is_acyclic() {
        return Err(GraphError::Cyclic);
    }
    let anc_a = closure(g, [a], true);
    let anc_b = closure(g, [b], true);
    let mut treks = Vec::new();
    for t in g.node_ids() {
        if !(anc_a[t.0] && anc_b[t.0]) {
            continue;
        }
        let mut lefts = Vec::new();
        directed_paths(g, t, a, &anc_a, cap, &mut lefts)?;
        let mut rights = Vec::new();
        directed_paths(g, t, b, &anc_b, cap, &mut rights)?;
        if treks.len() + lefts.len() * rights.len() > cap {
            return Err(GraphError::TrekCap(cap));
        }
        for l in &lefts {
            for r in &rights {
                let mut nodes: Vec<NodeId> = l.iter().rev().copied().collect();
                nodes.extend_from_slice(&r[1..]);
                treks.push(Trek { nodes, top: l.len() - 1 });
            }
        }
    }
    Ok(treks)
}

/// Whether some trek connects a node of `a` with a node of `b`.
/// Bidirected edges count as latent common causes.
pub fn has_trek(g: &PathDiagram, a: &BTreeSet<NodeId>, b: &BTreeSet<NodeId>) -> bool {
    let anc_a = closure(g, a.iter().copied(), true);
    let anc_b = closure(g, b.iter().copied(), true);
    if anc_a.iter().zip(&anc_b).any(|(&x, &y)| x && y) {
        return true;
    }
    g.bidirected_edges()
        .iter()
        .any(|e| (anc_a[e.a.0] && anc_b[e.b.0]) || (anc_a[e.b.0] && anc_b[e.a.0]))
}

/// Drops the arrows `x -> y` for every `x` in `xs`.
pub fn remove_coefficient_edges(
    g: &PathDiagram,
    xs: &BTreeSet<NodeId>,
    y: NodeId,
) -> Result<PathDiagram, GraphError> {
    for &x in xs {
        if g.edge(x, y).is_none() {
            return Err(GraphError::NotParent(g.name(x).to_string(), g.name(y).to_string()));
        }
    }
    Ok(g.retain_directed(|e| !(e.to == y && xs.contains(&e.from))))
}

/// A pair `(L, R)` blocking every trek between two sets, either with a node
/// of `L` on the trek's left side or a node of `R` on its right side.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TSeparator {
    pub left: BTreeSet<NodeId>,
    pub right: BTreeSet<NodeId>,
}

impl TSeparator {
    pub fn size(&self) -> usize {
        self.left.len() + self.right.len()
    }

    /// Whether this pair blocks `trek`.
    pub fn blocks(&self, trek: &Trek) -> bool {
        trek.left().iter().any(|v| self.left.contains(v)) || trek.right().iter().any(|v| self.right.contains(v))
    }
}

/// Minimum trek separator between `a` and `b`.
///
/// Solved as a minimum vertex cut in a doubled network: a left copy of the
/// graph with reversed arrows (walking up the left side of a trek), a right
/// copy with forward arrows, and a crossover at every node standing for a
/// potential top. Each copy of each node has unit capacity. Node ids in the
/// witness refer to the canonical form of `g` when it has bidirected edges.
pub fn min_t_separator(g: &PathDiagram, a: &BTreeSet<NodeId>, b: &BTreeSet<NodeId>) -> (usize, TSeparator) {
    let canonical;
    let g = if g.bidirected_edges().is_empty() {
        g
    } else {
        canonical = canonicalize(g);
        &canonical
    };
    let n = g.node_count();
    let left_in = |v: usize| 4 * v;
    let left_out = |v: usize| 4 * v + 1;
    let right_in = |v: usize| 4 * v + 2;
    let right_out = |v: usize| 4 * v + 3;
    let (source, sink) = (4 * n, 4 * n + 1);
    let inf = (2 * n + 1) as u32;

    let mut net = FlowNetwork::new(4 * n + 2);
    for v in 0..n {
        net.add_arc(left_in(v), left_out(v), 1);
        net.add_arc(right_in(v), right_out(v), 1);
        net.add_arc(left_out(v), right_in(v), inf);
    }
    for e in g.directed_edges() {
        net.add_arc(left_out(e.to.0), left_in(e.from.0), inf);
        net.add_arc(right_out(e.from.0), right_in(e.to.0), inf);
    }
    for v in a {
        net.add_arc(source, left_in(v.0), inf);
    }
    for v in b {
        net.add_arc(right_out(v.0), sink, inf);
    }
    let size = net.max_flow(source, sink) as usize;
    let reach = net.residual_reachable(source);
    let mut sep = TSeparator::default();
    for v in 0..n {
        if reach[left_in(v)] && !reach[left_out(v)] {
            sep.left.insert(NodeId(v));
        }
        if reach[right_in(v)] && !reach[right_out(v)] {
            sep.right.insert(NodeId(v));
        }
    }
    debug_assert_eq!(sep.size(), size);
    (size, sep)
}

/// d-separation of `a` and `b` given `w`, by reachability over the walks
/// left open by `w` (bidirected edges become latent common causes).
pub fn d_separated(
    g: &PathDiagram,
    a: &BTreeSet<NodeId>,
    b: &BTreeSet<NodeId>,
    w: &BTreeSet<NodeId>,
) -> Result<bool, GraphError> {
    for v in a {
        if b.contains(v) || w.contains(v) {
            return Err(GraphError::Overlap(g.name(*v).to_string()));
        }
    }
    if let Some(v) = b.iter().find(|v| w.contains(v)) {
        return Err(GraphError::Overlap(g.name(*v).to_string()));
    }
    let canonical;
    let g = if g.bidirected_edges().is_empty() {
        g
    } else {
        canonical = canonicalize(g);
        &canonical
    };
    let reached = d_connected_nodes(g, a, w);
    Ok(!b.iter().any(|v| reached[v.0]))
}

/// Nodes reachable from `a` along walks that are active given `w`.
fn d_connected_nodes(g: &PathDiagram, a: &BTreeSet<NodeId>, w: &BTreeSet<NodeId>) -> Vec<bool> {
    #[derive(Clone, Copy)]
    enum Dir {
        // arrived from a child, moving against the arrow
        Up,
        // arrived from a parent, moving with the arrow
        Down,
    }
    let n = g.node_count();
    let observed = |v: NodeId| w.contains(&v);
    let anc_w = closure(g, w.iter().copied(), true);
    let mut seen_up = vec![false; n];
    let mut seen_down = vec![false; n];
    let mut reached = vec![false; n];
    let mut queue: VecDeque<(NodeId, Dir)> = a.iter().map(|&v| (v, Dir::Up)).collect();
    while let Some((v, dir)) = queue.pop_front() {
        let seen = match dir {
            Dir::Up => &mut seen_up,
            Dir::Down => &mut seen_down,
        };
        if seen[v.0] {
            continue;
        }
        seen[v.0] = true;
        if !observed(v) {
            reached[v.0] = true;
        }
        match dir {
            Dir::Up => {
                if !observed(v) {
                    queue.extend(g.parents(v).iter().map(|&p| (p, Dir::Up)));
                    queue.extend(g.children(v).iter().map(|&c| (c, Dir::Down)));
                }
            }
            Dir::Down => {
                if !observed(v) {
                    queue.extend(g.children(v).iter().map(|&c| (c, Dir::Down)));
                }
                if anc_w[v.0] {
                    queue.extend(g.parents(v).iter().map(|&p| (p, Dir::Up)));
                }
            }
        }
    }
    reached
}

/// Shortest undirected hop distance from `v` to any node in `targets`,
/// ignoring edge direction and treating bidirected edges as links.
pub fn hop_distance(g: &PathDiagram, v: NodeId, targets: &BTreeSet<NodeId>) -> Option<usize> {
    let n = g.node_count();
    let mut adj = vec![Vec::new(); n];
    for e in g.directed_edges() {
        adj[e.from.0].push(e.to);
        adj[e.to.0].push(e.from);
    }
    for e in g.bidirected_edges() {
        adj[e.a.0].push(e.b);
        adj[e.b.0].push(e.a);
    }
    let mut dist = vec![usize::MAX; n];
    dist[v.0] = 0;
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        if targets.contains(&u) {
            return Some(dist[u.0]);
        }
        for &w in &adj[u.0] {
            if dist[w.0] == usize::MAX {
                dist[w.0] = dist[u.0] + 1;
                queue.push_back(w);
            }
        }
    }
    None
}

/// Options for [`to_dot`].
#[derive(Clone, Copy, Debug, Default)]
pub struct DotOptions {
    /// Draw every error node. When false only error nodes with arrows into
    /// something other than their own variable are drawn.
    pub all_errors: bool,
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering: latents as ellipses, observed variables as boxes.
pub fn to_dot(g: &PathDiagram, opts: DotOptions) -> String {
    let own_error = |e: NodeId| {
        g.children(e).len() == 1 && g.bidirected_edges().iter().all(|b| b.a != e && b.b != e)
    };
    let shown = |v: NodeId| !g.is_error(v) || opts.all_errors || !own_error(v);
    let mut out = String::from("digraph sem {\n");
    for v in g.node_ids().filter(|&v| shown(v)) {
        let shape = match g.kind(v) {
            NodeKind::Latent => "ellipse",
            NodeKind::Observed => "box",
            NodeKind::Error => "plaintext",
        };
        let _ = writeln!(out, "  {} [shape={shape}];", quote(g.name(v)));
    }
    for e in g.directed_edges() {
        if shown(e.from) && shown(e.to) {
            let _ = writeln!(
                out,
                "  {} -> {} [label={}];",
                quote(g.name(e.from)),
                quote(g.name(e.to)),
                quote(&e.param.label)
            );
        }
    }
    for e in g.bidirected_edges() {
        if shown(e.a) && shown(e.b) {
            let _ = writeln!(
                out,
                "  {} -> {} [dir=both, style=dashed, label={}];",
                quote(g.name(e.a)),
                quote(g.name(e.b)),
                quote(&e.param.label)
            );
        }
    }
    out.push_str("}\n");
    out
}
