#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use miivgraph::model::{NodeId, NodeKind, ParamAssignment, ParamRef, PathDiagram, SemModel};
use miivgraph::parser::parse_model;
use miivgraph::random::{random_model, ModelShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn load(name: &str) -> SemModel {
    let text = std::fs::read_to_string(data_path(name)).unwrap();
    parse_model(&text).unwrap_or_else(|d| panic!("{name}: {d:?}"))
}

pub fn id(m: &SemModel, name: &str) -> NodeId {
    m.diagram.find(name).unwrap_or_else(|| panic!("no node {name}"))
}

pub fn ids(m: &SemModel, names: &[&str]) -> Vec<NodeId> {
    names.iter().map(|n| id(m, n)).collect()
}

pub fn set(v: &[NodeId]) -> BTreeSet<NodeId> {
    v.iter().copied().collect()
}

pub fn model_from_seed(seed: u64, shape: &ModelShape) -> SemModel {
    random_model(&mut ChaCha8Rng::seed_from_u64(seed), shape)
}

/// Directed acyclic graph of plain observed nodes, no error terms.
pub fn random_dag(seed: u64, n: usize, p: f64) -> PathDiagram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = PathDiagram::new();
    let v: Vec<NodeId> = (0..n).map(|i| g.add_node(format!("v{i}"), NodeKind::Observed)).collect();
    for j in 0..n {
        for i in 0..j {
            if rng.gen_bool(p) {
                g.add_directed(v[i], v[j], ParamRef::free(format!("b{i}_{j}")));
            }
        }
    }
    g
}

/// Parameter values as a lookup, with fixed values filled in.
pub fn value(p: &ParamAssignment, r: &ParamRef) -> f64 {
    p.value_of(r).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
