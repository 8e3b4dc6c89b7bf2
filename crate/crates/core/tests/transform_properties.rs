mod common;

use std::collections::{BTreeMap, BTreeSet};

use miivgraph::graph::{to_dot, DotOptions};
use miivgraph::identify::search_instruments;
use miivgraph::model::{equation_of, EquationSpec, NodeId, SemModel};
use miivgraph::numeric::{implied_covariance, sample_generic_params, simulate, tsls_estimate, ErrorDistribution};
use miivgraph::random::ModelShape;
use miivgraph::transform::{l2o, partial_l2o, TransformError, TransformOutcome};
use nalgebra::DVector;
use proptest::prelude::*;

use common::*;

fn equations(m: &SemModel) -> Vec<EquationSpec> {
    let g = &m.diagram;
    g.node_ids()
        .filter(|&v| !g.is_error(v))
        .filter_map(|v| equation_of(m, v).ok())
        .filter(|eq| !eq.targets.is_empty())
        .collect()
}

/// How many separate routes put a coefficient on each observed regressor:
/// the arrow already present plus one per substituted latent whose
/// scaling indicator or its co-parents involve the node.
fn contributions(m: &SemModel, eq: &EquationSpec, dep: NodeId) -> BTreeMap<NodeId, usize> {
    let g = &m.diagram;
    let mut count: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut written: Vec<NodeId> = Vec::new();
    if dep != eq.dependent {
        for &p in g.parents(dep) {
            if p != eq.dependent && !g.is_error(p) {
                written.push(p);
            }
        }
    }
    written.extend(eq.covariates.iter().copied());
    let kept: BTreeSet<NodeId> = written.iter().copied().filter(|&u| g.is_latent(u) && !eq.targets.contains(&u)).collect();
    let mut stack: Vec<NodeId> = Vec::new();
    for &u in &written {
        if g.is_latent(u) && !kept.contains(&u) {
            stack.push(u);
        } else {
            *count.entry(u).or_default() += 1;
        }
    }
    while let Some(x) = stack.pop() {
        let s = m.scaling_indicator(x).unwrap();
        *count.entry(s).or_default() += 1;
        for &p in g.parents(s) {
            if p == x || g.is_error(p) {
                continue;
            }
            if g.is_latent(p) && !kept.contains(&p) {
                stack.push(p);
            } else {
                *count.entry(p).or_default() += 1;
            }
        }
    }
    count.retain(|&u, _| g.is_observed(u));
    count
}

fn check_locality(m: &SemModel, out: &TransformOutcome) {
    let dep = out.regression.dependent;
    let before: Vec<_> = m.diagram.directed_edges().iter().filter(|e| e.to != dep).collect();
    let after: Vec<_> = out.diagram.directed_edges().iter().filter(|e| e.to != dep).collect();
    assert_eq!(before, after);
    assert_eq!(m.diagram.bidirected_edges(), out.diagram.bidirected_edges());
    assert_eq!(m.diagram.node_count(), out.diagram.node_count());
}

#[test]
fn latent_to_observed_dot_output() {
    let m = load("latent_to_observed.lav");
    let out = l2o(&m, &equation_of(&m, id(&m, "y3")).unwrap()).unwrap();
    let dot = to_dot(&out.diagram, DotOptions::default());
    for edge in ["\"y2\" -> \"y3\"", "\"y1\" -> \"y3\"", "\"ε_y2\" -> \"y3\""] {
        assert!(dot.contains(edge), "{edge} missing:\n{dot}");
    }
    assert!(!dot.contains("\"l1\" -> \"y3\""));
}

#[test]
fn latent_to_latent_adds_indicator_arrow() {
    let m = load("latent_to_latent.lav");
    let out = l2o(&m, &equation_of(&m, id(&m, "l2")).unwrap()).unwrap();
    let dot = to_dot(&out.diagram, DotOptions::default());
    assert!(dot.contains("\"y1\" -> \"y2\""), "{dot}");
    let full = to_dot(&out.diagram, DotOptions { all_errors: true });
    assert!(full.contains("\"ε_y2\"") && full.contains("\"ζ_l2\""));
}

#[test]
fn observed_to_latent_rehomes_on_indicator() {
    let m = load("observed_to_latent.lav");
    let out = l2o(&m, &equation_of(&m, id(&m, "l1")).unwrap()).unwrap();
    assert_eq!(out.regression.dependent, id(&m, "y4"));
    assert!(out.diagram.edge(id(&m, "y1"), id(&m, "y4")).is_some());
    assert!(out.composite_nodes().contains(&id(&m, "ζ_l1")));
}

#[test]
fn schooling_equation_aliases_two_loadings() {
    let m = load("schooling_aliasing.lav");
    let out = l2o(&m, &equation_of(&m, id(&m, "y4")).unwrap()).unwrap();
    let y3 = out.provenance_of(id(&m, "y3")).unwrap();
    assert!(y3.is_aliased());
    assert_eq!(y3.combination.to_string(), "λ14+λ34");
    let estimable: Vec<&str> = out.individually_estimable().iter().map(|p| p.label.as_str()).collect();
    assert_eq!(estimable, ["λ24"]);
}

#[test]
fn partial_transform_argument_checks() {
    let m = load("correlated_indicator_errors.lav");
    let y3 = id(&m, "y3");
    let eq = equation_of(&m, y3).unwrap();
    let l1 = id(&m, "l1");
    let l2 = id(&m, "l2");
    assert!(matches!(partial_l2o(&m, &eq, &set(&[l1])), Err(TransformError::KeepOverlapsTargets(_))));
    assert!(matches!(partial_l2o(&m, &eq, &set(&[id(&m, "y1")])), Err(TransformError::KeepNotLatentCovariate(_))));
    assert!(matches!(partial_l2o(&m, &eq.with_targets(vec![]), &set(&[l1, l2])), Err(TransformError::NothingToEstimate)));
    let out = partial_l2o(&m, &eq.with_targets(vec![l2]), &set(&[l1])).unwrap();
    assert_eq!(out.regression.regressors, vec![id(&m, "y4")]);
    assert!(out.composite_nodes().contains(&l1));
}

#[test]
fn instrumented_regression_recovers_combinations_from_data() {
    let m = load("cross_loading.lav");
    let p = sample_generic_params(&m, 11);
    let out = l2o(&m, &equation_of(&m, id(&m, "y3")).unwrap()).unwrap();
    let sets = search_instruments(&m, &out, 1).unwrap();
    let data = simulate(&m, &p, 40_000, 5, ErrorDistribution::Uniform).unwrap();
    let g = &m.diagram;
    let fit = tsls_estimate(
        &data,
        g.name(out.regression.dependent),
        &g.names(out.regression.regressors.iter().copied()),
        &g.names(sets[0].iter().copied()),
        &[],
    )
    .unwrap();
    for prov in &out.provenance {
        let name = g.name(prov.source);
        let truth = prov.combination.eval(&p).unwrap();
        let z = (fit.coefficients[name] - truth) / fit.standard_errors[name];
        assert!(z.abs() < 4.0, "{name}: estimate {} truth {truth}", fit.coefficients[name]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn transform_is_local_to_the_equation(seed in any::<u64>()) {
        let m = model_from_seed(seed, &ModelShape { cov_prob: 0.15, ..Default::default() });
        for eq in equations(&m) {
            if let Ok(out) = l2o(&m, &eq) {
                check_locality(&m, &out);
            }
        }
    }

    #[test]
    fn observed_equations_are_unchanged(seed in any::<u64>()) {
        let m = model_from_seed(seed, &ModelShape::default());
        let g = &m.diagram;
        for eq in equations(&m) {
            if g.is_latent(eq.dependent) || eq.covariates.iter().any(|&c| g.is_latent(c)) {
                continue;
            }
            let out = l2o(&m, &eq).unwrap();
            prop_assert_eq!(out.diagram.directed_edges(), g.directed_edges());
            for prov in &out.provenance {
                let e = g.edge(prov.source, eq.dependent).unwrap();
                prop_assert_eq!(&prov.param, &e.param);
                prop_assert_eq!(prov.combination.to_string(), e.param.label.clone());
            }
        }
    }

    #[test]
    fn aliasing_flags_exactly_the_collisions(seed in any::<u64>()) {
        let m = model_from_seed(seed, &ModelShape { edge_prob: 0.4, ..Default::default() });
        for eq in equations(&m) {
            let Ok(out) = l2o(&m, &eq) else { continue };
            let counts = contributions(&m, &eq, out.regression.dependent);
            for prov in &out.provenance {
                let n = counts.get(&prov.source).copied().unwrap_or(0);
                prop_assert_eq!(prov.is_aliased(), n >= 2, "{} has {} routes, combination {}",
                    m.diagram.name(prov.source), n, prov.combination);
            }
        }
    }

    #[test]
    fn instrumented_population_regression_equals_combinations(seed in any::<u64>()) {
        let m = model_from_seed(seed, &ModelShape { latents: (1, 3), observed: (3, 8), ..Default::default() });
        let p = sample_generic_params(&m, seed.rotate_left(7));
        let sigma = implied_covariance(&m, &p).unwrap();
        for eq in equations(&m) {
            let Ok(out) = l2o(&m, &eq) else { continue };
            let Some(inst) = search_instruments(&m, &out, 1).unwrap().into_iter().next() else { continue };
            let x = &out.regression.regressors;
            let y = out.regression.dependent;
            let sxz = sigma.submatrix(&inst, x);
            let szy = DVector::from_iterator(inst.len(), inst.iter().map(|&i| sigma.get(i, y)));
            let beta = sxz.lu().solve(&szy).unwrap();
            for (j, prov) in out.provenance.iter().enumerate() {
                let truth = prov.combination.eval(&p).unwrap();
                prop_assert!(rel_close(beta[j], truth, 1e-6), "{}: {} vs {}", prov.combination, beta[j], truth);
            }
        }
    }
}
