//! Seeded generators of valid random models, used by `selfcheck` and by
//! property tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{coefficient_label, NodeId, NodeKind, ParamRef, PathDiagram, SemModel};

#[derive(Clone, Debug)]
pub struct ModelShape {
    pub latents: (usize, usize),
    pub observed: (usize, usize),
    /// Probability of each admissible forward arrow.
    pub edge_prob: f64,
    /// Probability of a covariance between two error terms.
    pub cov_prob: f64,
    /// Probability that a free coefficient is fixed to a number instead.
    pub fixed_prob: f64,
    /// Probability that a free parameter gets a custom label.
    pub label_prob: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            latents: (1, 4),
            observed: (2, 8),
            edge_prob: 0.3,
            cov_prob: 0.1,
            fixed_prob: 0.0,
            label_prob: 0.0,
        }
    }
}

/// A model that passes [`crate::model::validate`]: every latent gets a
/// distinct observed scaling indicator with a single latent parent.
pub fn random_model<R: Rng>(rng: &mut R, shape: &ModelShape) -> SemModel {
    let n_obs = rng.gen_range(shape.observed.0..=shape.observed.1);
    let n_lat = rng.gen_range(shape.latents.0..=shape.latents.1).min(n_obs);
    let mut names: Vec<(String, NodeKind)> = (1..=n_lat).map(|i| (format!("l{i}"), NodeKind::Latent)).collect();
    names.extend((1..=n_obs).map(|i| (format!("y{i}"), NodeKind::Observed)));
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.shuffle(rng);
    // scaling indicator of latent i is y(i+1); it must come after its latent
    for i in 0..n_lat {
        let (pl, ps) = (pos(&order, i), pos(&order, n_lat + i));
        if pl > ps {
            order.swap(pl, ps);
        }
    }

    let mut g = PathDiagram::new();
    let ids: Vec<NodeId> = names.iter().map(|(n, k)| g.add_variable(n, *k)).collect();
    let mut scaling = std::collections::BTreeMap::new();
    let is_indicator = |j: usize| j >= n_lat && j < 2 * n_lat;
    let mut label_count = 0;
    for b in 0..order.len() {
        for a in 0..b {
            let (u, v) = (order[a], order[b]);
            let scaling_pair = u < n_lat && v == n_lat + u;
            if scaling_pair {
                let label = coefficient_label(&names[u].0, &names[v].0);
                g.add_directed(ids[u], ids[v], ParamRef::fixed(label, 1.0));
                scaling.insert(ids[u], ids[v]);
                continue;
            }
            // scaling indicators keep a single latent parent
            if u < n_lat && is_indicator(v) {
                continue;
            }
            if rng.gen_bool(shape.edge_prob) {
                let param = random_param(rng, shape, coefficient_label(&names[u].0, &names[v].0), &mut label_count);
                g.add_directed(ids[u], ids[v], param);
            }
        }
    }
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            if rng.gen_bool(shape.cov_prob) {
                let (ea, eb) = (g.error_of(ids[a]).unwrap(), g.error_of(ids[b]).unwrap());
                let label = crate::model::covariance_label(&names[a].0, &names[b].0);
                let param = random_param(rng, shape, label, &mut label_count);
                g.add_bidirected(ea, eb, param);
            }
        }
    }
    if shape.fixed_prob > 0.0 || shape.label_prob > 0.0 {
        for &v in &ids {
            let e = g.error_of(v).unwrap();
            if rng.gen_bool(shape.fixed_prob) {
                let label = g.variance(e).unwrap().label.clone();
                g.set_variance(e, ParamRef::fixed(label, rng.gen_range(1..=4) as f64 * 0.5));
            }
        }
    }
    SemModel::new(g, scaling)
}

fn pos(order: &[usize], x: usize) -> usize {
    order.iter().position(|&o| o == x).unwrap()
}

fn random_param<R: Rng>(rng: &mut R, shape: &ModelShape, default_label: String, count: &mut usize) -> ParamRef {
    if shape.fixed_prob > 0.0 && rng.gen_bool(shape.fixed_prob) {
        return ParamRef::fixed(default_label, rng.gen_range(-4..=4) as f64 * 0.25);
    }
    if shape.label_prob > 0.0 && rng.gen_bool(shape.label_prob) {
        *count += 1;
        return ParamRef::free(format!("p{count}"));
    }
    ParamRef::free(default_label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_models_are_valid() {
        let shape = ModelShape { fixed_prob: 0.2, label_prob: 0.2, cov_prob: 0.2, ..Default::default() };
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, &shape);
            assert!(validate(&m).is_empty(), "seed {seed}: {:?}", validate(&m));
        }
    }
}
