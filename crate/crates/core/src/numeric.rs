//! Implied covariance, generic parameter draws, numerical rank, simulation
//! and two-stage least squares.

use std::collections::BTreeMap;
use std::io;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{canonicalize, enumerate_treks_capped, GraphError, DEFAULT_TREK_CAP};
use crate::model::{ModelError, NodeId, ParamAssignment, PathDiagram, SemModel};

/// Default relative tolerance for [`numeric_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("error covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("{0} instruments for {1} regressors")]
    TooFewInstruments(usize, usize),
    #[error("{0} is singular at tolerance")]
    Singular(&'static str),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Symmetric matrix indexed by diagram nodes.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    pub index: Vec<NodeId>,
    pub matrix: DMatrix<f64>,
}

impl CovMatrix {
    fn position(&self, v: NodeId) -> usize {
        self.index.iter().position(|&u| u == v).expect("node is indexed")
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        self.matrix[(self.position(a), self.position(b))]
    }

    pub fn submatrix(&self, rows: &[NodeId], cols: &[NodeId]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }

    pub fn restrict(&self, ids: &[NodeId]) -> CovMatrix {
        CovMatrix { index: ids.to_vec(), matrix: self.submatrix(ids, ids) }
    }

    /// Block of the correlation matrix; rows or columns of zero variance are zero.
    pub fn correlation_submatrix(&self, rows: &[NodeId], cols: &[NodeId]) -> DMatrix<f64> {
        let sd = |v: NodeId| {
            let var = self.get(v, v);
            if var > 0.0 { var.sqrt() } else { f64::INFINITY }
        };
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]) / (sd(rows[i]) * sd(cols[j])))
    }

    /// Rank of the correlation block `[rows, cols]`. Singular values count
    /// when above `tol` times the largest one, or times one if that is
    /// larger, so a block of rounding noise has rank zero.
    pub fn block_rank(&self, rows: &[NodeId], cols: &[NodeId], tol: f64) -> usize {
        let m = self.correlation_submatrix(rows, cols);
        if m.is_empty() {
            return 0;
        }
        let sv = m.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > tol * max.max(1.0)).count()
    }
}

/// Coefficient matrix with `lambda[(from, to)]` holding the arrow `from -> to`.
pub fn coefficient_matrix(g: &PathDiagram, params: &ParamAssignment) -> Result<DMatrix<f64>, ModelError> {
    let n = g.node_count();
    let mut lambda = DMatrix::zeros(n, n);
    for e in g.directed_edges() {
        lambda[(e.from.0, e.to.0)] = params.value_of(&e.param)?;
    }
    Ok(lambda)
}

/// Covariance of the exogenous sources: node variances on the diagonal,
/// bidirected covariances off it.
pub fn source_covariance(g: &PathDiagram, params: &ParamAssignment) -> Result<DMatrix<f64>, ModelError> {
    let n = g.node_count();
    let mut psi = DMatrix::zeros(n, n);
    for v in g.node_ids() {
        if let Some(p) = g.variance(v) {
            psi[(v.0, v.0)] = params.value_of(p)?;
        }
    }
    for e in g.bidirected_edges() {
        let c = params.value_of(&e.param)?;
        psi[(e.a.0, e.b.0)] = c;
        psi[(e.b.0, e.a.0)] = c;
    }
    Ok(psi)
}

/// `(I - Λ)⁻¹`, whose entry `(u, v)` is the total effect of `u` on `v`.
fn total_effects(g: &PathDiagram, params: &ParamAssignment) -> Result<DMatrix<f64>, ModelError> {
    let n = g.node_count();
    let lambda = coefficient_matrix(g, params)?;
    let a = DMatrix::<f64>::identity(n, n) - lambda;
    // Acyclic coefficient matrices are nilpotent, so I - Λ is always invertible.
    Ok(a.try_inverse().expect("I - Λ is invertible for an acyclic diagram"))
}

/// Σ = (I − Λ)⁻ᵀ Ψ (I − Λ)⁻¹ over every node of the diagram.
pub fn implied_covariance_of(g: &PathDiagram, params: &ParamAssignment) -> Result<CovMatrix, ModelError> {
    let inv = total_effects(g, params)?;
    let psi = source_covariance(g, params)?;
    let matrix = inv.transpose() * psi * &inv;
    Ok(CovMatrix { index: g.node_ids().collect(), matrix })
}

pub fn implied_covariance(model: &SemModel, params: &ParamAssignment) -> Result<CovMatrix, ModelError> {
    implied_covariance_of(&model.diagram, params)
}

/// Implied covariance of the observed variables, in node order.
pub fn observed_covariance(model: &SemModel, params: &ParamAssignment) -> Result<CovMatrix, ModelError> {
    Ok(implied_covariance(model, params)?.restrict(&model.observed()))
}

/// Σ[a, b] as a sum over treks of the top's source variance times the
/// arrow coefficients along the trek, on the canonical form of `g`.
pub fn trek_rule_covariance(
    g: &PathDiagram,
    params: &ParamAssignment,
    a: NodeId,
    b: NodeId,
) -> Result<f64, NumericError> {
    let c = canonicalize(g);
    let mut source_var = vec![0.0; c.node_count()];
    for v in c.node_ids() {
        if let Some(p) = c.variance(v) {
            source_var[v.0] = params.value_of(p)?;
        }
    }
    // A bidirected edge moves part of each endpoint's variance onto the new
    // common cause.
    for e in g.bidirected_edges() {
        let cov = params.value_of(&e.param)?;
        source_var[e.a.0] -= cov;
        source_var[e.b.0] -= cov;
    }
    let mut total = 0.0;
    for t in enumerate_treks_capped(&c, a, b, DEFAULT_TREK_CAP)? {
        let mut term = source_var[t.top_node().0];
        for (u, w) in t.arrows() {
            term *= params.value_of(&c.edge(u, w).expect("trek arrows exist").param)?;
        }
        total += term;
    }
    Ok(total)
}

/// Whether the symmetric matrix admits a Cholesky factor.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == 0 || m.clone().cholesky().is_some()
}

/// Source covariance restricted to the nodes that carry a variance.
fn source_block(g: &PathDiagram, params: &ParamAssignment) -> Result<(Vec<NodeId>, DMatrix<f64>), ModelError> {
    let psi = source_covariance(g, params)?;
    let sources: Vec<NodeId> = g.node_ids().filter(|&v| g.variance(v).is_some()).collect();
    let block = DMatrix::from_fn(sources.len(), sources.len(), |i, j| psi[(sources[i].0, sources[j].0)]);
    Ok((sources, block))
}

pub fn sources_positive_definite(g: &PathDiagram, params: &ParamAssignment) -> Result<bool, ModelError> {
    Ok(is_positive_definite(&source_block(g, params)?.1))
}

/// Random parameter values away from the degenerate set: coefficients from
/// `[-2, -0.5] ∪ [0.5, 2]`, variances from `[0.5, 2]`, covariances as a
/// correlation of magnitude in `[0.1, 0.5]` scaled by both variances and
/// halved until the source covariance is positive definite.
pub fn sample_generic_params(model: &SemModel, seed: u64) -> ParamAssignment {
    sample_generic_params_of(&model.diagram, seed)
}

pub fn sample_generic_params_of(g: &PathDiagram, seed: u64) -> ParamAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let magnitude = Uniform::new_inclusive(0.5, 2.0);
    let rho = Uniform::new_inclusive(0.1, 0.5);
    let mut out = ParamAssignment::new();
    for e in g.directed_edges() {
        if e.param.is_free() && out.get(&e.param.label).is_none() {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            out.insert(e.param.label.clone(), sign * magnitude.sample(&mut rng));
        }
    }
    for v in g.node_ids() {
        if let Some(p) = g.variance(v) {
            if p.is_free() && out.get(&p.label).is_none() {
                out.insert(p.label.clone(), magnitude.sample(&mut rng));
            }
        }
    }
    let var_of = |out: &ParamAssignment, v: NodeId| g.variance(v).and_then(|p| out.value_of(p).ok()).unwrap_or(1.0);
    let mut free_cov = Vec::new();
    for e in g.bidirected_edges() {
        if e.param.is_free() && out.get(&e.param.label).is_none() {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let r = sign * rho.sample(&mut rng);
            let scale = (var_of(&out, e.a) * var_of(&out, e.b)).sqrt();
            out.insert(e.param.label.clone(), r * scale);
            free_cov.push(e.param.label.clone());
        }
    }
    for _ in 0..60 {
        match sources_positive_definite(g, &out) {
            Ok(false) => {
                for l in &free_cov {
                    let v = out.get(l).unwrap();
                    out.insert(l.clone(), v / 2.0);
                }
            }
            _ => break,
        }
    }
    out
}

/// Number of singular values above `tol_rel` times the largest one.
pub fn numeric_rank(m: &DMatrix<f64>, tol_rel: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol_rel * max).count()
}

/// Column-named data matrix, one row per draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn column(&self, name: &str) -> Result<DVector<f64>, NumericError> {
        let j = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| NumericError::MissingColumn(name.to_string()))?;
        Ok(self.data.column(j).into_owned())
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), NumericError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns).map_err(|e| NumericError::Csv(e.to_string()))?;
        for i in 0..self.rows() {
            let row: Vec<String> = (0..self.columns.len()).map(|j| self.data[(i, j)].to_string()).collect();
            wr.write_record(&row).map_err(|e| NumericError::Csv(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a header row followed by numeric rows; empty or non-numeric
    /// cells are rejected.
    pub fn read_csv<R: io::Read>(r: R) -> Result<Dataset, NumericError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let columns: Vec<String> =
            rd.headers().map_err(|e| NumericError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
        let mut values = Vec::new();
        let mut rows = 0;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| NumericError::Csv(e.to_string()))?;
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    NumericError::Csv(format!("row {}, column `{}`: not a number: `{cell}`", i + 2, columns[j]))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        if rows < 2 {
            return Err(NumericError::TooFewRows(rows));
        }
        Ok(Dataset { data: DMatrix::from_row_slice(rows, columns.len(), &values), columns })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ErrorDistribution {
    #[default]
    Gaussian,
    /// Uniform with unit variance before mixing.
    Uniform,
}

/// Draws `n` rows of the observed variables.
pub fn simulate(
    model: &SemModel,
    params: &ParamAssignment,
    n: usize,
    seed: u64,
    dist: ErrorDistribution,
) -> Result<Dataset, NumericError> {
    if n < 2 {
        return Err(NumericError::TooFewRows(n));
    }
    let g = &model.diagram;
    params.check_complete(g)?;
    let (sources, block) = source_block(g, params)?;
    let chol = block.cholesky().ok_or(NumericError::NotPositiveDefinite)?;
    let l = chol.l();
    let order = g.topological_order().ok_or(GraphError::Cyclic)?;
    let coef = coefficient_matrix(g, params)?;
    let observed = model.observed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_width = 3f64.sqrt();
    let mut data = DMatrix::zeros(n, observed.len());
    let mut z = DVector::zeros(sources.len());
    let mut x = vec![0.0; g.node_count()];
    for i in 0..n {
        for k in 0..sources.len() {
            z[k] = match dist {
                ErrorDistribution::Gaussian => rng.sample(StandardNormal),
                ErrorDistribution::Uniform => rng.gen_range(-half_width..half_width),
            };
        }
        let e = &l * &z;
        x.iter_mut().for_each(|v| *v = 0.0);
        for (k, s) in sources.iter().enumerate() {
            x[s.0] = e[k];
        }
        for &v in &order {
            let mut acc = x[v.0];
            for &p in g.parents(v) {
                acc += coef[(p.0, v.0)] * x[p.0];
            }
            x[v.0] = acc;
        }
        for (j, v) in observed.iter().enumerate() {
            data[(i, j)] = x[v.0];
        }
    }
    Ok(Dataset { columns: g.names(observed), data })
}

#[derive(Clone, Debug, Serialize)]
pub struct TslsResult {
    pub coefficients: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    /// Coefficients of the conditioning variables.
    pub conditioning: BTreeMap<String, f64>,
    pub intercept: f64,
    pub n: usize,
    pub instruments: Vec<String>,
    /// Smallest over largest singular value of the first-stage fitted
    /// regressors; small values flag weak instruments.
    pub first_stage_condition: f64,
}

/// Two-stage least squares with an intercept. Conditioning variables are
/// included exogenous regressors in both stages.
pub fn tsls_estimate(
    data: &Dataset,
    dependent: &str,
    regressors: &[String],
    instruments: &[String],
    conditioning: &[String],
) -> Result<TslsResult, NumericError> {
    if instruments.len() < regressors.len() {
        return Err(NumericError::TooFewInstruments(instruments.len(), regressors.len()));
    }
    let n = data.rows();
    if n < 2 {
        return Err(NumericError::TooFewRows(n));
    }
    let design = |cols: &[&String]| -> Result<DMatrix<f64>, NumericError> {
        let mut m = DMatrix::from_element(n, cols.len() + 1, 1.0);
        for (j, c) in cols.iter().enumerate() {
            m.set_column(j + 1, &data.column(c)?);
        }
        Ok(m)
    };
    let y = data.column(dependent)?;
    let xcols: Vec<&String> = regressors.iter().chain(conditioning).collect();
    let zcols: Vec<&String> = instruments.iter().chain(conditioning).collect();
    let x = design(&xcols)?;
    let z = design(&zcols)?;
    let p = x.ncols();
    if n <= p {
        return Err(NumericError::TooFewRows(n));
    }

    let ztz = z.transpose() * &z;
    if numeric_rank(&ztz, 1e-12) < ztz.nrows() {
        return Err(NumericError::Singular("instrument design"));
    }
    let ztz_inv = ztz.try_inverse().ok_or(NumericError::Singular("instrument design"))?;
    let x_hat = &z * (ztz_inv * (z.transpose() * &x));
    let sv = x_hat.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smax > 0.0 { smin / smax } else { 0.0 };
    if condition <= 1e-10 {
        return Err(NumericError::Singular("first stage"));
    }
    let xtx = x_hat.transpose() * &x_hat;
    let xtx_inv = xtx.try_inverse().ok_or(NumericError::Singular("second stage"))?;
    let beta = &xtx_inv * (x_hat.transpose() * &y);
    let resid = &y - &x * &beta;
    let sigma2 = resid.dot(&resid) / (n - p) as f64;

    let mut coefficients = BTreeMap::new();
    let mut standard_errors = BTreeMap::new();
    for (j, r) in regressors.iter().enumerate() {
        coefficients.insert(r.clone(), beta[j + 1]);
        standard_errors.insert(r.clone(), (sigma2 * xtx_inv[(j + 1, j + 1)]).sqrt());
    }
    let conditioning = conditioning
        .iter()
        .enumerate()
        .map(|(j, c)| (c.clone(), beta[regressors.len() + j + 1]))
        .collect();
    Ok(TslsResult {
        coefficients,
        standard_errors,
        conditioning,
        intercept: beta[0],
        n,
        instruments: instruments.to_vec(),
        first_stage_condition: condition,
    })
}
