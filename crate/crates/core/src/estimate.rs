//! Two-stage least squares on the regressions chosen by identification.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::identify::{IdStatus, IdentificationReport, InstrumentChoice, Strategy};
use crate::numeric::{tsls_estimate, Dataset, NumericError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateRow {
    pub regressor: String,
    /// What the coefficient estimates, in original parameters.
    pub combination: String,
    /// Set only when the combination is a single identified parameter.
    pub parameter: Option<String>,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionEstimate {
    pub equation: String,
    pub strategy: Strategy,
    pub dependent: String,
    pub instruments: Vec<String>,
    pub conditioning: Vec<String>,
    pub kept: Vec<String>,
    pub n: usize,
    pub first_stage_condition: f64,
    pub rows: Vec<EstimateRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedEquation {
    pub equation: String,
    pub status: IdStatus,
    pub unidentified: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimationReport {
    pub regressions: Vec<RegressionEstimate>,
    /// Equations with targets that no regression estimates.
    pub unestimated: Vec<SkippedEquation>,
}

impl EstimationReport {
    /// Estimate of an individually identified parameter.
    pub fn parameter(&self, label: &str) -> Option<&EstimateRow> {
        self.regressions.iter().flat_map(|r| &r.rows).find(|row| row.parameter.as_deref() == Some(label))
    }

    /// Estimate of a combination, aliased or not, by its rendered form.
    pub fn combination(&self, combination: &str) -> Option<&EstimateRow> {
        self.regressions.iter().flat_map(|r| &r.rows).find(|row| row.combination == combination)
    }
}

/// Runs 2SLS for each equation, using the first choice that covers a
/// combination not estimated yet.
pub fn estimate_model(data: &Dataset, report: &IdentificationReport) -> Result<EstimationReport, NumericError> {
    let mut regressions = Vec::new();
    let mut unestimated = Vec::new();
    for record in &report.equations {
        let identified: BTreeSet<&str> = record.identified.iter().map(String::as_str).collect();
        let mut covered: BTreeSet<String> = BTreeSet::new();
        for choice in &record.choices {
            if choice.combinations.iter().all(|c| covered.contains(c)) {
                continue;
            }
            let est = run_choice(data, &record.equation, choice, &identified)?;
            covered.extend(choice.combinations.iter().cloned());
            regressions.push(est);
        }
        if !record.unidentified.is_empty() {
            unestimated.push(SkippedEquation {
                equation: record.equation.clone(),
                status: record.status.clone(),
                unidentified: record.unidentified.clone(),
            });
        }
    }
    Ok(EstimationReport { regressions, unestimated })
}

fn run_choice(
    data: &Dataset,
    equation: &str,
    choice: &InstrumentChoice,
    identified: &BTreeSet<&str>,
) -> Result<RegressionEstimate, NumericError> {
    let fit = tsls_estimate(data, &choice.dependent, &choice.regressors, &choice.instruments, &choice.conditioning)?;
    let rows = choice
        .regressors
        .iter()
        .zip(&choice.combinations)
        .map(|(r, c)| EstimateRow {
            regressor: r.clone(),
            combination: c.clone(),
            parameter: identified.contains(c.as_str()).then(|| c.clone()),
            estimate: fit.coefficients[r],
            std_error: fit.standard_errors[r],
        })
        .collect();
    Ok(RegressionEstimate {
        equation: equation.to_string(),
        strategy: choice.strategy,
        dependent: choice.dependent.clone(),
        instruments: choice.instruments.clone(),
        conditioning: choice.conditioning.clone(),
        kept: choice.kept.clone(),
        n: fit.n,
        first_stage_condition: fit.first_stage_condition,
        rows,
    })
}
