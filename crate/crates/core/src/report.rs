//! Plain-text rendering of reports.

use std::fmt::Write;

use crate::estimate::EstimationReport;
use crate::identify::{IdentificationReport, InstrumentChoice, Strategy};
use crate::model::SemModel;
use crate::transform::TransformOutcome;

fn join(v: &[String]) -> String {
    v.join(", ")
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Full => "full",
        Strategy::Partial => "partial",
        Strategy::Conditional => "conditional",
    }
}

fn choice_line(c: &InstrumentChoice) -> String {
    let mut line = format!("{} ~ {} | instruments {{{}}}", c.dependent, join(&c.regressors), join(&c.instruments));
    if !c.conditioning.is_empty() {
        let _ = write!(line, " given {{{}}}", join(&c.conditioning));
    }
    if !c.kept.is_empty() {
        let _ = write!(line, " keeping {{{}}}", join(&c.kept));
    }
    if !c.for_targets.is_empty() {
        let _ = write!(line, " -> {}", join(&c.for_targets));
    }
    line
}

pub fn identification_text(report: &IdentificationReport) -> String {
    let mut out = String::new();
    for r in &report.equations {
        let strategies: Vec<&str> = r.strategies.iter().map(|s| strategy_name(*s)).collect();
        let _ = writeln!(out, "equation {}: {:?}", r.equation, r.status);
        if !strategies.is_empty() {
            let _ = writeln!(out, "  strategies: {}", strategies.join(", "));
        }
        let _ = writeln!(out, "  regression: {} ~ {}", r.regression.dependent, r.regression.regressors.join(" + "));
        for p in &r.provenance {
            let flag = if p.aliased { "  (aliased)" } else { "" };
            let _ = writeln!(out, "    {:<8} {}{}", p.regressor, p.combination, flag);
        }
        let _ = writeln!(out, "  identified: {}", join(&r.identified));
        let _ = writeln!(out, "  unidentified: {}", join(&r.unidentified));
        if !r.estimable_combinations.is_empty() {
            let _ = writeln!(out, "  estimable: {}", join(&r.estimable_combinations));
        }
        for c in &r.choices {
            let _ = writeln!(out, "  [{}] {}", strategy_name(c.strategy), choice_line(c));
        }
        if let Some(note) = &r.note {
            let _ = writeln!(out, "  note: {note}");
        }
    }
    out
}

/// Regression line and provenance table of a transform.
pub fn transform_text(model: &SemModel, outcome: &TransformOutcome) -> String {
    let g = &model.diagram;
    let mut out = String::new();
    let regs = g.names(outcome.regression.regressors.iter().copied());
    let _ = writeln!(out, "regression: {} ~ {}", g.name(outcome.regression.dependent), regs.join(" + "));
    let comp: Vec<String> = outcome
        .composite_error
        .iter()
        .map(|(v, w)| match w.as_constant() {
            Some(c) if c == 1.0 => g.name(*v).to_string(),
            _ => format!("({w})*{}", g.name(*v)),
        })
        .collect();
    let _ = writeln!(out, "error: {}", comp.join(" + "));
    let _ = writeln!(out, "{:<10} {:<12} combination", "regressor", "parameter");
    for p in &outcome.provenance {
        let flag = if p.is_aliased() { "  (aliased)" } else { "" };
        let _ = writeln!(out, "{:<10} {:<12} {}{}", g.name(p.source), p.param.label, p.combination, flag);
    }
    out
}

pub fn estimation_text(report: &EstimationReport) -> String {
    let mut out = String::new();
    for r in &report.regressions {
        let _ = write!(out, "{} [{}] instruments {{{}}}", r.equation, strategy_name(r.strategy), join(&r.instruments));
        if !r.conditioning.is_empty() {
            let _ = write!(out, " given {{{}}}", join(&r.conditioning));
        }
        let _ = writeln!(out, " n={} first-stage condition {:.3e}", r.n, r.first_stage_condition);
        for row in &r.rows {
            let name = match &row.parameter {
                Some(p) => p.clone(),
                None => format!("combination {}", row.combination),
            };
            let _ = writeln!(out, "  {:<8} {:<24} {:>12.6} ({:.6})", row.regressor, name, row.estimate, row.std_error);
        }
    }
    for s in &report.unestimated {
        let _ = writeln!(out, "{} {:?}: not estimated {}", s.equation, s.status, join(&s.unidentified));
    }
    out
}
