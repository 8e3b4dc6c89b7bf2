//! Reader and writer for a lavaan-style model language.
//!
//! ```text
//! # measurement part
//! l1 =~ y1 + y2 + lam*y3      first indicator scales the latent
//! l2 =~ y4 + 0.5*y5           numeric prefix fixes a coefficient
//! l2 ~ l1 + x1                regression arrows l1 -> l2, x1 -> l2
//! y1 ~~ y2                    covariance of the error terms
//! y3 ~~ 2*y3                  error variance
//! ```
//!
//! Statements end at a newline or `;`. Latents are exactly the names on
//! the left of `=~`; every other name is observed. A node is created at
//! its first mention, so node order follows the text.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::model::{
    coefficient_label, covariance_label, validate, variance_label, NodeId, NodeKind, ParamRef, PathDiagram,
    SemModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub column: usize,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Op(&'static str),
    Plus,
    Star,
    Other(String),
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

fn lex(text: &str, line: usize, col0: usize) -> Result<Vec<(Tok, Pos)>, ParseDiagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col0 + i };
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        if rest == "=~" || rest == "~~" {
            out.push((Tok::Op(if rest == "=~" { "=~" } else { "~~" }), pos));
            i += 2;
            continue;
        }
        if c == '~' {
            out.push((Tok::Op("~"), pos));
            i += 1;
            continue;
        }
        if c == '+' {
            out.push((Tok::Plus, pos));
            i += 1;
            continue;
        }
        if c == '*' {
            out.push((Tok::Star, pos));
            i += 1;
            continue;
        }
        let numeric_start = c.is_ascii_digit()
            || ((c == '-' || c == '.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.'));
        if numeric_start {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| diag(pos, format!("malformed number `{s}`")))?;
            out.push((Tok::Number(v), pos));
            continue;
        }
        if is_ident_char(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() && !is_ident_char(chars[i]) && chars[i] != '+' {
            i += 1;
        }
        out.push((Tok::Other(chars[start..i].iter().collect()), pos));
    }
    Ok(out)
}

fn diag(pos: Pos, message: String) -> ParseDiagnostic {
    ParseDiagnostic { line: pos.line, column: pos.column, severity: Severity::Error, message }
}

#[derive(Clone, Debug)]
enum Modifier {
    Fixed(f64),
    Label(String),
}

#[derive(Clone, Debug)]
struct Term {
    modifier: Option<Modifier>,
    name: String,
    pos: Pos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Measure,
    Regress,
    Covary,
}

#[derive(Clone, Debug)]
struct Statement {
    op: Op,
    lhs: String,
    lhs_pos: Pos,
    terms: Vec<Term>,
}

fn parse_statement(toks: &[(Tok, Pos)]) -> Result<Statement, ParseDiagnostic> {
    let (lhs, lhs_pos) = match &toks[0] {
        (Tok::Ident(n), p) => (n.clone(), *p),
        (_, p) => return Err(diag(*p, "expected a variable name".into())),
    };
    let (op, op_pos) = match toks.get(1) {
        Some((Tok::Op("=~"), p)) => (Op::Measure, *p),
        Some((Tok::Op("~"), p)) => (Op::Regress, *p),
        Some((Tok::Op(_), p)) => (Op::Covary, *p),
        Some((Tok::Other(s), p)) => return Err(diag(*p, format!("unknown operator `{s}`"))),
        Some((_, p)) => return Err(diag(*p, "expected an operator (=~, ~ or ~~)".into())),
        None => return Err(diag(lhs_pos, format!("statement `{lhs}` has no operator"))),
    };
    let mut terms = Vec::new();
    let mut rest = &toks[2..];
    while !rest.is_empty() {
        let (term, used) = parse_term(rest)?;
        terms.push(term);
        rest = &rest[used..];
        match rest.first() {
            None => {}
            Some((Tok::Plus, p)) => {
                if rest.len() == 1 {
                    return Err(diag(*p, "expected a term after `+`".into()));
                }
                rest = &rest[1..];
            }
            Some((Tok::Op(o), p)) => return Err(diag(*p, format!("unexpected operator `{o}`"))),
            Some((Tok::Other(s), p)) => return Err(diag(*p, format!("unknown operator `{s}`"))),
            Some((_, p)) => return Err(diag(*p, "expected `+`".into())),
        }
    }
    if terms.is_empty() {
        let msg = if op == Op::Measure {
            format!("latent `{lhs}` has no indicators")
        } else {
            "missing right-hand side".to_string()
        };
        return Err(diag(op_pos, msg));
    }
    Ok(Statement { op, lhs, lhs_pos, terms })
}

fn parse_term(toks: &[(Tok, Pos)]) -> Result<(Term, usize), ParseDiagnostic> {
    let starred = matches!(toks.get(1), Some((Tok::Star, _)));
    if starred {
        let modifier = match &toks[0] {
            (Tok::Number(v), _) => Modifier::Fixed(*v),
            (Tok::Ident(l), _) => Modifier::Label(l.clone()),
            (_, p) => return Err(diag(*p, "expected a number or label before `*`".into())),
        };
        return match toks.get(2) {
            Some((Tok::Ident(n), p)) => Ok((Term { modifier: Some(modifier), name: n.clone(), pos: *p }, 3)),
            Some((_, p)) => Err(diag(*p, "expected a variable name after `*`".into())),
            None => Err(diag(toks[1].1, "expected a variable name after `*`".into())),
        };
    }
    match &toks[0] {
        (Tok::Ident(n), p) => Ok((Term { modifier: None, name: n.clone(), pos: *p }, 1)),
        (Tok::Number(_), p) => Err(diag(*p, "intercepts and bare numbers are not supported".into())),
        (Tok::Other(s), p) => Err(diag(*p, format!("unknown operator `{s}`"))),
        (_, p) => Err(diag(*p, "expected a variable name".into())),
    }
}

fn split_statements(src: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    for (li, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut col = 1;
        for piece in line.split(';') {
            if !piece.trim().is_empty() {
                out.push((li + 1, col, piece));
            }
            col += piece.chars().count() + 1;
        }
    }
    out
}

/// Result of parsing: the model when there were no errors, plus every
/// diagnostic produced.
#[derive(Clone, Debug)]
pub struct ParseOutput {
    pub model: Option<SemModel>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

/// Parses model text; errors come back as positioned diagnostics.
pub fn parse_model(src: &str) -> Result<SemModel, Vec<ParseDiagnostic>> {
    let out = parse(src);
    match out.model {
        Some(m) => Ok(m),
        None => Err(out.diagnostics),
    }
}

pub fn parse(src: &str) -> ParseOutput {
    let mut diagnostics = Vec::new();
    let mut statements = Vec::new();
    for (line, col, text) in split_statements(src) {
        match lex(text, line, col).and_then(|t| parse_statement(&t)) {
            Ok(s) => statements.push(s),
            Err(d) => diagnostics.push(d),
        }
    }
    if !diagnostics.is_empty() {
        return ParseOutput { model: None, diagnostics };
    }
    let mut b = Builder::default();
    for s in &statements {
        if s.op == Op::Measure {
            b.latents.insert(s.lhs.clone());
        }
    }
    for s in &statements {
        b.mention(&s.lhs);
        for t in &s.terms {
            b.mention(&t.name);
        }
    }
    for s in &statements {
        b.statement(s);
    }
    let mut warnings = Vec::new();
    for (l, pos) in &b.declared_at {
        let id = b.ids[l];
        let count = b.g.children(id).iter().filter(|&&c| b.g.is_observed(c)).count();
        if count == 1 {
            warnings.push(ParseDiagnostic {
                line: pos.line,
                column: pos.column,
                severity: Severity::Warning,
                message: format!("latent `{l}` has a single indicator"),
            });
        }
    }
    let mut diagnostics = b.errors;
    if !diagnostics.is_empty() {
        diagnostics.extend(warnings);
        return ParseOutput { model: None, diagnostics };
    }
    let model = SemModel::new(b.g, b.scaling);
    for v in validate(&model) {
        diagnostics.push(diag(Pos { line: 1, column: 1 }, v.message));
    }
    let ok = diagnostics.is_empty();
    diagnostics.extend(warnings);
    ParseOutput { model: ok.then_some(model), diagnostics }
}

#[derive(Default)]
struct Builder {
    g: PathDiagram,
    latents: BTreeSet<String>,
    ids: HashMap<String, NodeId>,
    scaling: BTreeMap<NodeId, NodeId>,
    declared_at: BTreeMap<String, Pos>,
    labels: HashMap<String, Pos>,
    covariances: BTreeSet<(NodeId, NodeId)>,
    variances_set: BTreeSet<NodeId>,
    errors: Vec<ParseDiagnostic>,
}

impl Builder {
    fn mention(&mut self, name: &str) {
        if !self.ids.contains_key(name) {
            let kind = if self.latents.contains(name) { NodeKind::Latent } else { NodeKind::Observed };
            let id = self.g.add_variable(name, kind);
            self.ids.insert(name.to_string(), id);
        }
    }

    fn error(&mut self, pos: Pos, msg: String) {
        self.errors.push(diag(pos, msg));
    }

    fn param(&mut self, modifier: &Option<Modifier>, default_label: String, pos: Pos) -> Option<ParamRef> {
        match modifier {
            None => Some(ParamRef::free(default_label)),
            Some(Modifier::Fixed(v)) => {
                if !v.is_finite() {
                    self.error(pos, "fixed values must be finite".into());
                    return None;
                }
                Some(ParamRef::fixed(default_label, *v))
            }
            Some(Modifier::Label(l)) => {
                if let Some(prev) = self.labels.get(l) {
                    let msg = format!("label `{l}` already used at {}:{}", prev.line, prev.column);
                    self.error(pos, msg);
                    return None;
                }
                self.labels.insert(l.clone(), pos);
                Some(ParamRef::free(l.clone()))
            }
        }
    }

    /// Adds `from -> to` unless it duplicates an edge or closes a cycle.
    fn arrow(&mut self, from: NodeId, to: NodeId, param: ParamRef, pos: Pos) -> bool {
        if from == to {
            self.error(pos, format!("`{}` cannot cause itself", self.g.name(to)));
            return false;
        }
        if self.g.edge(from, to).is_some() {
            let msg = format!("duplicate edge {} -> {}", self.g.name(from), self.g.name(to));
            self.error(pos, msg);
            return false;
        }
        if crate::graph::descendants(&self.g, to).contains(&from) {
            let msg = format!("edge {} -> {} introduces a cycle", self.g.name(from), self.g.name(to));
            self.error(pos, msg);
            return false;
        }
        self.g.add_directed(from, to, param);
        true
    }

    fn statement(&mut self, s: &Statement) {
        let lhs = self.ids[&s.lhs];
        match s.op {
            Op::Measure => {
                let first = !self.declared_at.contains_key(&s.lhs);
                if first {
                    self.declared_at.insert(s.lhs.clone(), s.lhs_pos);
                }
                for (k, t) in s.terms.iter().enumerate() {
                    let ind = self.ids[&t.name];
                    let label = coefficient_label(&s.lhs, &t.name);
                    if first && k == 0 {
                        if self.latents.contains(&t.name) {
                            self.error(t.pos, format!("scaling indicator `{}` of `{}` must be observed", t.name, s.lhs));
                            continue;
                        }
                        let param = match &t.modifier {
                            None => ParamRef::fixed(label, 1.0),
                            Some(Modifier::Fixed(v)) if *v == 1.0 => ParamRef::fixed(label, 1.0),
                            Some(Modifier::Fixed(v)) => {
                                let msg = format!("scaling indicator `{}` must have coefficient 1, got {v}", t.name);
                                self.error(t.pos, msg);
                                continue;
                            }
                            Some(Modifier::Label(l)) => {
                                if self.param(&t.modifier, label, t.pos).is_none() {
                                    continue;
                                }
                                ParamRef::fixed(l.clone(), 1.0)
                            }
                        };
                        if self.arrow(lhs, ind, param, t.pos) {
                            self.scaling.insert(lhs, ind);
                        }
                    } else if let Some(p) = self.param(&t.modifier, label, t.pos) {
                        self.arrow(lhs, ind, p, t.pos);
                    }
                }
            }
            Op::Regress => {
                for t in &s.terms {
                    let from = self.ids[&t.name];
                    if let Some(p) = self.param(&t.modifier, coefficient_label(&t.name, &s.lhs), t.pos) {
                        self.arrow(from, lhs, p, t.pos);
                    }
                }
            }
            Op::Covary => {
                for t in &s.terms {
                    let other = self.ids[&t.name];
                    let ea = self.g.error_of(lhs).expect("variables have errors");
                    if other == lhs {
                        if !self.variances_set.insert(ea) {
                            self.error(t.pos, format!("variance of `{}` given twice", s.lhs));
                            continue;
                        }
                        if let Some(p) = self.param(&t.modifier, variance_label(&s.lhs), t.pos) {
                            self.g.set_variance(ea, p);
                        }
                        continue;
                    }
                    let eb = self.g.error_of(other).expect("variables have errors");
                    let key = (ea.min(eb), ea.max(eb));
                    if !self.covariances.insert(key) {
                        self.error(t.pos, format!("duplicate covariance {} ~~ {}", s.lhs, t.name));
                        continue;
                    }
                    if let Some(p) = self.param(&t.modifier, covariance_label(&s.lhs, &t.name), t.pos) {
                        self.g.add_bidirected(ea, eb, p);
                    }
                }
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cannot emit an invalid model: {0}")]
pub struct EmitError(pub String);

/// The variable an error node feeds.
fn owner(g: &PathDiagram, e: NodeId) -> NodeId {
    g.children(e).iter().copied().find(|&c| !g.is_error(c)).expect("error nodes have one child")
}

fn modifier(p: &ParamRef, default_label: &str) -> String {
    match p.fixed_value() {
        Some(v) => format!("{v}*"),
        None if p.label == default_label => String::new(),
        None => format!("{}*", p.label),
    }
}

/// Writes model text that parses back to the same structure.
pub fn emit_model(model: &SemModel) -> Result<String, EmitError> {
    if let Some(v) = validate(model).first() {
        return Err(EmitError(v.message.clone()));
    }
    let g = &model.diagram;
    let mut lines = Vec::new();
    let mut measured: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for l in model.latents() {
        let s = model.scaling[&l];
        let scale = &g.edge(l, s).unwrap().param;
        let mut terms = vec![if scale.label == coefficient_label(g.name(l), g.name(s)) {
            g.name(s).to_string()
        } else {
            format!("{}*{}", scale.label, g.name(s))
        }];
        measured.insert((l, s));
        for &c in g.children(l) {
            if c != s && g.is_observed(c) {
                let p = &g.edge(l, c).unwrap().param;
                terms.push(format!("{}{}", modifier(p, &coefficient_label(g.name(l), g.name(c))), g.name(c)));
                measured.insert((l, c));
            }
        }
        lines.push(format!("{} =~ {}", g.name(l), terms.join(" + ")));
    }
    for v in g.node_ids().filter(|&v| !g.is_error(v)) {
        let terms: Vec<String> = g
            .parents(v)
            .iter()
            .filter(|&&p| !g.is_error(p) && !measured.contains(&(p, v)))
            .map(|&p| {
                let param = &g.edge(p, v).unwrap().param;
                format!("{}{}", modifier(param, &coefficient_label(g.name(p), g.name(v))), g.name(p))
            })
            .collect();
        if !terms.is_empty() {
            lines.push(format!("{} ~ {}", g.name(v), terms.join(" + ")));
        }
    }
    for e in g.bidirected_edges() {
        let (a, b) = (owner(g, e.a), owner(g, e.b));
        let m = modifier(&e.param, &covariance_label(g.name(a), g.name(b)));
        lines.push(format!("{} ~~ {m}{}", g.name(a), g.name(b)));
    }
    for v in g.node_ids().filter(|&v| !g.is_error(v)) {
        let e = g.error_of(v).expect("variables have errors");
        let p = g.variance(e).expect("errors have variances");
        let default = variance_label(g.name(v));
        let isolated = g.children(v).is_empty()
            && g.parents(v).len() == 1
            && !g.bidirected_edges().iter().any(|b| b.a == e || b.b == e);
        if !(p.is_free() && p.label == default) || isolated {
            lines.push(format!("{} ~~ {}{}", g.name(v), modifier(p, &default), g.name(v)));
        }
    }
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    Ok(text)
}

/// Structural equality by name: same variables and kinds, same arrows and
/// covariances with the same free labels or fixed values, same error
/// variances and the same scaling map.
pub fn isomorphic(a: &SemModel, b: &SemModel) -> bool {
    fn key(p: &ParamRef) -> String {
        match p.fixed_value() {
            Some(v) => format!("={v}"),
            None => p.label.clone(),
        }
    }
    fn describe(m: &SemModel) -> BTreeSet<String> {
        let g = &m.diagram;
        let name = |v: NodeId| {
            if g.is_error(v) {
                format!("err({})", g.name(owner(g, v)))
            } else {
                g.name(v).to_string()
            }
        };
        let mut out = BTreeSet::new();
        for v in g.node_ids() {
            out.insert(format!("node {} {:?}", name(v), g.kind(v)));
            if let Some(p) = g.variance(v) {
                out.insert(format!("var {} {}", name(v), key(p)));
            }
        }
        for e in g.directed_edges() {
            out.insert(format!("edge {} {} {}", name(e.from), name(e.to), key(&e.param)));
        }
        for e in g.bidirected_edges() {
            let (x, y) = (name(e.a), name(e.b));
            let (x, y) = if x <= y { (x, y) } else { (y, x) };
            out.insert(format!("cov {x} {y} {}", key(&e.param)));
        }
        for (l, s) in &m.scaling {
            out.insert(format!("scale {} {}", name(*l), name(*s)));
        }
        out
    }
    describe(a) == describe(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn democracy_model() {
        let m = parse_model("l1 =~ y1 + y2 + y3\nl2 =~ y4 + y5 + y6 + y7\nl2 ~ l1").unwrap();
        let g = &m.diagram;
        let (l1, l2) = (g.find("l1").unwrap(), g.find("l2").unwrap());
        assert_eq!(m.scaling_indicator(l1), g.find("y1"));
        assert_eq!(m.scaling_indicator(l2), g.find("y4"));
        assert_eq!(m.latents().len(), 2);
        assert_eq!(m.observed().len(), 7);
        assert!(g.edge(l1, l2).unwrap().param.is_free());
    }

    #[test]
    fn cycle_is_a_diagnostic() {
        let d = parse_model("y2 ~ y1\ny1 ~ y2").unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].line, d[0].column), (2, 6));
        assert!(d[0].message.contains("cycle"));
        assert_eq!(d[0].to_string(), "2:6: error: edge y2 -> y1 introduces a cycle");
    }

    #[test]
    fn fixed_coefficients_and_labels() {
        let m = parse_model("l1 =~ 1*y1 + 0.5*y2 + lam*y3 # comment").unwrap();
        let g = &m.diagram;
        let l1 = g.find("l1").unwrap();
        assert_eq!(g.edge(l1, g.find("y2").unwrap()).unwrap().param.fixed_value(), Some(0.5));
        assert_eq!(g.edge(l1, g.find("y3").unwrap()).unwrap().param, ParamRef::free("lam"));
        let labelled = parse_model("l1 =~ s*y1 + y2").unwrap();
        let p = &labelled.diagram.edge(NodeId(0), labelled.diagram.find("y1").unwrap()).unwrap().param;
        assert_eq!(p, &ParamRef::fixed("s", 1.0));
    }

    #[test]
    fn rejected_inputs() {
        let cases = [
            ("l1 =~ 2*y1 + y2", "coefficient 1"),
            ("a := b", "unknown operator"),
            ("l1 =~", "no indicators"),
            ("y ~ x\ny ~ x", "duplicate edge"),
            ("y ~ a*x + a*z", "already used"),
            ("y ~ 1", "intercepts"),
            ("l1 =~ l2 + y1\nl2 =~ y2", "must be observed"),
            ("a ~~ b\nb ~~ a", "duplicate covariance"),
        ];
        for (src, needle) in cases {
            let d = parse_model(src).unwrap_err();
            assert!(d.iter().any(|d| d.message.contains(needle)), "{src}: {d:?}");
        }
    }

    #[test]
    fn emit_round_trip() {
        let src = "l1 =~ y2 + y1 + λ13*y3\nl2 =~ y4 + y5 + λ23*y3\nl1 ~~ l2\ny1 ~~ 0.3*y2\ny5 ~~ 2*y5\nz ~~ z";
        let m = parse_model(src).unwrap();
        let text = emit_model(&m).unwrap();
        assert!(text.contains("l1 ~~ l2"));
        assert!(isomorphic(&m, &parse_model(&text).unwrap()), "{text}");
        assert_eq!(emit_model(&SemModel::default()).unwrap(), "");
        assert_eq!(parse_model("").unwrap().diagram.node_count(), 0);
    }

    #[test]
    fn statements_split_on_semicolons() {
        let a = parse_model("l1 =~ y1 + y2; y2 ~ x").unwrap();
        let b = parse_model("l1 =~ y1 + y2\ny2 ~ x").unwrap();
        assert!(isomorphic(&a, &b));
    }
}
