//! Linear programs: an in-process simplex backend plus CPLEX-LP text export
//! and solution import for external solvers.
//!
//! All variables have lower bound 0 and an optional finite upper bound.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};

/// Solver tolerances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpTolerances {
    /// Maximum scaled constraint violation accepted at an optimum.
    pub feasibility: f64,
    pub optimality: f64,
}

pub const TOLERANCES: LpTolerances = LpTolerances {
    feasibility: 1e-7,
    optimality: 1e-9,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

impl RowSense {
    fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Eq => "=",
            RowSense::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub name: String,
    /// `(variable, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub names: Vec<String>,
    pub objective: Vec<f64>,
    pub upper: Vec<Option<f64>>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        LinearProgram {
            sense,
            names: Vec::new(),
            objective: Vec::new(),
            upper: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, objective: f64, upper: Option<f64>) -> usize {
        self.names.push(name.into());
        self.objective.push(objective);
        self.upper.push(upper);
        self.names.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: RowSense, rhs: f64) {
        self.rows.push(Row {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        });
    }

    pub fn var_count(&self) -> usize {
        self.names.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(|r| r.coeffs.len()).sum()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::MalformedLp("no variables".into()));
        }
        if self.objective.len() != n || self.upper.len() != n {
            return Err(Error::MalformedLp("inconsistent variable arrays".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::MalformedLp("non-finite objective coefficient".into()));
        }
        for (j, u) in self.upper.iter().enumerate() {
            if let Some(u) = u {
                if !u.is_finite() || *u < 0.0 {
                    return Err(Error::MalformedLp(format!("bad upper bound on {}", self.names[j])));
                }
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(Error::MalformedLp(format!("non-finite rhs in row {}", row.name)));
            }
            for &(j, c) in &row.coeffs {
                if j >= n || !c.is_finite() {
                    return Err(Error::MalformedLp(format!("bad coefficient in row {}", row.name)));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row, scaled by `max(1, |rhs|)`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let lhs: f64 = row.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
                let gap = match row.sense {
                    RowSense::Le => lhs - row.rhs,
                    RowSense::Ge => row.rhs - lhs,
                    RowSense::Eq => (lhs - row.rhs).abs(),
                };
                gap.max(0.0) / row.rhs.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SolveStats {
    pub variables: usize,
    pub rows: usize,
    pub nonzeros: usize,
    pub max_violation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective recomputed from `primal`; NaN unless optimal.
    pub objective: f64,
    pub primal: Vec<f64>,
    pub stats: SolveStats,
}

/// Solves with a bounded primal/dual simplex (steepest-edge pricing,
/// perturbation against cycling). Infeasible and unbounded problems are
/// reported through the status; numerical trouble is an error.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let direction = match lp.sense {
        Sense::Maximize => OptimizationDirection::Maximize,
        Sense::Minimize => OptimizationDirection::Minimize,
    };
    let mut problem = Problem::new(direction);
    let vars: Vec<_> = (0..lp.var_count())
        .map(|j| problem.add_var(lp.objective[j], (0.0, lp.upper[j].unwrap_or(f64::INFINITY))))
        .collect();
    for row in &lp.rows {
        let op = match row.sense {
            RowSense::Le => ComparisonOp::Le,
            RowSense::Eq => ComparisonOp::Eq,
            RowSense::Ge => ComparisonOp::Ge,
        };
        let mut merged: Vec<(usize, f64)> = row.coeffs.clone();
        merged.sort_by_key(|&(j, _)| j);
        let mut expr = minilp::LinearExpr::empty();
        let mut i = 0;
        while i < merged.len() {
            let j = merged[i].0;
            let mut c = 0.0;
            while i < merged.len() && merged[i].0 == j {
                c += merged[i].1;
                i += 1;
            }
            if c != 0.0 {
                expr.add(vars[j], c);
            }
        }
        problem.add_constraint(expr, op, row.rhs);
    }
    let stats = |max_violation| SolveStats {
        variables: lp.var_count(),
        rows: lp.row_count(),
        nonzeros: lp.nonzeros(),
        max_violation,
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| problem.solve()))
        .map_err(|_| Error::LpNumerical(format!("simplex backend aborted ({} rows, {} vars)", lp.row_count(), lp.var_count())))?;
    let solution = match outcome {
        Ok(s) => Some(s),
        Err(minilp::Error::Infeasible) => {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective: f64::NAN,
                primal: Vec::new(),
                stats: stats(f64::NAN),
            })
        }
        Err(minilp::Error::Unbounded) => None,
    };
    // The backend may also report an unbounded ray as an infinite optimum.
    let solution = match solution.filter(|s| s.objective().is_finite() && vars.iter().all(|&v| s[v].is_finite())) {
        Some(s) => s,
        None => {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                objective: f64::NAN,
                primal: Vec::new(),
                stats: stats(f64::NAN),
            })
        }
    };
    let primal: Vec<f64> = vars
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let x = solution[v].max(0.0);
            lp.upper[j].map_or(x, |u| x.min(u))
        })
        .collect();
    let violation = lp.max_violation(&primal);
    if !(violation <= TOLERANCES.feasibility) {
        return Err(Error::LpNumerical(format!(
            "optimal basis violates constraints by {violation:e} (tolerance {:e})",
            TOLERANCES.feasibility
        )));
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_value(&primal),
        primal,
        stats: stats(violation),
    })
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c))
        && !is_keyword(&name.to_ascii_lowercase())
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..=1e15).contains(&a) {
        format!("{a:e}")
    } else {
        format!("{a}")
    }
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (usize, f64)>, names: &[String]) {
    let mut first = true;
    for (j, c) in terms {
        let sign = if c.is_sign_negative() { "-" } else { "+" };
        if first && sign == "+" {
            let _ = write!(out, " {} {}", fmt_num(c), names[j]);
        } else {
            let _ = write!(out, " {sign} {} {}", fmt_num(c), names[j]);
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
}

/// Renders the program in CPLEX-LP format. Every variable appears in the
/// objective (zero coefficients included) so declaration order survives a
/// round trip.
pub fn lp_to_text(lp: &LinearProgram) -> Result<String> {
    lp.validate()?;
    for name in lp.names.iter().chain(lp.rows.iter().map(|r| &r.name)) {
        if !is_identifier(name) {
            return Err(Error::MalformedLp(format!("`{name}` is not a valid name")));
        }
    }
    let mut out = String::new();
    out.push_str(match lp.sense {
        Sense::Maximize => "Maximize\n",
        Sense::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    write_terms(&mut out, lp.objective.iter().copied().enumerate(), &lp.names);
    out.push_str("\nSubject To\n");
    for row in &lp.rows {
        let _ = write!(out, " {}:", row.name);
        write_terms(&mut out, row.coeffs.iter().copied(), &lp.names);
        let rhs = if row.rhs.is_sign_negative() && row.rhs != 0.0 {
            format!("-{}", fmt_num(row.rhs))
        } else {
            fmt_num(row.rhs)
        };
        let _ = writeln!(out, " {} {rhs}", row.sense.symbol());
    }
    out.push_str("Bounds\n");
    for (j, u) in lp.upper.iter().enumerate() {
        if let Some(u) = u {
            let _ = writeln!(out, " {} <= {}", lp.names[j], fmt_num(*u));
        }
    }
    out.push_str("End\n");
    Ok(out)
}

pub fn export_lp_text(lp: &LinearProgram, path: &Path) -> Result<()> {
    fs::write(path, lp_to_text(lp)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Colon,
    Plus,
    Minus,
    Cmp(RowSense),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    line_start: bool,
}

fn is_keyword(word: &str) -> bool {
    matches!(
        word,
        "maximize" | "maximise" | "maximum" | "max" | "minimize" | "minimise" | "minimum" | "min"
            | "subject" | "such" | "st" | "s.t." | "bounds" | "bound" | "end" | "general"
            | "generals" | "gen" | "binary" | "binaries" | "bin" | "free" | "inf" | "infinity"
    )
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('\\').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        let mut line_start = true;
        let err = |m: String| Error::Parse { line: line_no, message: m };
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let tok = if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut k = i + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        i = k;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                Tok::Num(s.parse().map_err(|_| err(format!("bad number `{s}`")))?)
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || "_.[]".contains(chars[i])) {
                    i += 1;
                }
                Tok::Ident(chars[start..i].iter().collect())
            } else {
                i += 1;
                match c {
                    ':' => Tok::Colon,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '<' | '>' | '=' => {
                        let next = chars.get(i).copied();
                        let sense = match (c, next) {
                            ('<', Some('=')) | ('=', Some('<')) => {
                                i += 1;
                                RowSense::Le
                            }
                            ('>', Some('=')) | ('=', Some('>')) => {
                                i += 1;
                                RowSense::Ge
                            }
                            ('<', _) => RowSense::Le,
                            ('>', _) => RowSense::Ge,
                            _ => RowSense::Eq,
                        };
                        Tok::Cmp(sense)
                    }
                    other => return Err(err(format!("unexpected character `{other}`"))),
                }
            };
            out.push(Token {
                tok,
                line: line_no,
                line_start,
            });
            line_start = false;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Objective(Sense),
    Constraints,
    Bounds,
    End,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        let line = self
            .peek()
            .or_else(|| self.tokens.last())
            .map_or(0, |t| t.line);
        Err(Error::Parse {
            line,
            message: message.into(),
        })
    }

    /// Section keyword at the current position, consuming it.
    fn section(&mut self) -> Result<Option<Section>> {
        let Some(t) = self.peek() else {
            return Ok(None);
        };
        if !t.line_start {
            return Ok(None);
        }
        let Tok::Ident(word) = &t.tok else {
            return Ok(None);
        };
        let w = word.to_ascii_lowercase();
        let next_word = match self.tokens.get(self.pos + 1) {
            Some(Token {
                tok: Tok::Ident(n),
                line_start: false,
                ..
            }) => Some(n.to_ascii_lowercase()),
            _ => None,
        };
        let next_is_colon = matches!(self.tokens.get(self.pos + 1), Some(Token { tok: Tok::Colon, .. }));
        if next_is_colon {
            return Ok(None);
        }
        let (section, width) = match w.as_str() {
            "maximize" | "maximise" | "maximum" | "max" => (Section::Objective(Sense::Maximize), 1),
            "minimize" | "minimise" | "minimum" | "min" => (Section::Objective(Sense::Minimize), 1),
            "subject" | "such" if next_word.as_deref() == Some("to") || next_word.as_deref() == Some("that") => {
                (Section::Constraints, 2)
            }
            "st" | "s.t." => (Section::Constraints, 1),
            "bounds" | "bound" => (Section::Bounds, 1),
            "end" => (Section::End, 1),
            "general" | "generals" | "gen" | "binary" | "binaries" | "bin" | "semi" | "sos" => {
                return self.err("integer sections are not supported");
            }
            _ => return Ok(None),
        };
        self.pos += width;
        Ok(Some(section))
    }

    fn var(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    /// Optional `name:` label.
    fn label(&mut self) -> Option<String> {
        if let (Some(Token { tok: Tok::Ident(n), .. }), Some(Token { tok: Tok::Colon, .. })) =
            (self.tokens.get(self.pos), self.tokens.get(self.pos + 1))
        {
            let n = n.clone();
            self.pos += 2;
            Some(n)
        } else {
            None
        }
    }

    /// Linear expression up to a comparison operator or section keyword.
    fn expression(&mut self) -> Result<Vec<(usize, f64)>> {
        let mut terms = Vec::new();
        let mut first = true;
        loop {
            let at_section = {
                let save = self.pos;
                let s = self.section()?;
                self.pos = save;
                s.is_some()
            };
            let Some(t) = self.peek() else { break };
            if at_section || matches!(t.tok, Tok::Cmp(_)) {
                break;
            }
            if !first && matches!(t.tok, Tok::Ident(_)) && self.tokens.get(self.pos + 1).is_some_and(|n| n.tok == Tok::Colon) {
                break;
            }
            let mut sign = 1.0;
            let mut saw_sign = false;
            while let Some(t) = self.peek() {
                match t.tok {
                    Tok::Plus => {}
                    Tok::Minus => sign = -sign,
                    _ => break,
                }
                saw_sign = true;
                self.pos += 1;
            }
            if !first && !saw_sign {
                return self.err("expected `+` or `-` between terms");
            }
            let mut coef = 1.0;
            if let Some(Token { tok: Tok::Num(v), .. }) = self.peek() {
                coef = *v;
                self.pos += 1;
            }
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Ident(name)) if !is_keyword(&name.to_ascii_lowercase()) => {
                    self.pos += 1;
                    let j = self.var(&name);
                    terms.push((j, sign * coef));
                }
                _ => {
                    // A lone `0` stands for an empty expression.
                    if coef == 0.0 && first {
                        first = false;
                        continue;
                    }
                    return self.err("expected a variable name");
                }
            }
            first = false;
        }
        Ok(terms)
    }

    fn signed_number(&mut self) -> Result<f64> {
        let mut sign = 1.0;
        while let Some(t) = self.peek() {
            match t.tok {
                Tok::Plus => {}
                Tok::Minus => sign = -sign,
                _ => break,
            }
            self.pos += 1;
        }
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(sign * v)
            }
            Some(Tok::Ident(w)) if matches!(w.to_ascii_lowercase().as_str(), "inf" | "infinity") => {
                self.pos += 1;
                Ok(sign * f64::INFINITY)
            }
            _ => self.err("expected a number"),
        }
    }
}

fn merge_terms(terms: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (j, c) in terms {
        if let Some(e) = out.iter_mut().find(|e| e.0 == j) {
            e.1 += c;
        } else {
            out.push((j, c));
        }
    }
    out
}

/// Parses CPLEX-LP text. Only continuous variables with lower bound 0 are
/// accepted.
pub fn parse_lp_text(text: &str) -> Result<LinearProgram> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
        names: Vec::new(),
        index: HashMap::new(),
    };
    let sense = match p.section()? {
        Some(Section::Objective(s)) => s,
        _ => return p.err("expected Maximize or Minimize"),
    };
    p.label();
    let objective_terms = merge_terms(p.expression()?);
    let mut rows: Vec<Row> = Vec::new();
    let mut upper: HashMap<usize, f64> = HashMap::new();
    let mut section = p.section()?;
    let mut ended = false;
    while let Some(s) = section {
        match s {
            Section::Constraints => {
                while p.peek().is_some() {
                    let save = p.pos;
                    if p.section()?.is_some() {
                        p.pos = save;
                        break;
                    }
                    let name = p.label().unwrap_or_else(|| format!("R{}", rows.len() + 1));
                    let coeffs = merge_terms(p.expression()?);
                    let sense = match p.peek().map(|t| t.tok.clone()) {
                        Some(Tok::Cmp(s)) => s,
                        _ => return p.err("expected a comparison operator"),
                    };
                    p.pos += 1;
                    let rhs = p.signed_number()?;
                    if !rhs.is_finite() {
                        return p.err("right-hand side must be finite");
                    }
                    if rows.iter().any(|r| r.name == name) {
                        return p.err(format!("duplicate row name `{name}`"));
                    }
                    rows.push(Row { name, coeffs, sense, rhs });
                }
            }
            Section::Bounds => {
                while p.peek().is_some() {
                    let save = p.pos;
                    if p.section()?.is_some() {
                        p.pos = save;
                        break;
                    }
                    parse_bound(&mut p, &mut upper)?;
                }
            }
            Section::End => {
                ended = true;
                break;
            }
            Section::Objective(_) => return p.err("second objective section"),
        }
        section = p.section()?;
        if section.is_none() && p.peek().is_some() {
            return p.err("unexpected token");
        }
    }
    if !ended {
        return p.err("missing End");
    }
    if p.peek().is_some() {
        return p.err("content after End");
    }
    let n = p.names.len();
    let mut objective = vec![0.0; n];
    for (j, c) in objective_terms {
        objective[j] += c;
    }
    let lp = LinearProgram {
        sense,
        upper: (0..n).map(|j| upper.get(&j).copied()).collect(),
        names: p.names,
        objective,
        rows,
    };
    lp.validate()?;
    Ok(lp)
}

fn parse_bound(p: &mut Parser, upper: &mut HashMap<usize, f64>) -> Result<()> {
    // Forms: `x <= u`, `x >= 0`, `0 <= x <= u`, `0 <= x`, `x = 0`.
    let leading = match p.peek().map(|t| t.tok.clone()) {
        Some(Tok::Num(_)) | Some(Tok::Minus) | Some(Tok::Plus) => {
            let l = p.signed_number()?;
            match p.peek().map(|t| t.tok.clone()) {
                Some(Tok::Cmp(RowSense::Le)) => p.pos += 1,
                _ => return p.err("expected `<=` after a lower bound"),
            }
            Some(l)
        }
        _ => None,
    };
    let name = match p.peek().map(|t| t.tok.clone()) {
        Some(Tok::Ident(n)) if !is_keyword(&n.to_ascii_lowercase()) => {
            p.pos += 1;
            n
        }
        Some(Tok::Ident(n)) if n.eq_ignore_ascii_case("free") => return p.err("free variables are not supported"),
        _ => return p.err("expected a variable name in bounds"),
    };
    let j = p.var(&name);
    if let Some(l) = leading {
        if l != 0.0 {
            return p.err(format!("lower bound of `{name}` must be 0"));
        }
    }
    match p.peek().map(|t| t.tok.clone()) {
        Some(Tok::Cmp(RowSense::Le)) => {
            p.pos += 1;
            let u = p.signed_number()?;
            if u.is_finite() {
                upper.insert(j, u);
            }
        }
        Some(Tok::Cmp(RowSense::Ge)) if leading.is_none() => {
            p.pos += 1;
            let l = p.signed_number()?;
            if l != 0.0 {
                return p.err(format!("lower bound of `{name}` must be 0"));
            }
        }
        Some(Tok::Cmp(RowSense::Eq)) if leading.is_none() => {
            p.pos += 1;
            let v = p.signed_number()?;
            if v != 0.0 {
                return p.err(format!("`{name}` may only be fixed at 0"));
            }
            upper.insert(j, 0.0);
        }
        Some(Tok::Ident(w)) if w.eq_ignore_ascii_case("free") => {
            return p.err("free variables are not supported");
        }
        _ if leading.is_some() => {}
        _ => return p.err("expected a bound operator"),
    }
    Ok(())
}

pub fn load_lp_text(path: &Path) -> Result<LinearProgram> {
    parse_lp_text(&fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportedSolution {
    pub solution: LpSolution,
    /// Value from a `# objective: v` line, if present.
    pub reported_objective: Option<f64>,
    /// Variables absent from the file (set to 0).
    pub missing: usize,
}

/// Parses `name value` lines for the variables of `lp`.
pub fn parse_solution(text: &str, lp: &LinearProgram) -> Result<ImportedSolution> {
    let index: HashMap<&str, usize> = lp.names.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
    let mut primal = vec![0.0; lp.var_count()];
    let mut seen = vec![false; lp.var_count()];
    let mut reported = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("objective:") {
                reported = Some(v.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: "bad objective value".into(),
                })?);
            }
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(name), Some(value), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected `name value`".into(),
            });
        };
        let j = *index.get(name).ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
        let v: f64 = value.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("`{value}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: idx + 1,
                message: "value is not finite".into(),
            });
        }
        primal[j] = v;
        seen[j] = true;
    }
    let missing = seen.iter().filter(|s| !**s).count();
    if missing > 0 {
        log::warn!("{missing} variables missing from the solution file; set to 0");
    }
    let violation = lp.max_violation(&primal);
    Ok(ImportedSolution {
        solution: LpSolution {
            status: LpStatus::Optimal,
            objective: lp.objective_value(&primal),
            primal,
            stats: SolveStats {
                variables: lp.var_count(),
                rows: lp.row_count(),
                nonzeros: lp.nonzeros(),
                max_violation: violation,
            },
        },
        reported_objective: reported,
        missing,
    })
}

pub fn import_solution(path: &Path, lp: &LinearProgram) -> Result<ImportedSolution> {
    parse_solution(&fs::read_to_string(path)?, lp)
}

/// Renders a solution in the format read by [`parse_solution`].
pub fn solution_to_text(lp: &LinearProgram, solution: &LpSolution) -> String {
    let mut out = format!("# objective: {}\n", solution.objective);
    for (name, v) in lp.names.iter().zip(&solution.primal) {
        let _ = writeln!(out, "{name} {v}");
    }
    out
}
