//! Expression language for scalar fields.
//!
//! Hamiltonians, densities, section graphs and time-dependent coefficients
//! are all given as expressions over a coordinate chart plus the reserved
//! time symbol `t`. Identifiers that are neither coordinates, `t`, nor one
//! of the built-in functions are coefficient references resolved against a
//! [`CoefficientTable`] at evaluation time.
//!
//! Grammar (ASCII operators, `^` right-associative and binding tighter
//! than unary minus):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := unary (('*'|'/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::diff::Carrier;

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn sym(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

/// Parsed expression tree.
///
/// Literals produced by the parser are always non-negative (a leading
/// minus parses as [`ExprNode::Neg`]); trees built programmatically should
/// keep that invariant so pretty-print/parse round-trips structurally.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Literal(f64),
    /// Coordinate variable; `idx` is the position in the chart.
    Var { idx: usize, name: String },
    /// The reserved time symbol `t`.
    Time,
    /// Reference to a named entry of the coefficient table.
    Coeff(String),
    Neg(Box<ExprNode>),
    Binary {
        op: BinOp,
        lhs: Box<ExprNode>,
        rhs: Box<ExprNode>,
    },
    Call { func: Func, arg: Box<ExprNode> },
}

impl ExprNode {
    pub fn literal(c: f64) -> ExprNode {
        if c < 0.0 {
            ExprNode::Neg(Box::new(ExprNode::Literal(-c)))
        } else {
            ExprNode::Literal(c)
        }
    }

    pub fn var(idx: usize, name: &str) -> ExprNode {
        ExprNode::Var { idx, name: name.to_string() }
    }

    pub fn binary(op: BinOp, lhs: ExprNode, rhs: ExprNode) -> ExprNode {
        ExprNode::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Collects every coefficient name referenced in the tree.
    pub fn coeff_refs(&self, out: &mut Vec<String>) {
        match self {
            ExprNode::Coeff(name) => {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
            ExprNode::Neg(e) | ExprNode::Call { arg: e, .. } => e.coeff_refs(out),
            ExprNode::Binary { lhs, rhs, .. } => {
                lhs.coeff_refs(out);
                rhs.coeff_refs(out);
            }
            _ => {}
        }
    }

    /// True if the tree references `t` directly.
    pub fn mentions_time(&self) -> bool {
        match self {
            ExprNode::Time => true,
            ExprNode::Neg(e) | ExprNode::Call { arg: e, .. } => e.mentions_time(),
            ExprNode::Binary { lhs, rhs, .. } => lhs.mentions_time() || rhs.mentions_time(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("parse error at byte {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

fn perr<T>(pos: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { pos, message: message.into() })
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: &'static str },
    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),
    #[error("coefficient `{0}` may depend on t only")]
    CoefficientUsesCoordinate(String),
    #[error("point has {got} components, chart has {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("point violates the domain predicate (zero of `{0}`)")]
    OutsideDomain(String),
    #[error("jet evaluation unsupported for field `{0}`")]
    UnsupportedJet(String),
}

// ---------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '+' => { toks.push((Tok::Plus, i)); i += 1 }
            '-' => { toks.push((Tok::Minus, i)); i += 1 }
            '*' => { toks.push((Tok::Star, i)); i += 1 }
            '/' => { toks.push((Tok::Slash, i)); i += 1 }
            '^' => { toks.push((Tok::Caret, i)); i += 1 }
            '(' => { toks.push((Tok::LParen, i)); i += 1 }
            ')' => { toks.push((Tok::RParen, i)); i += 1 }
            ',' => { toks.push((Tok::Comma, i)); i += 1 }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' {
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && i + 1 < bytes.len()
                        && ((bytes[i + 1] as char).is_ascii_digit()
                            || bytes[i + 1] == b'+'
                            || bytes[i + 1] == b'-')
                    {
                        i += 2;
                    } else {
                        break;
                    }
                }
                let s = &text[start..i];
                match s.parse::<f64>() {
                    Ok(v) => toks.push((Tok::Num(v), start)),
                    Err(_) => return perr(start, format!("malformed number `{s}`")),
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => return perr(i, format!("unexpected character `{c}`")),
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    coords: &'a [String],
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|&(_, p)| p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            perr(self.here(), format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = ExprNode::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = ExprNode::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<ExprNode, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            Ok(ExprNode::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<ExprNode, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exp = self.unary()?;
            Ok(ExprNode::binary(BinOp::Pow, base, exp))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<ExprNode, ParseError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(ExprNode::Literal(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    let func = match Func::from_name(&name) {
                        Some(f) => f,
                        None => return perr(pos, format!("`{name}` is not a function")),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() == Some(&Tok::Comma) {
                        return perr(self.here(), format!("`{name}` takes exactly one argument"));
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(ExprNode::Call { func, arg: Box::new(arg) })
                } else if Func::from_name(&name).is_some() {
                    perr(pos, format!("function `{name}` used without arguments"))
                } else if name == "t" {
                    Ok(ExprNode::Time)
                } else if let Some(idx) = self.coords.iter().position(|c| *c == name) {
                    Ok(ExprNode::Var { idx, name })
                } else {
                    Ok(ExprNode::Coeff(name))
                }
            }
            Some(_) => perr(pos, "expected a value"),
            None => perr(pos, "unexpected end of input"),
        }
    }
}

/// Parses `text` against a coordinate list. Identifiers not in `coords`
/// (and not `t` or a function name) become coefficient references.
pub fn parse(text: &str, coords: &[String]) -> Result<ExprNode, ParseError> {
    if text.trim().is_empty() {
        return perr(0, "empty expression");
    }
    debug_assert!(!coords.iter().any(|c| c == "t"), "`t` is reserved");
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, coords, end: text.len() };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return perr(p.here(), "trailing input");
    }
    Ok(e)
}

// ---------------------------------------------------------------------
// Pretty printer
// ---------------------------------------------------------------------

fn print_into(node: &ExprNode, min_prec: u8, out: &mut String) {
    use fmt::Write;
    match node {
        ExprNode::Literal(v) => {
            let _ = write!(out, "{v}");
        }
        ExprNode::Var { name, .. } => out.push_str(name),
        ExprNode::Time => out.push('t'),
        ExprNode::Coeff(name) => out.push_str(name),
        ExprNode::Neg(e) => {
            let parens = 3 < min_prec;
            if parens {
                out.push('(');
            }
            out.push('-');
            print_into(e, 3, out);
            if parens {
                out.push(')');
            }
        }
        ExprNode::Binary { op, lhs, rhs } => {
            let prec = op.prec();
            let parens = prec < min_prec;
            if parens {
                out.push('(');
            }
            // `^` is right-associative with an atom-level left operand;
            // the additive/multiplicative ops are left-associative.
            let (lmin, rmin) = match op {
                BinOp::Pow => (5, 3),
                _ => (prec, prec + 1),
            };
            print_into(lhs, lmin, out);
            out.push(' ');
            out.push_str(op.sym());
            out.push(' ');
            print_into(rhs, rmin, out);
            if parens {
                out.push(')');
            }
        }
        ExprNode::Call { func, arg } => {
            out.push_str(func.name());
            out.push('(');
            print_into(arg, 0, out);
            out.push(')');
        }
    }
}

/// Canonical text form; `parse(pretty_print(e))` is structurally equal to `e`.
pub fn pretty_print(node: &ExprNode) -> String {
    let mut s = String::new();
    print_into(node, 0, &mut s);
    s
}

// ---------------------------------------------------------------------
// Coefficient table
// ---------------------------------------------------------------------

/// Named coefficients, each an expression in `t` alone (constants allowed).
#[derive(Debug, Clone, Default)]
pub struct CoefficientTable {
    entries: BTreeMap<String, ExprNode>,
}

impl CoefficientTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_constant(&mut self, name: &str, value: f64) {
        self.entries.insert(name.to_string(), ExprNode::literal(value));
    }

    /// Parses `text` with an empty coordinate list, so only `t` and other
    /// coefficient names may appear.
    pub fn set_expr(&mut self, name: &str, text: &str) -> Result<(), ParseError> {
        let e = parse(text, &[])?;
        self.entries.insert(name.to_string(), e);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value_at(&self, name: &str, t: f64) -> Result<f64, EvalError> {
        let node = self
            .entries
            .get(name)
            .ok_or_else(|| EvalError::UnknownCoefficient(name.to_string()))?;
        eval_node::<f64>(node, &[], t, self)
    }

    /// True if `name` resolves to an expression mentioning `t` (directly
    /// or through another coefficient).
    pub fn is_time_dependent(&self, name: &str) -> bool {
        match self.entries.get(name) {
            None => false,
            Some(node) => {
                if node.mentions_time() {
                    return true;
                }
                let mut refs = Vec::new();
                node.coeff_refs(&mut refs);
                refs.iter().any(|r| self.is_time_dependent(r))
            }
        }
    }
}

// ---------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------

fn domain_err<C>(node: &ExprNode, reason: &'static str) -> Result<C, EvalError> {
    Err(EvalError::Domain { expr: pretty_print(node), reason })
}

/// Evaluates a tree at a point over any numeric carrier (plain reals or
/// jets). The time argument is a passive parameter: coefficients are
/// evaluated at plain `t` and injected as constants.
pub fn eval_node<C: Carrier>(
    node: &ExprNode,
    point: &[C],
    time: f64,
    table: &CoefficientTable,
) -> Result<C, EvalError> {
    match node {
        ExprNode::Literal(v) => match point.first() {
            Some(p) => Ok(p.constant_like(*v)),
            None => Ok(C::from_f64(*v)),
        },
        ExprNode::Var { idx, name } => point.get(*idx).cloned().ok_or_else(|| {
            // A coefficient expression evaluated with an empty point list
            // reaching a Var means it used a coordinate.
            if point.is_empty() {
                EvalError::CoefficientUsesCoordinate(name.clone())
            } else {
                EvalError::DimensionMismatch { got: point.len(), want: *idx + 1 }
            }
        }),
        ExprNode::Time => match point.first() {
            Some(p) => Ok(p.constant_like(time)),
            None => Ok(C::from_f64(time)),
        },
        ExprNode::Coeff(name) => {
            let v = table.value_at(name, time)?;
            match point.first() {
                Some(p) => Ok(p.constant_like(v)),
                None => Ok(C::from_f64(v)),
            }
        }
        ExprNode::Neg(e) => Ok(eval_node(e, point, time, table)?.neg()),
        ExprNode::Binary { op, lhs, rhs } => {
            let a = eval_node(lhs, point, time, table)?;
            match op {
                BinOp::Add => Ok(a.add(&eval_node(rhs, point, time, table)?)),
                BinOp::Sub => Ok(a.sub(&eval_node(rhs, point, time, table)?)),
                BinOp::Mul => Ok(a.mul(&eval_node(rhs, point, time, table)?)),
                BinOp::Div => {
                    let b = eval_node(rhs, point, time, table)?;
                    match a.div(&b) {
                        Some(q) => Ok(q),
                        None => domain_err(node, "division by zero"),
                    }
                }
                BinOp::Pow => {
                    let p = eval_node(rhs, point, time, table)?;
                    // Integer exponents use repeated multiplication; anything
                    // else goes through exp(p ln a) and needs a > 0.
                    let pv = p.val();
                    if p.is_const() && pv.fract() == 0.0 && pv.abs() <= i32::MAX as f64 {
                        match a.powi(pv as i32) {
                            Some(r) => Ok(r),
                            None => domain_err(node, "zero base with negative exponent"),
                        }
                    } else {
                        match a.ln() {
                            Some(l) => Ok(p.mul(&l).exp()),
                            None => domain_err(node, "non-integer power of a non-positive base"),
                        }
                    }
                }
            }
        }
        ExprNode::Call { func, arg } => {
            let a = eval_node(arg, point, time, table)?;
            match func {
                Func::Sin => Ok(a.sin()),
                Func::Cos => Ok(a.cos()),
                Func::Exp => Ok(a.exp()),
                Func::Tanh => Ok(a.tanh()),
                Func::Abs => Ok(a.abs()),
                Func::Ln => match a.ln() {
                    Some(r) => Ok(r),
                    None => domain_err(node, "ln of a non-positive value"),
                },
                Func::Sqrt => match a.sqrt() {
                    Some(r) => Ok(r),
                    None => domain_err(node, "sqrt of a negative value"),
                },
            }
        }
    }
}

// ---------------------------------------------------------------------
// Chart and scalar fields
// ---------------------------------------------------------------------

/// A coordinate chart: ordered coordinate names plus the coefficient table
/// shared by every field on the chart.
#[derive(Debug, Clone)]
pub struct Chart {
    coords: Arc<Vec<String>>,
    table: Arc<CoefficientTable>,
}

impl PartialEq for Chart {
    fn eq(&self, other: &Self) -> bool {
        self.coords == other.coords
    }
}

impl Chart {
    pub fn new(coords: &[&str], table: CoefficientTable) -> Chart {
        assert!(!coords.is_empty(), "chart needs at least one coordinate");
        assert!(!coords.contains(&"t"), "`t` is reserved for time");
        let names: Vec<String> = coords.iter().map(|s| s.to_string()).collect();
        for (i, c) in names.iter().enumerate() {
            assert!(!names[..i].contains(c), "duplicate coordinate `{c}`");
        }
        Chart { coords: Arc::new(names), table: Arc::new(table) }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c == name)
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.table
    }

    /// Chart over the first `dim−1` coordinates, sharing the table.
    pub fn base_chart(&self) -> Chart {
        assert!(self.dim() >= 2);
        Chart {
            coords: Arc::new(self.coords[..self.dim() - 1].to_vec()),
            table: Arc::clone(&self.table),
        }
    }
}

/// An evaluable scalar field `(point, time) → ℝ` over a chart,
/// differentiable through any jet carrier.
#[derive(Debug, Clone)]
pub struct ScalarField {
    expr: Arc<ExprNode>,
    chart: Chart,
}

impl ScalarField {
    pub fn parse(text: &str, chart: &Chart) -> Result<ScalarField, ParseError> {
        let expr = parse(text, chart.coords())?;
        Ok(ScalarField { expr: Arc::new(expr), chart: chart.clone() })
    }

    pub fn from_expr(expr: ExprNode, chart: &Chart) -> ScalarField {
        ScalarField { expr: Arc::new(expr), chart: chart.clone() }
    }

    pub fn constant(c: f64, chart: &Chart) -> ScalarField {
        ScalarField::from_expr(ExprNode::literal(c), chart)
    }

    /// The i-th coordinate function.
    pub fn coordinate(idx: usize, chart: &Chart) -> ScalarField {
        assert!(idx < chart.dim());
        ScalarField::from_expr(ExprNode::var(idx, &chart.coords()[idx]), chart)
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn expr(&self) -> &ExprNode {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn eval<C: Carrier>(&self, point: &[C], time: f64) -> Result<C, EvalError> {
        if point.len() != self.chart.dim() {
            return Err(EvalError::DimensionMismatch {
                got: point.len(),
                want: self.chart.dim(),
            });
        }
        eval_node(&self.expr, point, time, self.chart.table())
    }

    pub fn text(&self) -> String {
        pretty_print(&self.expr)
    }

    /// False if the field mentions `t` or any t-dependent coefficient.
    pub fn is_autonomous(&self) -> bool {
        if self.expr.mentions_time() {
            return false;
        }
        let mut refs = Vec::new();
        self.expr.coeff_refs(&mut refs);
        !refs.iter().any(|r| self.chart.table().is_time_dependent(r))
    }

    fn combine(&self, op: BinOp, other: &ScalarField) -> ScalarField {
        assert_eq!(self.chart, other.chart, "fields live on different charts");
        ScalarField::from_expr(
            ExprNode::binary(op, (*self.expr).clone(), (*other.expr).clone()),
            &self.chart,
        )
    }

    pub fn product(&self, other: &ScalarField) -> ScalarField {
        self.combine(BinOp::Mul, other)
    }

    pub fn sum(&self, other: &ScalarField) -> ScalarField {
        self.combine(BinOp::Add, other)
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField::from_expr(
            ExprNode::binary(BinOp::Mul, ExprNode::literal(c), (*self.expr).clone()),
            &self.chart,
        )
    }
}
