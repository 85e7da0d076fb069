//! Scalar expression language.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := factor (('*' | '/') factor)*
//! factor   := '-'? atom ('^' exponent)?
//! exponent := '-'? number ('/' number)? | '(' constant-expr ')'
//! atom     := number | symbol | '(' expr ')' | func '(' expr ')'
//! func     := 'sqrt' | 'exp' | 'ln'
//! ```
//!
//! A fraction directly after `^` is part of the exponent, so `r^3/2` is
//! `r^(3/2)`. Exponents must be constant; `r^s` is rejected.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jet::{Jet, JetDomainError};

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Sqrt(Box<Node>),
    Exp(Box<Node>),
    Ln(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
}

/// A parsed expression together with the symbols it was parsed against.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    symbols: Arc<[String]>,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str, symbols: &[&str]) -> Result<Expr> {
        let symbols: Arc<[String]> = symbols.iter().map(|s| s.to_string()).collect();
        let tokens = lex(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            symbols: &symbols,
            len: source.len(),
        };
        if p.peek_is(&Tok::End) {
            return Err(Error::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let root = p.expr()?;
        if !p.peek_is(&Tok::End) {
            return Err(Error::Syntax {
                offset: p.offset(),
                message: "unexpected trailing input".into(),
            });
        }
        Ok(Expr { symbols, root })
    }

    pub fn constant(value: f64, symbols: &[&str]) -> Expr {
        Expr {
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
            root: konst(value),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    fn symbol_index(&self, name: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == name)
    }

    /// True when the expression references `name`.
    pub fn uses(&self, name: &str) -> bool {
        match self.symbol_index(name) {
            Some(k) => node_uses(&self.root, k),
            None => false,
        }
    }

    pub fn is_constant(&self) -> bool {
        (0..self.symbols.len()).all(|k| !node_uses(&self.root, k))
    }

    /// Re-express over another symbol list; every used symbol must exist there.
    pub fn rebind(&self, symbols: &[&str]) -> Result<Expr> {
        let map: Vec<Option<usize>> = self
            .symbols
            .iter()
            .map(|s| symbols.iter().position(|t| t == s))
            .collect();
        for (k, m) in map.iter().enumerate() {
            if m.is_none() && node_uses(&self.root, k) {
                return Err(Error::UnknownSymbol(self.symbols[k].clone()));
            }
        }
        Ok(Expr {
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
            root: remap(&self.root, &map),
        })
    }

    /// Symbolic partial derivative with respect to `name`.
    pub fn derivative(&self, name: &str) -> Expr {
        let root = match self.symbol_index(name) {
            Some(k) => diff(&self.root, k),
            None => Node::Const(0.0),
        };
        Expr {
            symbols: self.symbols.clone(),
            root,
        }
    }

    pub fn eval(&self, vals: &[f64]) -> Result<f64> {
        self.eval_guarded(vals, 0.0)
    }

    /// Evaluate, treating any sqrt/ln/pow argument `<= guard` or divisor with
    /// `|d| <= guard` as a domain error.
    pub fn eval_guarded(&self, vals: &[f64], guard: f64) -> Result<f64> {
        assert_eq!(vals.len(), self.symbols.len(), "one value per symbol");
        eval_node(&self.root, vals, &0.0, guard, &self.symbols)
    }

    /// Evaluate in jet arithmetic; `vars` holds one jet per declared symbol.
    pub fn eval_jet(&self, vars: &[Jet]) -> Result<Jet> {
        assert_eq!(vars.len(), self.symbols.len(), "one jet per symbol");
        assert!(!vars.is_empty(), "jet evaluation needs at least one symbol");
        let zero = vars[0].scale(0.0);
        eval_node(&self.root, vars, &zero, 0.0, &self.symbols)
    }

    /// Jet at `(r0, s0)` binding `r` and `s` to the coordinates and `sigma` to `+1`.
    pub fn jet_rs(&self, r0: f64, s0: f64, degree: usize) -> Result<Jet> {
        let vars = self
            .symbols
            .iter()
            .map(|name| match name.as_str() {
                "r" => Ok(Jet::var_r(r0, s0, degree)),
                "s" => Ok(Jet::var_s(r0, s0, degree)),
                "sigma" => Ok(Jet::constant(r0, s0, degree, 1.0)),
                other => Err(Error::UnknownSymbol(other.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        self.eval_jet(&vars)
    }

    /// Printed form of a sub-node using this expression's symbol names.
    pub fn show(&self, node: &Node) -> String {
        Printer {
            symbols: &self.symbols,
        }
        .render(node)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.show(&self.root))
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut k = i + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && bytes[k].is_ascii_digit() {
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    i = k;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(Error::Syntax {
                offset: i,
                message: format!("unexpected character `{}`", &src[i..].chars().next().unwrap()),
            });
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

// ---------------------------------------------------------------- parsing

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    symbols: &'a [String],
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn peek_is(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.len, |t| t.1)
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_is(&Tok::Op(c)) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Op('/') => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Node> {
        let negate = if self.peek_is(&Tok::Op('-')) {
            self.bump();
            true
        } else {
            false
        };
        let mut base = self.atom()?;
        if self.peek_is(&Tok::Op('^')) {
            self.bump();
            let p = self.exponent()?;
            base = Node::Pow(Box::new(base), p);
        }
        Ok(if negate { Node::Neg(Box::new(base)) } else { base })
    }

    fn number(&mut self) -> Result<f64> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(v)
            }
            _ => self.err("expected a number"),
        }
    }

    fn exponent(&mut self) -> Result<f64> {
        let start = self.offset();
        match self.peek().clone() {
            Tok::Op('(') => {
                self.bump();
                let e = self.expr()?;
                self.expect(')')?;
                if (0..self.symbols.len()).any(|k| node_uses(&e, k)) {
                    let text = Printer {
                        symbols: self.symbols,
                    }
                    .render(&e);
                    return Err(Error::NonConstantExponent(text));
                }
                eval_node(&e, &[] as &[f64], &0.0, 0.0, self.symbols).map_err(|_| Error::Syntax {
                    offset: start,
                    message: "exponent does not evaluate to a number".into(),
                })
            }
            Tok::Op('-') => {
                self.bump();
                Ok(-self.fraction()?)
            }
            Tok::Num(_) => self.fraction(),
            Tok::Ident(name) => {
                if self.symbols.contains(&name) {
                    Err(Error::NonConstantExponent(name))
                } else if is_func(&name) {
                    Err(Error::NonConstantExponent(format!("{name}(...)")))
                } else {
                    Err(Error::UnknownSymbol(name))
                }
            }
            _ => self.err("expected an exponent"),
        }
    }

    fn fraction(&mut self) -> Result<f64> {
        let num = self.number()?;
        if self.peek_is(&Tok::Op('/')) && matches!(self.tokens[self.pos + 1].0, Tok::Num(_)) {
            self.bump();
            let den = self.number()?;
            if den == 0.0 {
                return self.err("zero denominator in exponent");
            }
            return Ok(num / den);
        }
        Ok(num)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Const(v))
            }
            Tok::Op('(') => {
                self.bump();
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if is_func(&name) && self.tokens[self.pos + 1].0 == Tok::Op('(') {
                    self.bump();
                    self.bump();
                    let arg = Box::new(self.expr()?);
                    self.expect(')')?;
                    return Ok(match name.as_str() {
                        "sqrt" => Node::Sqrt(arg),
                        "exp" => Node::Exp(arg),
                        _ => Node::Ln(arg),
                    });
                }
                match self.symbols.iter().position(|s| *s == name) {
                    Some(k) => {
                        self.bump();
                        Ok(Node::Var(k))
                    }
                    None => Err(Error::UnknownSymbol(name)),
                }
            }
            Tok::End => self.err("unexpected end of input"),
            Tok::Op(c) => self.err(format!("unexpected `{c}`")),
        }
    }
}

fn is_func(name: &str) -> bool {
    matches!(name, "sqrt" | "exp" | "ln")
}

// ---------------------------------------------------------------- printing

struct Printer<'a> {
    symbols: &'a [String],
}

fn is_atomic(n: &Node) -> bool {
    matches!(
        n,
        Node::Const(_) | Node::Var(_) | Node::Sqrt(_) | Node::Exp(_) | Node::Ln(_)
    )
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

impl Printer<'_> {
    fn render(&self, n: &Node) -> String {
        match n {
            Node::Const(v) if *v < 0.0 => format!("(-{})", fmt_num(-v)),
            Node::Const(v) => fmt_num(*v),
            Node::Var(k) => self.symbols[*k].clone(),
            Node::Neg(a) => match **a {
                Node::Pow(..) => format!("-{}", self.render(a)),
                _ => format!("-{}", self.wrap(a, is_atomic(a))),
            },
            Node::Sqrt(a) => format!("sqrt({})", self.render(a)),
            Node::Exp(a) => format!("exp({})", self.render(a)),
            Node::Ln(a) => format!("ln({})", self.render(a)),
            Node::Add(a, b) => format!("{} + {}", self.render(a), self.wrap(b, !is_sum(b))),
            Node::Sub(a, b) => format!("{} - {}", self.render(a), self.wrap(b, !is_sum(b))),
            Node::Mul(a, b) => format!(
                "{}*{}",
                self.wrap(a, !is_sum(a)),
                self.wrap(b, !is_sum(b) && !is_product(b))
            ),
            Node::Div(a, b) => {
                // `r^2/3` would re-lex as the exponent 2/3.
                let numeric = matches!(**b, Node::Const(_));
                let bare = !is_sum(b) && !is_product(b) && !(numeric && ends_with_pow(a));
                format!("{}/{}", self.wrap(a, !is_sum(a)), self.wrap(b, bare))
            }
            Node::Pow(a, p) => {
                let base = self.wrap(a, is_atomic(a) && !matches!(**a, Node::Const(v) if v < 0.0));
                if *p < 0.0 {
                    format!("{base}^(-{})", fmt_num(-p))
                } else {
                    format!("{base}^{}", fmt_num(*p))
                }
            }
        }
    }

    fn wrap(&self, n: &Node, bare: bool) -> String {
        if bare {
            self.render(n)
        } else {
            format!("({})", self.render(n))
        }
    }
}

fn ends_with_pow(n: &Node) -> bool {
    match n {
        Node::Pow(..) => true,
        Node::Neg(a) => matches!(**a, Node::Pow(..)),
        Node::Mul(_, b) | Node::Div(_, b) => !is_sum(b) && !is_product(b) && ends_with_pow(b),
        _ => false,
    }
}

fn is_sum(n: &Node) -> bool {
    matches!(n, Node::Add(..) | Node::Sub(..))
}

fn is_product(n: &Node) -> bool {
    matches!(n, Node::Mul(..) | Node::Div(..))
}

// ---------------------------------------------------------------- structure

fn node_uses(n: &Node, k: usize) -> bool {
    match n {
        Node::Const(_) => false,
        Node::Var(j) => *j == k,
        Node::Neg(a) | Node::Sqrt(a) | Node::Exp(a) | Node::Ln(a) | Node::Pow(a, _) => {
            node_uses(a, k)
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            node_uses(a, k) || node_uses(b, k)
        }
    }
}

fn remap(n: &Node, map: &[Option<usize>]) -> Node {
    let b = |a: &Node| Box::new(remap(a, map));
    match n {
        Node::Const(v) => Node::Const(*v),
        Node::Var(k) => Node::Var(map[*k].expect("checked by rebind")),
        Node::Neg(a) => Node::Neg(b(a)),
        Node::Sqrt(a) => Node::Sqrt(b(a)),
        Node::Exp(a) => Node::Exp(b(a)),
        Node::Ln(a) => Node::Ln(b(a)),
        Node::Pow(a, p) => Node::Pow(b(a), *p),
        Node::Add(x, y) => Node::Add(b(x), b(y)),
        Node::Sub(x, y) => Node::Sub(b(x), b(y)),
        Node::Mul(x, y) => Node::Mul(b(x), b(y)),
        Node::Div(x, y) => Node::Div(b(x), b(y)),
    }
}

fn konst(v: f64) -> Node {
    if v < 0.0 {
        Node::Neg(Box::new(Node::Const(-v)))
    } else {
        Node::Const(v)
    }
}

fn is_zero(n: &Node) -> bool {
    matches!(n, Node::Const(v) if *v == 0.0)
}

fn is_one(n: &Node) -> bool {
    matches!(n, Node::Const(v) if *v == 1.0)
}

fn add(a: Node, b: Node) -> Node {
    if is_zero(&a) {
        b
    } else if is_zero(&b) {
        a
    } else {
        Node::Add(Box::new(a), Box::new(b))
    }
}

fn sub(a: Node, b: Node) -> Node {
    if is_zero(&b) {
        a
    } else if is_zero(&a) {
        neg(b)
    } else {
        Node::Sub(Box::new(a), Box::new(b))
    }
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(v) if v == 0.0 => a,
        Node::Neg(inner) => *inner,
        _ => Node::Neg(Box::new(a)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    if is_zero(&a) || is_zero(&b) {
        Node::Const(0.0)
    } else if is_one(&a) {
        b
    } else if is_one(&b) {
        a
    } else {
        Node::Mul(Box::new(a), Box::new(b))
    }
}

fn div(a: Node, b: Node) -> Node {
    if is_zero(&a) {
        Node::Const(0.0)
    } else if is_one(&b) {
        a
    } else {
        Node::Div(Box::new(a), Box::new(b))
    }
}

fn diff(n: &Node, k: usize) -> Node {
    match n {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(j) => Node::Const(if *j == k { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(diff(a, k)),
        Node::Add(a, b) => add(diff(a, k), diff(b, k)),
        Node::Sub(a, b) => sub(diff(a, k), diff(b, k)),
        Node::Mul(a, b) => add(
            mul(diff(a, k), (**b).clone()),
            mul((**a).clone(), diff(b, k)),
        ),
        Node::Div(a, b) => {
            // (a' b - a b') / b^2
            let num = sub(
                mul(diff(a, k), (**b).clone()),
                mul((**a).clone(), diff(b, k)),
            );
            div(num, Node::Pow(b.clone(), 2.0))
        }
        Node::Sqrt(a) => div(
            diff(a, k),
            mul(Node::Const(2.0), Node::Sqrt(a.clone())),
        ),
        Node::Exp(a) => mul(diff(a, k), Node::Exp(a.clone())),
        Node::Ln(a) => div(diff(a, k), (**a).clone()),
        Node::Pow(a, p) => {
            let da = diff(a, k);
            if is_zero(&da) {
                return Node::Const(0.0);
            }
            let inner = if *p - 1.0 == 1.0 {
                (**a).clone()
            } else if *p - 1.0 == 0.0 {
                Node::Const(1.0)
            } else {
                Node::Pow(a.clone(), p - 1.0)
            };
            mul(mul(konst(*p), inner), da)
        }
    }
}

// ---------------------------------------------------------------- evaluation

trait Scalar: Clone {
    fn lift(&self, c: f64) -> Self;
    fn val(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn div(&self, o: &Self) -> Result<Self, JetDomainError>;
    fn sqrt(&self) -> Result<Self, JetDomainError>;
    fn exp(&self) -> Self;
    fn ln(&self) -> Result<Self, JetDomainError>;
    fn powf(&self, p: f64) -> Result<Self, JetDomainError>;
}

impl Scalar for f64 {
    fn lift(&self, c: f64) -> f64 {
        c
    }
    fn val(&self) -> f64 {
        *self
    }
    fn add(&self, o: &f64) -> f64 {
        self + o
    }
    fn sub(&self, o: &f64) -> f64 {
        self - o
    }
    fn mul(&self, o: &f64) -> f64 {
        self * o
    }
    fn neg(&self) -> f64 {
        -self
    }
    fn div(&self, o: &f64) -> Result<f64, JetDomainError> {
        if *o == 0.0 {
            return Err(JetDomainError { op: "division", value: *o });
        }
        Ok(self / o)
    }
    fn sqrt(&self) -> Result<f64, JetDomainError> {
        if *self < 0.0 || self.is_nan() {
            return Err(JetDomainError { op: "sqrt", value: *self });
        }
        Ok(f64::sqrt(*self))
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn ln(&self) -> Result<f64, JetDomainError> {
        if !(*self > 0.0) {
            return Err(JetDomainError { op: "ln", value: *self });
        }
        Ok(f64::ln(*self))
    }
    fn powf(&self, p: f64) -> Result<f64, JetDomainError> {
        if p.fract() == 0.0 {
            if p < 0.0 && *self == 0.0 {
                return Err(JetDomainError { op: "division", value: 0.0 });
            }
            return Ok(self.powi(p as i32));
        }
        if !(*self > 0.0) {
            return Err(JetDomainError { op: "pow", value: *self });
        }
        Ok(f64::powf(*self, p))
    }
}

impl Scalar for Jet {
    fn lift(&self, c: f64) -> Jet {
        let (r0, s0) = self.base();
        Jet::constant(r0, s0, self.degree(), c)
    }
    fn val(&self) -> f64 {
        self.value()
    }
    fn add(&self, o: &Jet) -> Jet {
        self + o
    }
    fn sub(&self, o: &Jet) -> Jet {
        self - o
    }
    fn mul(&self, o: &Jet) -> Jet {
        self * o
    }
    fn neg(&self) -> Jet {
        -self
    }
    fn div(&self, o: &Jet) -> Result<Jet, JetDomainError> {
        Jet::div(self, o)
    }
    fn sqrt(&self) -> Result<Jet, JetDomainError> {
        Jet::sqrt(self)
    }
    fn exp(&self) -> Jet {
        Jet::exp(self)
    }
    fn ln(&self) -> Result<Jet, JetDomainError> {
        Jet::ln(self)
    }
    fn powf(&self, p: f64) -> Result<Jet, JetDomainError> {
        Jet::powf(self, p)
    }
}

fn eval_node<T: Scalar>(n: &Node, vars: &[T], zero: &T, guard: f64, symbols: &[String]) -> Result<T> {
    let go = |a: &Node| eval_node(a, vars, zero, guard, symbols);
    let fail = |e: JetDomainError, node: &Node| {
        Error::domain(Printer { symbols }.render(node), e.to_string())
    };
    let guarded = |x: &T, op: &'static str, node: &Node, abs: bool| -> Result<()> {
        let v = if abs { x.val().abs() } else { x.val() };
        if guard > 0.0 && !(v > guard) {
            return Err(Error::domain(
                Printer { symbols }.render(node),
                format!("{op} argument {:e} within margin {guard:e}", x.val()),
            ));
        }
        Ok(())
    };
    Ok(match n {
        Node::Const(v) => zero.lift(*v),
        Node::Var(k) => vars[*k].clone(),
        Node::Neg(a) => go(a)?.neg(),
        Node::Add(a, b) => go(a)?.add(&go(b)?),
        Node::Sub(a, b) => go(a)?.sub(&go(b)?),
        Node::Mul(a, b) => go(a)?.mul(&go(b)?),
        Node::Div(a, b) => {
            let d = go(b)?;
            guarded(&d, "divisor", b, true)?;
            go(a)?.div(&d).map_err(|e| fail(e, b))?
        }
        Node::Sqrt(a) => {
            let x = go(a)?;
            guarded(&x, "sqrt", a, false)?;
            x.sqrt().map_err(|e| fail(e, n))?
        }
        Node::Exp(a) => go(a)?.exp(),
        Node::Ln(a) => {
            let x = go(a)?;
            guarded(&x, "ln", a, false)?;
            x.ln().map_err(|e| fail(e, n))?
        }
        Node::Pow(a, p) => {
            let x = go(a)?;
            if p.fract() != 0.0 {
                guarded(&x, "pow", a, false)?;
            } else if *p < 0.0 {
                guarded(&x, "divisor", a, true)?;
            }
            x.powf(*p).map_err(|e| fail(e, n))?
        }
    })
}
