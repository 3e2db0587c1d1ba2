//! A small expression language for right-hand sides such as `f(x, u, Du)`,
//! `Ψ(r)` and warping functions `φ(r)`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | ident | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! so `^` binds tighter than unary minus and associates to the right:
//! `-2^2 = -4`, `2^3^2 = 512`. Identifiers are `x1..xn`, `u`, `p1..pn`,
//! `r` and the constant `pi`. Both `-` and `−` (U+2212) are accepted.

use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown identifier `{name}` at bytes {}..{}", span.start, span.end)]
    UnknownIdent { name: String, span: Span },
    #[error("`{name}` is not bound (bytes {}..{})", span.start, span.end)]
    Unbound { name: String, span: Span },
    #[error("{message} (bytes {}..{})", span.start, span.end)]
    Domain { message: String, span: Span },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    /// `x1`, `x2`, … (stored one-based as written).
    X(usize),
    U,
    P(usize),
    R,
    Pi,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{i}"),
            Var::U => write!(f, "u"),
            Var::P(i) => write!(f, "p{i}"),
            Var::R => write!(f, "r"),
            Var::Pi => write!(f, "pi"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Sinh,
    Cosh,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Sinh,
        Func::Cosh,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Debug)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// A parsed expression. Equality compares structure and ignores spans.
#[derive(Clone, Debug)]
pub struct Expr {
    pub node: Node,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.node, &other.node) {
            (Node::Num(a), Node::Num(b)) => a.to_bits() == b.to_bits(),
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Neg(a), Node::Neg(b)) => a == b,
            (Node::Bin(o1, a1, b1), Node::Bin(o2, a2, b2)) => o1 == o2 && a1 == a2 && b1 == b2,
            (Node::Call(f1, a1), Node::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

/// Values for the free identifiers of an expression.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bindings<'a> {
    pub x: &'a [f64],
    pub u: Option<f64>,
    pub p: &'a [f64],
    pub r: Option<f64>,
}

impl<'a> Bindings<'a> {
    pub fn radius(r: f64) -> Self {
        Self {
            r: Some(r),
            ..Default::default()
        }
    }

    pub fn point(x: &'a [f64]) -> Self {
        Self {
            x,
            ..Default::default()
        }
    }

    pub fn full(x: &'a [f64], u: f64, p: &'a [f64]) -> Self {
        Self {
            x,
            u: Some(u),
            p,
            r: None,
        }
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser::new(text);
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.syntax(&["operator", "end of input"]));
        }
        Ok(e)
    }

    pub fn num(v: f64) -> Expr {
        Expr::bare(Node::Num(v))
    }

    pub fn var(v: Var) -> Expr {
        Expr::bare(Node::Var(v))
    }

    fn bare(node: Node) -> Expr {
        Expr {
            node,
            span: Span::default(),
        }
    }

    pub fn eval(&self, b: &Bindings<'_>) -> Result<f64, ExprError> {
        let dom = |message: String| ExprError::Domain {
            message,
            span: self.span,
        };
        let v = match &self.node {
            Node::Num(v) => *v,
            Node::Var(var) => self.lookup(*var, b)?,
            Node::Neg(a) => -a.eval(b)?,
            Node::Bin(op, l, r) => {
                let a = l.eval(b)?;
                let c = r.eval(b)?;
                match op {
                    BinOp::Add => a + c,
                    BinOp::Sub => a - c,
                    BinOp::Mul => a * c,
                    BinOp::Div => {
                        if c == 0.0 {
                            return Err(dom("division by zero".into()));
                        }
                        a / c
                    }
                    BinOp::Pow => {
                        if a < 0.0 && c.fract() != 0.0 {
                            return Err(dom(format!(
                                "negative base {a} with non-integer exponent {c}"
                            )));
                        }
                        if a == 0.0 && c < 0.0 {
                            return Err(dom("zero raised to a negative power".into()));
                        }
                        if c.fract() == 0.0 && c.abs() <= 64.0 {
                            a.powi(c as i32)
                        } else {
                            a.powf(c)
                        }
                    }
                }
            }
            Node::Call(f, a) => {
                let x = a.eval(b)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Sinh => x.sinh(),
                    Func::Cosh => x.cosh(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(dom(format!("log of nonpositive value {x}")));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(dom(format!("sqrt of negative value {x}")));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                }
            }
        };
        if !v.is_finite() {
            return Err(dom("non-finite value".into()));
        }
        Ok(v)
    }

    fn lookup(&self, var: Var, b: &Bindings<'_>) -> Result<f64, ExprError> {
        let got = match var {
            Var::X(i) => b.x.get(i - 1).copied(),
            Var::P(i) => b.p.get(i - 1).copied(),
            Var::U => b.u,
            Var::R => b.r,
            Var::Pi => Some(std::f64::consts::PI),
        };
        got.ok_or_else(|| ExprError::Unbound {
            name: var.to_string(),
            span: self.span,
        })
    }

    pub fn mentions(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match &self.node {
            Node::Num(_) => false,
            Node::Var(v) => pred(*v),
            Node::Neg(a) | Node::Call(_, a) => a.mentions(pred),
            Node::Bin(_, a, b) => a.mentions(pred) || b.mentions(pred),
        }
    }

    /// Largest index used among `x_i` / `p_i`.
    pub fn max_coordinate_index(&self) -> usize {
        match &self.node {
            Node::Num(_) => 0,
            Node::Var(Var::X(i)) | Node::Var(Var::P(i)) => *i,
            Node::Var(_) => 0,
            Node::Neg(a) | Node::Call(_, a) => a.max_coordinate_index(),
            Node::Bin(_, a, b) => a.max_coordinate_index().max(b.max_coordinate_index()),
        }
    }

    /// Symbolic derivative with respect to `wrt`, lightly simplified.
    pub fn derivative(&self, wrt: Var) -> Expr {
        let span = self.span;
        let mk = |node: Node| Expr { node, span };
        match &self.node {
            Node::Num(_) => Expr::num(0.0),
            Node::Var(v) => Expr::num(if *v == wrt { 1.0 } else { 0.0 }),
            Node::Neg(a) => neg(a.derivative(wrt)),
            Node::Bin(op, a, b) => {
                let da = a.derivative(wrt);
                let db = b.derivative(wrt);
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    BinOp::Div => div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), Expr::num(2.0)),
                    ),
                    BinOp::Pow => {
                        if is_zero(&db) {
                            // d(a^c) = c a^(c-1) a'
                            let c = (**b).clone();
                            mul(mul(c.clone(), pow((**a).clone(), sub(c, Expr::num(1.0)))), da)
                        } else {
                            // d(a^b) = a^b (b' log a + b a'/a)
                            let log_a = mk(Node::Call(Func::Log, a.clone()));
                            mul(
                                self.clone(),
                                add(mul(db, log_a), div(mul((**b).clone(), da), (**a).clone())),
                            )
                        }
                    }
                }
            }
            Node::Call(f, a) => {
                let da = a.derivative(wrt);
                if is_zero(&da) {
                    return Expr::num(0.0);
                }
                let call = |g: Func| mk(Node::Call(g, a.clone()));
                let outer = match f {
                    Func::Sin => call(Func::Cos),
                    Func::Cos => neg(call(Func::Sin)),
                    Func::Sinh => call(Func::Cosh),
                    Func::Cosh => call(Func::Sinh),
                    Func::Exp => call(Func::Exp),
                    Func::Log => div(Expr::num(1.0), (**a).clone()),
                    Func::Sqrt => div(Expr::num(0.5), call(Func::Sqrt)),
                    Func::Abs => div((**a).clone(), call(Func::Abs)),
                };
                mul(outer, da)
            }
        }
    }
}

fn as_num(e: &Expr) -> Option<f64> {
    match e.node {
        Node::Num(v) => Some(v),
        _ => None,
    }
}

fn is_zero(e: &Expr) -> bool {
    as_num(e) == Some(0.0)
}

fn neg(a: Expr) -> Expr {
    match as_num(&a) {
        Some(v) => Expr::num(-v),
        None => Expr {
            span: a.span,
            node: Node::Neg(Box::new(a)),
        },
    }
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    let span = Span {
        start: a.span.start.min(b.span.start),
        end: a.span.end.max(b.span.end),
    };
    Expr {
        node: Node::Bin(op, Box::new(a), Box::new(b)),
        span,
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(x), Some(y)) => Expr::num(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => bin(BinOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(x), Some(y)) => Expr::num(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => bin(BinOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(x), Some(y)) => Expr::num(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::num(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => bin(BinOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(x), _) if x == 0.0 => Expr::num(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => bin(BinOp::Div, a, b),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match as_num(&b) {
        Some(y) if y == 1.0 => a,
        Some(y) if y == 0.0 => Expr::num(1.0),
        _ => bin(BinOp::Pow, a, b),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e.node {
                Node::Num(_) | Node::Var(_) | Node::Call(..) => write!(f, "{e}"),
                _ => write!(f, "({e})"),
            }
        }
        match &self.node {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(a) => {
                write!(f, "-")?;
                operand(a, f)
            }
            Node::Bin(op, a, b) => {
                operand(a, f)?;
                write!(f, " {} ", op.symbol())?;
                operand(b, f)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn syntax(&self, expected: &[&str]) -> ExprError {
        let found = match self.rest().chars().next() {
            None => "end of input".to_string(),
            Some(c) => format!("`{c}`"),
        };
        ExprError::Syntax {
            offset: self.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn eat_minus(&mut self) -> bool {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                true
            }
            Some('\u{2212}') => {
                self.pos += '\u{2212}'.len_utf8();
                true
            }
            _ => false,
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    BinOp::Add
                }
                _ if self.eat_minus() => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let rhs = self.term()?;
            lhs = bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some('*') => BinOp::Mul,
                Some('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.eat_minus() {
            let inner = self.unary()?;
            let end = inner.span.end;
            return Ok(Expr {
                node: Node::Neg(Box::new(inner)),
                span: Span { start, end },
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(bin(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        const EXPECTED: [&str; 4] = ["number", "identifier", "function call", "`(`"];
        let c = match self.peek() {
            Some(c) => c,
            None => return Err(self.syntax(&EXPECTED)),
        };
        let start = self.pos;
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if c == '(' {
            self.pos += 1;
            let mut inner = self.expr()?;
            if self.peek() != Some(')') {
                return Err(self.syntax(&["`)`", "operator"]));
            }
            self.pos += 1;
            inner.span = Span {
                start,
                end: self.pos,
            };
            return Ok(inner);
        }
        if c.is_ascii_alphabetic() {
            let len = self
                .rest()
                .find(|ch: char| !ch.is_ascii_alphanumeric() && ch != '_')
                .unwrap_or(self.rest().len());
            let name = &self.src[start..start + len];
            self.pos += len;
            let span = Span {
                start,
                end: self.pos,
            };
            if let Some(func) = Func::from_name(name) {
                if self.peek() != Some('(') {
                    return Err(self.syntax(&["`(`"]));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.syntax(&["`)`", "operator"]));
                }
                self.pos += 1;
                return Ok(Expr {
                    node: Node::Call(func, Box::new(arg)),
                    span: Span {
                        start,
                        end: self.pos,
                    },
                });
            }
            let var = parse_ident(name).ok_or_else(|| ExprError::UnknownIdent {
                name: name.to_string(),
                span,
            })?;
            return Ok(Expr {
                node: Node::Var(var),
                span,
            });
        }
        Err(self.syntax(&EXPECTED))
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = start;
        let digits = |i: &mut usize| {
            let s = *i;
            while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                *i += 1;
            }
            *i > s
        };
        let mut any = digits(&mut i);
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            any |= digits(&mut i);
        }
        if !any {
            return Err(self.syntax(&["digit"]));
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            let before = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j == before {
                self.pos = j;
                return Err(self.syntax(&["exponent digits"]));
            }
            i = j;
        }
        let text = &self.src[start..i];
        let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            expected: vec!["number".into()],
            found: format!("`{text}`"),
        })?;
        self.pos = i;
        Ok(Expr {
            node: Node::Num(v),
            span: Span { start, end: i },
        })
    }
}

fn parse_ident(name: &str) -> Option<Var> {
    match name {
        "u" => return Some(Var::U),
        "r" => return Some(Var::R),
        "pi" => return Some(Var::Pi),
        _ => {}
    }
    let index = |rest: &str| -> Option<usize> {
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
            return None;
        }
        rest.parse().ok()
    };
    if let Some(rest) = name.strip_prefix('x') {
        return index(rest).map(Var::X);
    }
    if let Some(rest) = name.strip_prefix('p') {
        return index(rest).map(Var::P);
    }
    None
}
