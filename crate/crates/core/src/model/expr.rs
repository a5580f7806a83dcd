//! Expression language for computer models.
//!
//! Grammar (standard infix, `^` binds tighter than unary minus and is right
//! associative; juxtaposition is rejected):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names resolve to `x1..xp`, `eta1..etaq` or a constant declared in the
//! model signature. Functions: `exp log sqrt abs sin cos`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// Zero-based index into the controllable inputs.
    X(usize),
    /// Zero-based index into the calibration parameters.
    Eta(usize),
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
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Log => {
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NAN
                }
            }
            Func::Sqrt => {
                if v >= 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            }
            Func::Abs => v.abs(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
        }
    }

    fn derivative(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Log => 1.0 / v,
            Func::Sqrt => 0.5 / v.sqrt(),
            Func::Abs => v.signum(),
            Func::Sin => v.cos(),
            Func::Cos => -v.sin(),
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Const { name: String, value: f64 },
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

fn binop(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => a.powf(b),
    }
}

impl Expr {
    /// Evaluates without error tracking. Non-finite values propagate.
    pub fn eval(&self, x: &[f64], eta: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X(i)) => x[*i],
            Expr::Var(Var::Eta(i)) => eta[*i],
            Expr::Const { value, .. } => *value,
            Expr::Neg(a) => -a.eval(x, eta),
            Expr::Bin(op, a, b) => binop(*op, a.eval(x, eta), b.eval(x, eta)),
            Expr::Call(f, a) => f.apply(a.eval(x, eta)),
        }
    }

    /// Evaluates and, on a non-finite result, reports the innermost
    /// subexpression that turned finite operands into a non-finite value.
    pub fn eval_checked(&self, x: &[f64], eta: &[f64]) -> Result<f64> {
        let v = self.eval(x, eta);
        if v.is_finite() {
            return Ok(v);
        }
        let culprit = self.first_non_finite(x, eta).unwrap_or(self);
        Err(Error::NonFinite(culprit.to_string()))
    }

    fn first_non_finite(&self, x: &[f64], eta: &[f64]) -> Option<&Expr> {
        let children: Vec<&Expr> = match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Const { .. } => vec![],
            Expr::Neg(a) | Expr::Call(_, a) => vec![a.as_ref()],
            Expr::Bin(_, a, b) => vec![a.as_ref(), b.as_ref()],
        };
        for c in children {
            if !c.eval(x, eta).is_finite() {
                return c.first_non_finite(x, eta);
            }
        }
        if self.eval(x, eta).is_finite() {
            None
        } else {
            Some(self)
        }
    }

    /// Forward-mode evaluation: returns the value and the derivative with
    /// respect to `wrt`.
    pub fn eval_dual(&self, x: &[f64], eta: &[f64], wrt: Var) -> (f64, f64) {
        match self {
            Expr::Num(v) => (*v, 0.0),
            Expr::Var(v) => {
                let val = match v {
                    Var::X(i) => x[*i],
                    Var::Eta(i) => eta[*i],
                };
                (val, if *v == wrt { 1.0 } else { 0.0 })
            }
            Expr::Const { value, .. } => (*value, 0.0),
            Expr::Neg(a) => {
                let (v, d) = a.eval_dual(x, eta, wrt);
                (-v, -d)
            }
            Expr::Call(f, a) => {
                let (v, d) = a.eval_dual(x, eta, wrt);
                (f.apply(v), f.derivative(v) * d)
            }
            Expr::Bin(op, a, b) => {
                let (u, du) = a.eval_dual(x, eta, wrt);
                let (v, dv) = b.eval_dual(x, eta, wrt);
                match op {
                    BinOp::Add => (u + v, du + dv),
                    BinOp::Sub => (u - v, du - dv),
                    BinOp::Mul => (u * v, du * v + u * dv),
                    BinOp::Div => (u / v, (du * v - u * dv) / (v * v)),
                    BinOp::Pow => {
                        let w = u.powf(v);
                        let mut d = if du != 0.0 { v * u.powf(v - 1.0) * du } else { 0.0 };
                        if dv != 0.0 {
                            d += w * u.ln() * dv;
                        }
                        (w, d)
                    }
                }
            }
        }
    }

    /// True when the tree references `var`.
    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Var(v) => *v == var,
            Expr::Num(_) | Expr::Const { .. } => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses(var),
            Expr::Bin(_, a, b) => a.uses(var) || b.uses(var),
        }
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized form; parsing it back yields the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::Eta(i)) => write!(f, "eta{}", i + 1),
            Expr::Const { name, .. } => f.write_str(name),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Names that may appear in an expression.
#[derive(Debug, Clone)]
pub struct Scope<'a> {
    pub p: usize,
    pub q: usize,
    pub constants: &'a BTreeMap<String, f64>,
}

impl Scope<'_> {
    fn resolve(&self, name: &str) -> Option<Expr> {
        if let Some(v) = self.constants.get(name) {
            return Some(Expr::Const {
                name: name.to_string(),
                value: *v,
            });
        }
        let indexed = |prefix: &str, count: usize| -> Option<usize> {
            let digits = name.strip_prefix(prefix)?;
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
                return None;
            }
            let k: usize = digits.parse().ok()?;
            (1..=count).contains(&k).then(|| k - 1)
        };
        if let Some(i) = indexed("eta", self.q) {
            return Some(Expr::Var(Var::Eta(i)));
        }
        indexed("x", self.p).map(|i| Expr::Var(Var::X(i)))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut column) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            column = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            column += 1;
            continue;
        }
        let start_col = column;
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text.parse().map_err(|_| Error::Syntax {
                line,
                column: start_col,
                message: format!("malformed number `{text}`"),
            })?;
            column += i - start;
            out.push(Token {
                tok: Tok::Num(value),
                line,
                column: start_col,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            column += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
                column: start_col,
            });
            continue;
        }
        if "+-*/^(),".contains(c) {
            i += 1;
            column += 1;
            out.push(Token {
                tok: Tok::Op(c),
                line,
                column: start_col,
            });
            continue;
        }
        return Err(Error::Syntax {
            line,
            column,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column,
    });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    scope: &'a Scope<'a>,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, t: &Token, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn expect(&mut self, c: char) -> Result<Token> {
        let t = self.bump();
        if t.tok == Tok::Op(c) {
            Ok(t)
        } else {
            Err(self.error(&t, format!("expected `{c}`, found {}", describe(&t.tok))))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek().tok {
            Tok::Op('-') => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.peek().tok == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let t = self.bump();
        match &t.tok {
            Tok::Num(v) => Ok(Expr::Num(*v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.peek().tok == Tok::Op('(') {
                    let Some(func) = Func::from_name(name) else {
                        return Err(self.error(&t, format!("unknown function `{name}`")));
                    };
                    self.bump();
                    let mut args = Vec::new();
                    if self.peek().tok != Tok::Op(')') {
                        args.push(self.expr()?);
                        while self.peek().tok == Tok::Op(',') {
                            self.bump();
                            args.push(self.expr()?);
                        }
                    }
                    self.expect(')')?;
                    if args.len() != 1 {
                        return Err(Error::Arity {
                            name: name.clone(),
                            expected: 1,
                            got: args.len(),
                            line: t.line,
                            column: t.column,
                        });
                    }
                    let arg = args.pop().expect("one argument");
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if Func::from_name(name).is_some() && self.scope.resolve(name).is_none() {
                    return Err(self.error(&t, format!("function `{name}` used without arguments")));
                }
                self.scope.resolve(name).ok_or_else(|| Error::UndeclaredVariable {
                    name: name.clone(),
                    line: t.line,
                    column: t.column,
                })
            }
            other => Err(self.error(&t, format!("unexpected {}", describe(other)))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Ident(s) => format!("name `{s}`"),
        Tok::Op(c) => format!("`{c}`"),
        Tok::End => "end of input".to_string(),
    }
}

/// Parses `src` against the names in `scope`.
pub fn parse(src: &str, scope: &Scope<'_>) -> Result<Expr> {
    let toks = lex(src)?;
    let mut parser = Parser { toks, pos: 0, scope };
    let e = parser.expr()?;
    let t = parser.peek().clone();
    if t.tok != Tok::End {
        return Err(parser.error(&t, format!("unexpected {} after complete expression", describe(&t.tok))));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scope(p: usize, q: usize, c: &BTreeMap<String, f64>) -> Scope<'_> {
        Scope { p, q, constants: c }
    }

    #[test]
    fn precedence_and_associativity() {
        let c = BTreeMap::new();
        let s = scope(1, 1, &c);
        let e = parse("-x1^2", &s).unwrap();
        assert_eq!(e.eval(&[3.0], &[0.0]), -9.0);
        let e = parse("2^3^2", &s).unwrap();
        assert_eq!(e.eval(&[0.0], &[0.0]), 512.0);
        let e = parse("8/4/2", &s).unwrap();
        assert_eq!(e.eval(&[0.0], &[0.0]), 1.0);
        let e = parse("1 - 2 - 3", &s).unwrap();
        assert_eq!(e.eval(&[0.0], &[0.0]), -4.0);
        let e = parse("2^-1", &s).unwrap();
        assert_eq!(e.eval(&[0.0], &[0.0]), 0.5);
        let e = parse("1.5e-3*1e3 + .5", &s).unwrap();
        assert!((e.eval(&[0.0], &[0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let c = BTreeMap::new();
        let s = scope(2, 1, &c);
        match parse("x1 +\n  * x2", &s) {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
        match parse("2 x1", &s) {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (1, 3)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("(x1", &s), Err(Error::Syntax { .. })));
        assert!(matches!(parse("x1 # 2", &s), Err(Error::Syntax { .. })));
        assert!(matches!(parse("foo(x1)", &s), Err(Error::Syntax { .. })));
        assert!(matches!(parse("exp", &s), Err(Error::Syntax { .. })));
    }

    #[test]
    fn arity_and_undeclared() {
        let c = BTreeMap::new();
        let s = scope(2, 1, &c);
        assert!(matches!(
            parse("exp(x1, x2)", &s),
            Err(Error::Arity { expected: 1, got: 2, .. })
        ));
        assert!(matches!(parse("exp()", &s), Err(Error::Arity { got: 0, .. })));
        match parse("x1 + x3", &s) {
            Err(Error::UndeclaredVariable { name, column, .. }) => {
                assert_eq!(name, "x3");
                assert_eq!(column, 6);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("eta0", &s), Err(Error::UndeclaredVariable { .. })));
        assert!(matches!(parse("x01", &s), Err(Error::UndeclaredVariable { .. })));
    }

    #[test]
    fn constants_resolve() {
        let mut c = BTreeMap::new();
        c.insert("k1".to_string(), 2.5);
        let s = scope(1, 1, &c);
        let e = parse("k1 * x1", &s).unwrap();
        assert_eq!(e.eval(&[2.0], &[0.0]), 5.0);
        assert_eq!(e.to_string(), "(k1 * x1)");
    }

    #[test]
    fn non_finite_names_subexpression() {
        let c = BTreeMap::new();
        let s = scope(1, 1, &c);
        let e = parse("1 + log(x1 - 1)", &s).unwrap();
        match e.eval_checked(&[1.0], &[0.0]) {
            Err(Error::NonFinite(sub)) => assert_eq!(sub, "log((x1 - 1.0))"),
            other => panic!("{other:?}"),
        }
        let e = parse("eta1 / x1", &s).unwrap();
        assert!(matches!(e.eval_checked(&[0.0], &[1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn dual_matches_hand_derivative() {
        let c = BTreeMap::new();
        let s = scope(1, 1, &c);
        let e = parse("exp(-eta1*x1^2) + eta1^2*sqrt(x1) + x1^eta1", &s).unwrap();
        let (x, eta) = (0.7, 1.3);
        let (_, d) = e.eval_dual(&[x], &[eta], Var::Eta(0));
        let expected = -x * x * (-eta * x * x).exp() + 2.0 * eta * x.sqrt() + x.powf(eta) * x.ln();
        assert!((d - expected).abs() < 1e-12);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            (0usize..2).prop_map(|i| Expr::Var(Var::X(i))),
            (0usize..2).prop_map(|i| Expr::Var(Var::Eta(i))),
            Just(Expr::Const {
                name: "c1".into(),
                value: 3.0
            }),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (
                    prop_oneof![
                        Just(Func::Exp),
                        Just(Func::Log),
                        Just(Func::Sqrt),
                        Just(Func::Abs),
                        Just(Func::Sin),
                        Just(Func::Cos)
                    ],
                    inner
                )
                    .prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn unparse_then_parse_is_identity(e in arb_expr()) {
            let mut c = BTreeMap::new();
            c.insert("c1".to_string(), 3.0);
            let s = scope(2, 2, &c);
            let text = e.to_string();
            let back = parse(&text, &s).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(back.to_string(), text);
        }
    }
}
