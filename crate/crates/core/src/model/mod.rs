//! Computer models `f(x; eta)`.
//!
//! Physical inputs `x` live in the box given by `x_bounds`; design algorithms
//! work in the unit cube and map through [`ComputerModel::to_physical`].
//! Calibration parameters are always in physical units.

pub mod expr;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use expr::{Expr, Var};

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn slack(&self) -> f64 {
        1e-9 * self.width().max(1.0)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo - self.slack() && v <= self.hi + self.slack()
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn to_unit(&self, v: f64) -> f64 {
        (v - self.lo) / self.width()
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }
}

/// Evaluation rule of a model. `Func` carries an arbitrary thread-safe
/// closure over physical `(x, eta)`; surrogate realizations use it.
pub type ModelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Body {
    Toy,
    Linear,
    Expr(Expr),
    Func(ModelFn),
}

/// Named constants and bounds used when parsing a model expression.
#[derive(Debug, Clone, Default)]
pub struct Signature {
    pub name: String,
    pub x_bounds: Vec<Interval>,
    pub eta_bounds: Vec<Interval>,
    pub constants: BTreeMap<String, f64>,
}

/// An evaluable computer model. Immutable after construction and `Sync`.
#[derive(Clone)]
pub struct ComputerModel {
    name: String,
    x_bounds: Vec<Interval>,
    eta_bounds: Vec<Interval>,
    body: Body,
}

impl fmt::Debug for ComputerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = match &self.body {
            Body::Toy => "toy".to_string(),
            Body::Linear => "linear".to_string(),
            Body::Expr(e) => e.to_string(),
            Body::Func(_) => "<closure>".to_string(),
        };
        f.debug_struct("ComputerModel")
            .field("name", &self.name)
            .field("x_bounds", &self.x_bounds)
            .field("eta_bounds", &self.eta_bounds)
            .field("body", &body)
            .finish()
    }
}

fn check_bounds(bounds: &[Interval], what: &str) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Signature(format!("{what} must have at least one dimension")));
    }
    for (i, b) in bounds.iter().enumerate() {
        if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
            return Err(Error::Signature(format!(
                "{what}[{i}] must satisfy lo < hi, got [{}, {}]",
                b.lo, b.hi
            )));
        }
    }
    Ok(())
}

impl ComputerModel {
    /// `f(x; eta) = exp(-eta (x1 - 1.5 x2)^2) + exp(-2 eta (x1 + x2 - 0.7)^2)`
    /// on `[0,1]^2`, `eta` in `[0, 1]`.
    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            x_bounds: vec![Interval::unit(); 2],
            eta_bounds: vec![Interval::unit()],
            body: Body::Toy,
        }
    }

    /// `f(x; eta) = eta1 + eta2 x1 + eta3 x2 + eta4 x1 x2` on `[0,1]^2`,
    /// each `eta` in `[-10, 10]`.
    pub fn linear() -> Self {
        Self {
            name: "linear".into(),
            x_bounds: vec![Interval::unit(); 2],
            eta_bounds: vec![Interval::new(-10.0, 10.0); 4],
            body: Body::Linear,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "linear" => Some(Self::linear()),
            _ => None,
        }
    }

    /// Wraps a closure over physical `(x, eta)`.
    pub fn from_fn(
        name: impl Into<String>,
        x_bounds: Vec<Interval>,
        eta_bounds: Vec<Interval>,
        f: ModelFn,
    ) -> Result<Self> {
        check_bounds(&x_bounds, "x_bounds")?;
        check_bounds(&eta_bounds, "eta_bounds")?;
        Ok(Self {
            name: name.into(),
            x_bounds,
            eta_bounds,
            body: Body::Func(f),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> usize {
        self.x_bounds.len()
    }

    pub fn q(&self) -> usize {
        self.eta_bounds.len()
    }

    pub fn x_bounds(&self) -> &[Interval] {
        &self.x_bounds
    }

    pub fn eta_bounds(&self) -> &[Interval] {
        &self.eta_bounds
    }

    /// Same model with different parameter bounds.
    pub fn with_eta_bounds(mut self, eta_bounds: Vec<Interval>) -> Result<Self> {
        check_bounds(&eta_bounds, "eta_bounds")?;
        if eta_bounds.len() != self.q() {
            return Err(Error::Dimension {
                expected: self.q(),
                got: eta_bounds.len(),
            });
        }
        self.eta_bounds = eta_bounds;
        Ok(self)
    }

    pub fn expression(&self) -> Option<&Expr> {
        match &self.body {
            Body::Expr(e) => Some(e),
            _ => None,
        }
    }

    pub fn to_physical(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.x_bounds).map(|(v, b)| b.from_unit(*v)).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_bounds).map(|(v, b)| b.to_unit(*v)).collect()
    }

    /// Unchecked evaluation at physical `x`.
    pub fn eval_raw(&self, x: &[f64], eta: &[f64]) -> f64 {
        match &self.body {
            Body::Toy => {
                let a = x[0] - 1.5 * x[1];
                let b = x[0] + x[1] - 0.7;
                (-eta[0] * a * a).exp() + (-2.0 * eta[0] * b * b).exp()
            }
            Body::Linear => eta[0] + eta[1] * x[0] + eta[2] * x[1] + eta[3] * x[0] * x[1],
            Body::Expr(e) => e.eval(x, eta),
            Body::Func(f) => f(x, eta),
        }
    }

    fn check_inputs(&self, x: &[f64], eta: &[f64]) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                got: x.len(),
            });
        }
        if eta.len() != self.q() {
            return Err(Error::Dimension {
                expected: self.q(),
                got: eta.len(),
            });
        }
        for (what, vals, bounds) in [("x", x, &self.x_bounds), ("eta", eta, &self.eta_bounds)] {
            for (i, (v, b)) in vals.iter().zip(bounds.iter()).enumerate() {
                if !b.contains(*v) {
                    return Err(Error::OutOfBounds {
                        what: if what == "x" { "x" } else { "eta" },
                        index: i,
                        value: *v,
                        lo: b.lo,
                        hi: b.hi,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checked evaluation at physical `x`.
    pub fn evaluate(&self, x: &[f64], eta: &[f64]) -> Result<f64> {
        self.check_inputs(x, eta)?;
        match &self.body {
            Body::Expr(e) => e.eval_checked(x, eta),
            _ => {
                let v = self.eval_raw(x, eta);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(self.name.clone()))
                }
            }
        }
    }

    /// Checked evaluation at unit-cube `u`.
    pub fn evaluate_unit(&self, u: &[f64], eta: &[f64]) -> Result<f64> {
        self.evaluate(&self.to_physical(u), eta)
    }

    /// Central finite-difference gradient in `eta` at physical `x`, step
    /// `1e-6 * max(1, |eta_j|)`, one-sided where a bound is closer than the
    /// step.
    pub fn grad_eta(&self, x: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, eta)?;
        let mut e = eta.to_vec();
        let mut grad = Vec::with_capacity(eta.len());
        let f0 = if self.eta_bounds.iter().zip(eta).any(|(b, v)| {
            let h = 1e-6 * v.abs().max(1.0);
            v - h < b.lo || v + h > b.hi
        }) {
            Some(self.evaluate(x, eta)?)
        } else {
            None
        };
        for j in 0..eta.len() {
            let b = self.eta_bounds[j];
            let h = 1e-6 * eta[j].abs().max(1.0);
            let (lo_ok, hi_ok) = (eta[j] - h >= b.lo, eta[j] + h <= b.hi);
            let g = match (lo_ok, hi_ok) {
                (true, true) => {
                    e[j] = eta[j] + h;
                    let fp = self.eval_finite(x, &e)?;
                    e[j] = eta[j] - h;
                    let fm = self.eval_finite(x, &e)?;
                    (fp - fm) / (2.0 * h)
                }
                (false, true) => {
                    e[j] = eta[j] + h;
                    let fp = self.eval_finite(x, &e)?;
                    (fp - f0.expect("f0 computed at bound")) / h
                }
                (true, false) => {
                    e[j] = eta[j] - h;
                    let fm = self.eval_finite(x, &e)?;
                    (f0.expect("f0 computed at bound") - fm) / h
                }
                (false, false) => {
                    return Err(Error::Signature(format!(
                        "eta_bounds[{j}] is narrower than the difference step"
                    )))
                }
            };
            e[j] = eta[j];
            grad.push(g);
        }
        Ok(grad)
    }

    /// Gradient in `eta` at unit-cube `u`.
    pub fn grad_eta_unit(&self, u: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        self.grad_eta(&self.to_physical(u), eta)
    }

    /// Forward-mode gradient for expression models (None otherwise).
    pub fn grad_eta_forward(&self, x: &[f64], eta: &[f64]) -> Option<Vec<f64>> {
        let e = self.expression()?;
        Some((0..self.q()).map(|j| e.eval_dual(x, eta, Var::Eta(j)).1).collect())
    }

    fn eval_finite(&self, x: &[f64], eta: &[f64]) -> Result<f64> {
        match &self.body {
            Body::Expr(e) => e.eval_checked(x, eta),
            _ => {
                let v = self.eval_raw(x, eta);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(self.name.clone()))
                }
            }
        }
    }
}

/// Parses an expression model against `sig`.
pub fn parse_model(source: &str, sig: &Signature) -> Result<ComputerModel> {
    check_bounds(&sig.x_bounds, "x_bounds")?;
    check_bounds(&sig.eta_bounds, "eta_bounds")?;
    let scope = expr::Scope {
        p: sig.x_bounds.len(),
        q: sig.eta_bounds.len(),
        constants: &sig.constants,
    };
    for name in sig.constants.keys() {
        let probe = expr::Scope {
            p: scope.p,
            q: scope.q,
            constants: &BTreeMap::new(),
        };
        if expr::parse(name, &probe).is_ok() {
            return Err(Error::Signature(format!(
                "constant `{name}` shadows a model variable"
            )));
        }
        if !name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Err(Error::Signature(format!("invalid constant name `{name}`")));
        }
    }
    let tree = expr::parse(source, &scope)?;
    Ok(ComputerModel {
        name: if sig.name.is_empty() {
            "expression".into()
        } else {
            sig.name.clone()
        },
        x_bounds: sig.x_bounds.clone(),
        eta_bounds: sig.eta_bounds.clone(),
        body: Body::Expr(tree),
    })
}

/// Expression text of the built-in toy model.
pub const TOY_EXPRESSION: &str = "exp(-eta1*(x1-1.5*x2)^2)+exp(-2*eta1*(x1+x2-0.7)^2)";

/// Expression text of the built-in linear model.
pub const LINEAR_EXPRESSION: &str = "eta1 + eta2*x1 + eta3*x2 + eta4*x1*x2";

/// Absorbent-material line model with user-supplied constants
/// `c1..c4, k1, k2, A`; five inputs and three parameters.
pub const AGM_LINE_EXPRESSION: &str = "2000 * ((1000*x2)^(2*eta3) * x5^(2*eta3-1) / (eta1^2 * c4^(2*eta3-1)) \
     + 1e6*k2*x1*x2) * ((exp(x4)-c1)*c2+c3) * x5 \
     * (1 - (k1 - (1e-3*A/((exp(x4)-c1)*c2+c3))/x5 - x3)^2 / eta2)";

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(p: usize, q: usize) -> Signature {
        Signature {
            name: String::new(),
            x_bounds: vec![Interval::unit(); p],
            eta_bounds: vec![Interval::new(-10.0, 10.0); q],
            constants: BTreeMap::new(),
        }
    }

    #[test]
    fn linear_expression_parses() {
        let m = parse_model("eta1 + eta2*x1", &sig(1, 2)).unwrap();
        assert_eq!(m.evaluate(&[0.5], &[1.0, 4.0]).unwrap(), 3.0);
    }

    #[test]
    fn undeclared_variable_is_rejected() {
        assert!(matches!(
            parse_model("x1 + x3", &sig(2, 1)),
            Err(Error::UndeclaredVariable { .. })
        ));
    }

    #[test]
    fn toy_values() {
        let toy = ComputerModel::toy();
        let v = toy.evaluate(&[0.3, 0.2], &[0.5]).unwrap();
        assert!((v - (1.0 + (-0.04f64).exp())).abs() < 1e-12);
        assert!((v - 1.960789).abs() < 1e-6);
        assert_eq!(toy.evaluate(&[0.0, 0.0], &[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn linear_values() {
        let lin = ComputerModel::linear();
        assert_eq!(lin.evaluate(&[1.0, 1.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 10.0);
        let g = lin.grad_eta(&[0.5, 0.25], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for (a, b) in g.iter().zip([1.0, 0.5, 0.25, 0.125]) {
            assert!((a - b).abs() < 1e-8, "{g:?}");
        }
    }

    #[test]
    fn out_of_bounds_is_reported() {
        let toy = ComputerModel::toy();
        assert!(matches!(
            toy.evaluate(&[1.5, 0.0], &[0.5]),
            Err(Error::OutOfBounds { what: "x", index: 0, .. })
        ));
        assert!(matches!(
            toy.evaluate(&[0.5, 0.0], &[-0.5]),
            Err(Error::OutOfBounds { what: "eta", .. })
        ));
        assert!(matches!(toy.evaluate(&[0.5], &[0.5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_finite_reports_subexpression() {
        let m = parse_model("eta1 / (x1 - 0.5)", &sig(1, 1)).unwrap();
        match m.evaluate(&[0.5], &[1.0]) {
            Err(Error::NonFinite(s)) => assert_eq!(s, "(eta1 / (x1 - 0.5))"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            m.grad_eta(&[0.5], &[1.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn gradient_is_one_sided_at_bounds() {
        let toy = ComputerModel::toy();
        let x = [0.5, 1.0];
        let at_lo = toy.grad_eta(&x, &[0.0]).unwrap()[0];
        let at_hi = toy.grad_eta(&x, &[1.0]).unwrap()[0];
        let analytic = |eta: f64| {
            let a: f64 = (0.5 - 1.5f64).powi(2);
            let b: f64 = (0.5 + 1.0 - 0.7f64).powi(2);
            -a * (-eta * a).exp() - 2.0 * b * (-2.0 * eta * b).exp()
        };
        assert!((at_lo - analytic(0.0)).abs() < 1e-5);
        assert!((at_hi - analytic(1.0)).abs() < 1e-5);
    }

    #[test]
    fn constant_in_eta_has_zero_gradient() {
        let m = parse_model("x1^2 + 3", &sig(1, 1)).unwrap();
        assert_eq!(m.grad_eta(&[0.4], &[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn constant_shadowing_is_rejected() {
        let mut s = sig(1, 1);
        s.constants.insert("x1".into(), 1.0);
        assert!(matches!(parse_model("x1", &s), Err(Error::Signature(_))));
    }

    #[test]
    fn agm_line_expression_parses() {
        let mut s = sig(5, 3);
        for (k, v) in [("c1", 0.5), ("c2", 1.0), ("c3", 0.2), ("c4", 2.0), ("k1", 1.0), ("k2", 1e-6), ("A", 3.0)] {
            s.constants.insert(k.into(), v);
        }
        s.x_bounds = vec![Interval::new(0.1, 1.0); 5];
        s.eta_bounds = vec![Interval::new(0.1, 10.0), Interval::new(0.1, 1000.0), Interval::new(0.0, 1.0)];
        let m = parse_model(AGM_LINE_EXPRESSION, &s).unwrap();
        let v = m.evaluate(&[0.5; 5], &[1.0, 100.0, 0.5]).unwrap();
        assert!(v.is_finite());
    }
}
