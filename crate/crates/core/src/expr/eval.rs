use thiserror::Error;

use super::{Func, Node, Var, VarSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    DomainError(String),
    /// A finite input produced an infinite or NaN intermediate.
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("missing binding for variable `{0}`")]
    MissingBinding(&'static str),
}

/// Variable values for one evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bindings {
    values: [f64; 5],
    set: VarSet,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    pub fn set(&mut self, var: Var, value: f64) {
        self.values[var.index()] = value;
        self.set = self.set.with(var);
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.set.contains(var).then(|| self.values[var.index()])
    }

    /// Binds both spatial names `x` and `r` to the same coordinate.
    pub fn at_point(x: f64) -> Self {
        Self::new().with(Var::X, x).with(Var::R, x)
    }
}

pub(super) fn eval(node: &Node, needed: VarSet, b: &Bindings) -> Result<f64, EvalError> {
    if !needed.is_subset(b.set) {
        let missing = needed.iter().find(|v| !b.set.contains(*v)).unwrap();
        return Err(EvalError::MissingBinding(missing.name()));
    }
    go(node, b)
}

fn finite(value: f64, what: &str) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::Overflow(format!("{what} produced {value}")))
    }
}

fn go(node: &Node, b: &Bindings) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Var(v) => b.values[v.index()],
        Node::Neg(a) => -go(a, b)?,
        Node::Add(l, r) => finite(go(l, b)? + go(r, b)?, "addition")?,
        Node::Sub(l, r) => finite(go(l, b)? - go(r, b)?, "subtraction")?,
        Node::Mul(l, r) => finite(go(l, b)? * go(r, b)?, "multiplication")?,
        Node::Div(l, r) => {
            let num = go(l, b)?;
            let den = go(r, b)?;
            if den == 0.0 {
                return Err(EvalError::DomainError(format!("division of {num} by zero")));
            }
            finite(num / den, "division")?
        }
        Node::Pow(l, r) => pow(go(l, b)?, go(r, b)?)?,
        Node::Call(f, args) => match f {
            Func::Exp => finite(go(&args[0], b)?.exp(), "exp")?,
            Func::Log => {
                let a = go(&args[0], b)?;
                if a <= 0.0 {
                    return Err(EvalError::DomainError(format!("log of non-positive {a}")));
                }
                a.ln()
            }
            Func::Abs => go(&args[0], b)?.abs(),
            Func::Min => {
                let mut acc = go(&args[0], b)?;
                for a in &args[1..] {
                    acc = acc.min(go(a, b)?);
                }
                acc
            }
            Func::Max => {
                let mut acc = go(&args[0], b)?;
                for a in &args[1..] {
                    acc = acc.max(go(a, b)?);
                }
                acc
            }
        },
    })
}

fn pow(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if base == 0.0 && exponent < 0.0 {
        return Err(EvalError::DomainError(format!("0^{exponent}")));
    }
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(EvalError::DomainError(format!(
            "negative base {base} with non-integer exponent {exponent}"
        )));
    }
    let value = if exponent == 2.0 {
        base * base
    } else if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    };
    finite(value, "power")
}
