//! Small expression language for user-declared nonlinearities, coefficients
//! and barriers.
//!
//! Expressions are parsed once (named parameters are folded into constants
//! at that point), then evaluated many times inside solver loops. Evaluation
//! never allocates.

mod diff;
mod eval;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

pub use diff::DiffError;
pub use eval::{Bindings, EvalError};
pub use parse::ParseError;

/// Named real constants substituted at parse time.
pub type Params = BTreeMap<String, f64>;

/// Free variables an expression may mention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    R,
    T,
    U,
    V,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::X, Var::R, Var::T, Var::U, Var::V];

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::R => "r",
            Var::T => "t",
            Var::U => "u",
            Var::V => "v",
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// A set of [`Var`]s, stored as a bit mask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct VarSet(u8);

impl VarSet {
    pub const fn empty() -> Self {
        VarSet(0)
    }

    pub fn of(vars: &[Var]) -> Self {
        vars.iter().fold(VarSet(0), |s, v| s.with(*v))
    }

    pub const fn with(self, var: Var) -> Self {
        VarSet(self.0 | (1 << var as u8))
    }

    pub const fn contains(self, var: Var) -> bool {
        self.0 & (1 << var as u8) != 0
    }

    pub const fn union(self, other: VarSet) -> Self {
        VarSet(self.0 | other.0)
    }

    pub const fn is_subset(self, other: VarSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Var> {
        Var::ALL.into_iter().filter(move |v| self.contains(*v))
    }
}

impl fmt::Debug for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(Var::name)).finish()
    }
}

/// Built-in functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Min,
    Max,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        [Func::Exp, Func::Log, Func::Min, Func::Max, Func::Abs]
            .into_iter()
            .find(|f| f.name() == name)
    }
}

/// Expression tree node.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    pub fn contains(&self, var: Var) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) => a.contains(var),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.contains(var) || b.contains(var),
            Node::Call(_, args) => args.iter().any(|a| a.contains(var)),
        }
    }

    fn free_vars(&self) -> VarSet {
        Var::ALL
            .into_iter()
            .filter(|v| self.contains(*v))
            .fold(VarSet::empty(), VarSet::with)
    }

    fn substitute(&self, var: Var, with: &Node) -> Node {
        match self {
            Node::Var(v) if *v == var => with.clone(),
            Node::Const(_) | Node::Var(_) => self.clone(),
            Node::Neg(a) => Node::Neg(Box::new(a.substitute(var, with))),
            Node::Add(a, b) => bin(Node::Add, a.substitute(var, with), b.substitute(var, with)),
            Node::Sub(a, b) => bin(Node::Sub, a.substitute(var, with), b.substitute(var, with)),
            Node::Mul(a, b) => bin(Node::Mul, a.substitute(var, with), b.substitute(var, with)),
            Node::Div(a, b) => bin(Node::Div, a.substitute(var, with), b.substitute(var, with)),
            Node::Pow(a, b) => bin(Node::Pow, a.substitute(var, with), b.substitute(var, with)),
            Node::Call(f, args) => {
                Node::Call(*f, args.iter().map(|a| a.substitute(var, with)).collect())
            }
        }
    }
}

fn bin(op: fn(Box<Node>, Box<Node>) -> Node, a: Node, b: Node) -> Node {
    op(Box::new(a), Box::new(b))
}

/// A parsed expression together with the variable set it was declared over.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFunctionExpr {
    ast: Node,
    vars: VarSet,
}

impl ScalarFunctionExpr {
    /// Parses `source` over the declared variables, folding `params` into
    /// constants.
    pub fn parse(source: &str, vars: VarSet, params: &Params) -> Result<Self, ParseError> {
        let ast = parse::parse(source, vars, params)?;
        Ok(ScalarFunctionExpr { ast, vars })
    }

    pub fn from_node(ast: Node, vars: VarSet) -> Self {
        let vars = vars.union(ast.free_vars());
        ScalarFunctionExpr { ast, vars }
    }

    pub fn constant(value: f64) -> Self {
        ScalarFunctionExpr {
            ast: Node::Const(value),
            vars: VarSet::empty(),
        }
    }

    pub fn ast(&self) -> &Node {
        &self.ast
    }

    /// Declared variable set.
    pub fn vars(&self) -> VarSet {
        self.vars
    }

    /// Variables that actually occur in the tree.
    pub fn free_vars(&self) -> VarSet {
        self.ast.free_vars()
    }

    pub fn depends_on(&self, var: Var) -> bool {
        self.ast.contains(var)
    }

    /// Constant value if the tree has no free variables and evaluates cleanly.
    pub fn as_constant(&self) -> Option<f64> {
        if self.free_vars() == VarSet::empty() {
            self.eval(&Bindings::new()).ok()
        } else {
            None
        }
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<f64, EvalError> {
        eval::eval(&self.ast, self.free_vars(), bindings)
    }

    /// Symbolic partial derivative with light constant folding.
    pub fn differentiate(&self, var: Var) -> Result<Self, DiffError> {
        let ast = diff::differentiate(&self.ast, var)?;
        Ok(ScalarFunctionExpr {
            ast,
            vars: self.vars,
        })
    }

    /// Replaces every occurrence of `var` by `with`.
    pub fn substitute(&self, var: Var, with: &ScalarFunctionExpr) -> Self {
        let vars = VarSet(self.vars.0 & !VarSet::empty().with(var).0).union(with.vars);
        ScalarFunctionExpr {
            ast: self.ast.substitute(var, &with.ast),
            vars,
        }
    }

    /// Renames a variable, e.g. `g(t)` into `g(u)`.
    pub fn rename(&self, from: Var, to: Var) -> Self {
        self.substitute(from, &ScalarFunctionExpr::from_node(Node::Var(to), VarSet::empty().with(to)))
    }

    pub fn add(&self, other: &ScalarFunctionExpr) -> Self {
        ScalarFunctionExpr {
            ast: diff::mk_add(self.ast.clone(), other.ast.clone()),
            vars: self.vars.union(other.vars),
        }
    }

    pub fn mul(&self, other: &ScalarFunctionExpr) -> Self {
        ScalarFunctionExpr {
            ast: diff::mk_mul(self.ast.clone(), other.ast.clone()),
            vars: self.vars.union(other.vars),
        }
    }

    /// Convenience: evaluates a one-variable expression.
    pub fn eval1(&self, var: Var, value: f64) -> Result<f64, EvalError> {
        self.eval(&Bindings::new().with(var, value))
    }
}

impl fmt::Display for ScalarFunctionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

// Fully parenthesized so that printing then re-parsing reproduces the tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{})", -c)
            }
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(v) => f.write_str(v.name()),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A real function of one real variable.
pub trait UnivariateFn {
    fn value(&self, t: f64) -> Result<f64, EvalError>;
}

impl<F: Fn(f64) -> f64> UnivariateFn for F {
    fn value(&self, t: f64) -> Result<f64, EvalError> {
        Ok(self(t))
    }
}

/// Views an expression as a function of a single variable.
#[derive(Clone, Copy, Debug)]
pub struct ExprFn<'a> {
    pub expr: &'a ScalarFunctionExpr,
    pub var: Var,
}

impl<'a> ExprFn<'a> {
    pub fn new(expr: &'a ScalarFunctionExpr, var: Var) -> Self {
        ExprFn { expr, var }
    }
}

impl UnivariateFn for ExprFn<'_> {
    fn value(&self, t: f64) -> Result<f64, EvalError> {
        self.expr.eval1(self.var, t)
    }
}
