use thiserror::Error;

use super::{Func, Node, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("`{func}` depends on `{var}` and is not differentiable")]
    NonDifferentiableNode { func: &'static str, var: &'static str },
}

pub(super) fn differentiate(node: &Node, var: Var) -> Result<Node, DiffError> {
    if !node.contains(var) {
        return Ok(Node::Const(0.0));
    }
    Ok(match node {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(v) => Node::Const(if *v == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => mk_neg(differentiate(a, var)?),
        Node::Add(a, b) => mk_add(differentiate(a, var)?, differentiate(b, var)?),
        Node::Sub(a, b) => mk_sub(differentiate(a, var)?, differentiate(b, var)?),
        Node::Mul(a, b) => mk_add(
            mk_mul(differentiate(a, var)?, (**b).clone()),
            mk_mul((**a).clone(), differentiate(b, var)?),
        ),
        Node::Div(a, b) => {
            let da = differentiate(a, var)?;
            if !b.contains(var) {
                mk_div(da, (**b).clone())
            } else {
                let db = differentiate(b, var)?;
                mk_div(
                    mk_sub(mk_mul(da, (**b).clone()), mk_mul((**a).clone(), db)),
                    mk_pow((**b).clone(), Node::Const(2.0)),
                )
            }
        }
        Node::Pow(a, b) => {
            if !b.contains(var) {
                // d(a^c) = c a^(c-1) a'
                let exponent = (**b).clone();
                let reduced = mk_sub(exponent.clone(), Node::Const(1.0));
                mk_mul(
                    mk_mul(exponent, mk_pow((**a).clone(), reduced)),
                    differentiate(a, var)?,
                )
            } else if !a.contains(var) {
                // d(c^b) = c^b log(c) b'
                mk_mul(
                    mk_mul(node.clone(), Node::Call(Func::Log, vec![(**a).clone()])),
                    differentiate(b, var)?,
                )
            } else {
                // d(a^b) = a^b (b' log a + b a'/a)
                let db = differentiate(b, var)?;
                let da = differentiate(a, var)?;
                mk_mul(
                    node.clone(),
                    mk_add(
                        mk_mul(db, Node::Call(Func::Log, vec![(**a).clone()])),
                        mk_div(mk_mul((**b).clone(), da), (**a).clone()),
                    ),
                )
            }
        }
        Node::Call(f, args) => match f {
            Func::Exp => mk_mul(node.clone(), differentiate(&args[0], var)?),
            Func::Log => mk_div(differentiate(&args[0], var)?, args[0].clone()),
            Func::Min | Func::Max | Func::Abs => {
                return Err(DiffError::NonDifferentiableNode {
                    func: f.name(),
                    var: var.name(),
                })
            }
        },
    })
}

fn as_const(n: &Node) -> Option<f64> {
    match n {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

pub(crate) fn mk_neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

pub(crate) fn mk_add(a: Node, b: Node) -> Node {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => Node::Const(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mk_sub(a: Node, b: Node) -> Node {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => Node::Const(x - y),
        (Some(0.0), _) => mk_neg(b),
        (_, Some(0.0)) => a,
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mk_mul(a: Node, b: Node) -> Node {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => Node::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Node::Const(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        (None, Some(_)) => mk_mul(b, a),
        (Some(x), None) => match b {
            // c1 * (c2 * e) -> (c1 c2) * e
            Node::Mul(inner_a, inner_b) if as_const(&inner_a).is_some() => {
                mk_mul(Node::Const(x * as_const(&inner_a).unwrap()), *inner_b)
            }
            other => Node::Mul(Box::new(Node::Const(x)), Box::new(other)),
        },
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mk_div(a: Node, b: Node) -> Node {
    match (as_const(&a), as_const(&b)) {
        (Some(0.0), _) => Node::Const(0.0),
        (_, Some(1.0)) => a,
        (Some(x), Some(y)) if y != 0.0 => Node::Const(x / y),
        _ => Node::Div(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mk_pow(a: Node, b: Node) -> Node {
    match as_const(&b) {
        Some(1.0) => a,
        Some(0.0) => Node::Const(1.0),
        _ => Node::Pow(Box::new(a), Box::new(b)),
    }
}
