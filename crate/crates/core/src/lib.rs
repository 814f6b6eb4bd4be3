#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod drivers;
pub mod expr;
pub mod mesh;
pub mod model;
pub mod quad;
pub mod solver;
