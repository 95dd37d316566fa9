// NaN-rejecting guards are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod flow;
pub mod lab;
mod linalg;
pub mod models;
pub mod qp;
pub mod space;
pub mod spectrum;
pub mod sphere;
pub mod transport;

pub use error::{Error, Result};
