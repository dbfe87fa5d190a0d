#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod grid;
pub mod limit;
pub mod linalg;
pub mod mountain_pass;
pub mod nonlinearity;
pub mod ode;
pub mod operator;
pub mod shooting;

pub use error::{Error, Result};
