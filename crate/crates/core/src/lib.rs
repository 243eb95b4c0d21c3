#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod fw;
pub mod lls;
pub mod meanfield;
pub mod rng;

pub use error::{Error, Result};
