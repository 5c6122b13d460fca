//! Proximal bridge-function off-policy evaluation and learning for confounded
//! POMDPs with continuous actions.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod env;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod ope;
pub mod opl;
pub mod par;
pub mod policy;
pub mod report;
pub mod rng;
pub mod tuning;

pub use error::{Error, Result};
