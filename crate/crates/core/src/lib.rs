pub mod assignment;
pub mod bvn;
pub mod cost_model;
pub mod error;
pub mod experiments;
pub mod io;
pub mod ot;
pub mod plan;
pub mod regret;
pub mod rng;

pub use error::{Error, Result};
