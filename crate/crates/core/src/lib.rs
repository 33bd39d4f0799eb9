pub mod baseline;
pub mod dataspec;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod synthgen;

pub use error::{Error, Result};
