pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod losses;
pub mod numeric;
pub mod pipeline;

pub use error::{Error, Result};
