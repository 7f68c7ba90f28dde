pub mod adh;
pub mod bdh;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod grouping;
pub mod model;
pub mod nn;
pub mod relationships;
pub mod trainer;

pub use error::{Error, Result};
