pub mod cli;
pub mod error;
pub mod evaluate;
pub mod georef;
pub mod geometry;
pub mod io;
pub mod mcl;
pub mod pipeline;
pub mod polar;
pub mod render;
pub mod scan;
pub mod semantic_map;
pub mod sim;

pub use error::{Error, Result};
