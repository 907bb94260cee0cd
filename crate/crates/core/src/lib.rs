pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod hdv;
pub mod objectives;
pub mod planner;
pub mod scenario;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
