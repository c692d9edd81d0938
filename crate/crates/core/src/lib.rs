//! Energy-based snappability analysis of pin-jointed body-bar frameworks.

pub mod critical;
pub mod elasticity;
mod error;
pub mod expr;
pub mod energy;
pub mod fixtures;
pub mod framework;
pub mod landscape;
pub mod pipeline;
pub mod rigidity;
pub mod sg;
pub mod singular;
pub mod snap;

pub use error::{ModelError, Result, SnapError};
pub use polysolve;
