//! Numerical evolution of U(1)-symmetric vacuum spacetimes reduced to 2+1
//! Einstein-wave-map equations in an elliptic gauge.

pub mod constraints;
pub mod diagnostics;
pub mod elliptic;
pub mod evolution;
pub mod geometry;
pub mod grid;
pub mod snapshot;
