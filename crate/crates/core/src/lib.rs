//! Subject-oriented process models: definition, execution and analysis.

pub mod analysis;
pub mod bus;
pub mod clock;
pub mod conformance;
pub mod engine;
pub mod host;
pub mod model;
pub mod patterns;
pub mod pdl;
pub mod tasks;
