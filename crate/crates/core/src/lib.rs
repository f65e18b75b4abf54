pub mod burgers;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod integrator;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod params;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
