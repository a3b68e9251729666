pub mod ablation;
pub mod cli;
pub mod datasets;
pub mod dns;
pub mod error;
pub mod evaluate;
pub mod field;
pub mod io;
pub mod model;
pub mod report;
pub mod selftest;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use field::VorticityField;
