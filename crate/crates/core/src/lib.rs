pub mod data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod syntax;
pub mod tensor;
pub mod train;
