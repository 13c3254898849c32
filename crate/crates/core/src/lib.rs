pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod info;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod train;
