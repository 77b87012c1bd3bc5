pub mod numcore;
pub mod rng;
pub mod dataset;
pub mod encoders;
pub mod alignment;
pub mod inference;
pub mod synthetic;
pub mod cli;
