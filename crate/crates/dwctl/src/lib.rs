//! Command line and HTTP service over the warehouse engine.

pub mod cli;
pub mod engine;
pub mod server;
