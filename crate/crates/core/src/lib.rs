//! Historized object warehouse and star-mart derivation.

pub mod codegen;
pub mod error;
pub mod expr;
pub mod mart;
pub mod objects;
pub mod project;
pub mod schema;
pub mod temporal;
pub mod value;
pub mod warehouse;

pub use error::{Error, ErrorDiagnostic, Result};
pub use value::{Timestamp, Value};
