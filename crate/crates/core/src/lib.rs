pub mod actor;
pub mod autodiff;
pub mod codec;
pub mod commnet;
pub mod critic;
pub mod env;
pub mod error;
pub mod gradsuite;
pub mod harness;
pub mod replay;

pub use error::{Error, Result};
