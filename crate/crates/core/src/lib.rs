pub mod augment;
pub mod config;
pub mod decoder;
pub mod diffengine;
pub mod error;
pub mod physics;
pub mod relation;
pub mod trainer;

pub use error::{Error, Result};
