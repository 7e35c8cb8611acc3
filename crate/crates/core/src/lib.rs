//! Audiovisual cross-task transfer laboratory.

pub mod audiofeat;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod numcore;
pub mod training;

pub use error::{Error, Result};
