pub mod bundle;
pub mod cli;
pub mod corpus;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod service;
pub mod sketch;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
