//! Geometry of unit-hypersphere embeddings and dense cosine similarity map
//! scoring on a synthetic concept world.

pub mod bench;
pub mod config;
pub mod dcsm;
pub mod error;
pub mod eval;
pub mod io;
pub mod mlp;
pub mod sphere;
pub mod oracle;
pub mod scorer;
pub mod train;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
