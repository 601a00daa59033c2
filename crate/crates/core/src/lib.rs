pub mod angiogenesis;
pub mod config;
pub mod coupling;
pub mod error;
pub mod flow;
pub mod mesh;
pub mod network;
pub mod params;
pub mod plot;
pub mod sensitivity;
pub mod simulation;
pub mod sparse;
pub mod transport;
pub mod tissue;

pub use error::{Error, Result};
