//! Reconciliation of sets, sets of sets, random graphs and rooted forests
//! with communication proportional to the difference.

pub mod charpoly;
pub mod diff_estimator;
pub mod error;
pub mod field;
pub mod forest_recon;
pub mod graph_recon;
pub mod iblt;
pub mod rng_hash;
pub mod set_recon;
pub mod sos_recon;
pub mod transport;

pub use error::{Error, Result};
pub use rng_hash::Seed;
