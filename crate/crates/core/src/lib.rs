//! Trusted timestamping and change tracking for web content.
//!
//! Pages are fetched and reduced to canonical text, hashed, signed, linked
//! into a hash chain, stored, and periodically anchored to a ledger through a
//! Merkle root. Stored versions can be verified offline and compared word by
//! word.

pub mod anchor;
pub mod clock;
pub mod config;
pub mod diff;
pub mod engine;
pub mod hash;
pub mod ingest;
pub mod monitor;
pub mod receipt;
pub mod service;
pub mod stampcore;
pub mod store;
pub mod time;

pub use engine::{CompareTarget, Engine, EngineError};
pub use hash::Hash256;
