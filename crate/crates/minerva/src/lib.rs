//! Minerva: collaborative query processing over a simulated decentralized
//! content network.
//!
//! Objects are chunked, indexed by standard or fat Merkle trees, and
//! published into a latency-modeled DHT. A coordinator flattens root ids to
//! leaf chunks, schedules providers under pluggable strategies, and pushes
//! query fragments down to executor peers; an analytical module evaluates
//! the flattening-delay distributions the simulation is built on.

pub mod cache;
pub mod chunkstore;
pub mod config;
pub mod coordinator;
pub mod dhtnet;
pub mod error;
pub mod executor;
pub mod merkle;
pub mod latmodel;
pub mod queryfront;

pub use error::{Error, Result};
