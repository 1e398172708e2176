//! Command-line front end for `metatree`: CSV ingestion, fitting with any
//! engine, prediction, verification against subtree enumeration, and the
//! sequential-versus-batch timing benchmark.

pub mod commands;
pub mod config;
pub mod input;

pub use config::RunConfig;
