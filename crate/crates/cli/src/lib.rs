//! Command line front end: JSON-configured simulate, timing, and analyze
//! runs over the core resampler, writing CSV outputs.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;
