//! Command-line pipeline for measuring form–meaning systematicity in lexica.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod validate;
