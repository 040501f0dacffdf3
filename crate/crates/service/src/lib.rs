//! HTTP API and command-line plumbing around the core engine.

pub mod api;
pub mod config;
pub mod external;
pub mod resources;
