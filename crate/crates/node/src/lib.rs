//! A deployable node: configuration, definition store, wire bus, HTTP API
//! and the command-line front end.

pub mod api;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod node;
pub mod server;
pub mod store;
