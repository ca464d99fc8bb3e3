//! Command line and HTTP front end for the portrait dataset toolkit.

pub mod cli;
pub mod config;
pub mod server;
pub mod session;

pub use cli::run;
