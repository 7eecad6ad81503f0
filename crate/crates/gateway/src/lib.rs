//! Command-line and HTTP front ends for the pamflow pipeline.

pub mod api;
pub mod cli;
pub mod rundir;
