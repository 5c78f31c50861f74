pub mod config;
pub mod sweeps;
