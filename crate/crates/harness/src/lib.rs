//! Configuration, orchestration, aggregation and plotting around `emix-core`.

pub mod aggregate;
pub mod checks;
pub mod config;
pub mod experiments;
pub mod plot;
pub mod run;
