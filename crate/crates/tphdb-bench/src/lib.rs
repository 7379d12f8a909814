//! Workload driver and verification library behind the `bench` binary.

pub mod report;
pub mod runner;
pub mod workload;
