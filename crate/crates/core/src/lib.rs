//! Simulation library for sharded, BFT-protected decentralized SGD.

pub mod aggregation;
pub mod allreduce;
pub mod consensus;
pub mod netsim;
pub mod sharding;
pub mod adversary;
pub mod training;
pub mod config;
pub mod metrics;
pub mod world;
pub mod baseline;
pub mod experiment;
pub mod report;
