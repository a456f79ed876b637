pub mod arq;
pub mod cache;
pub mod cn;
pub mod config;
pub mod congctl;
pub mod endpoint;
pub mod fabric;
pub mod harness;
pub mod metrics;
pub mod mn;
pub mod sim;
pub mod system;
pub mod wire;
pub mod workload;
