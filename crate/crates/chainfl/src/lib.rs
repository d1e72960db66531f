pub mod baselines;
pub mod cli;
pub mod config;
pub mod device;
pub mod engine;
pub mod learning;
pub mod metrics;
pub mod mainchain;
pub mod sim;
pub mod store;
pub mod subchain;
pub mod task;
