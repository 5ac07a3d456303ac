pub mod audit;
pub mod block;
pub mod cli;
pub mod mandator;
pub mod netsim;
pub mod replica;
pub mod sporades;
pub mod trace;
pub mod workload;
