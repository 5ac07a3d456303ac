//! Deterministic discrete-event network with crash, asynchrony and
//! rotating-attack adversaries.

pub mod queue;
pub mod scenario;
pub mod sim;

pub use queue::EventQueue;
pub use scenario::{AttackConfig, CrashSpec, DebugConfig, NetworkConfig, Scenario, ScenarioError, Window};
pub use sim::{rotate_attack, run, NetworkModel, RunOutput};
