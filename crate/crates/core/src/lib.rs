//! Discrete-event simulator of a single-cell Wi-Fi 7 network comparing
//! multi-link traffic-to-link allocation policies under AR traffic.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod engine;
pub mod mac;
pub mod mld;
pub mod network;
pub mod phy;
pub mod scenario;
pub mod stats;
pub mod traffic;

pub use config::ScenarioConfig;
pub use engine::SimTime;
pub use mld::PolicyKind;
pub use network::Network;
pub use scenario::{run_seed, run_seeds};
pub use stats::{Delay, DelayRecord};
