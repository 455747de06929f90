//! A deterministic simulation lab for two-step Byzantine consensus.
//!
//! The crate models the agreement and view-change sub-protocols of hBFT
//! (`3f+1` replicas) and FaB Paxos (`5f+1` replicas) as replica state
//! machines driven by a discrete-event network whose scheduling is fully
//! scripted. Traces are judged by a protocol-agnostic safety checker.

pub mod adversary;
pub mod checker;
pub mod cli;
pub mod explorer;
pub mod fab;
pub mod hbft;
pub mod message;
pub mod net;
pub mod quorum;
pub mod replica;
pub mod scenario;
pub mod sim;
pub mod types;
