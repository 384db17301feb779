//! Closed-loop evaluation harness for the Lockbox puzzle.
//!
//! - [`lockbox`]: the simulator (binary joints, hidden conjunctive rules).
//! - [`channel`]: observation channel with seeded outcome inversion.
//! - [`agents`]: heuristic, random, scripted, loop-prone and LLM agents.
//! - [`llm`]: chat-completion bridge, prompt rendering and reply parsing.
//! - [`runner`]: trials, sweeps and run plans; [`log`]: JSONL persistence.
//! - [`loops`]: action-loop detection via an exact binary ILP.
//! - [`stats`] and [`analysis`]: curves, correlation and polynomial fits.

pub mod agents;
pub mod analysis;
pub mod channel;
pub mod llm;
pub mod lockbox;
pub mod log;
pub mod loops;
pub mod runner;
pub mod seed;
pub mod stats;

pub use agents::{Agent, AgentDecision, AgentSpec};
pub use channel::{FlipEvent, FlipPolicy, Observation, PerceivedState};
pub use lockbox::{default_config, JointId, LockboxConfig, TrueState};
pub use runner::{run_sweep, run_trial, RunPlan, StepRecord, TrialRecord};
