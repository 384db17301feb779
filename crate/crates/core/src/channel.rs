//! Observation channel with controlled outcome inversion.
//!
//! After every action the channel reports whether the acted joint moved.
//! With probability `p` the report is inverted. The true state is never
//! touched; only the agent-visible ledger of joint positions diverges. A
//! wrong ledger entry persists until the same joint is acted on again.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lockbox::{ActionOutcome, JointId, LockboxConfig, Position, TrueState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("flip probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("flip rate needs at least one step")]
    NoSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipPolicy {
    pub p: f64,
    pub seed: u64,
}

impl FlipPolicy {
    pub fn new(p: f64, seed: u64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ChannelError::BadProbability(p));
        }
        Ok(Self { p, seed })
    }

    pub fn stream(&self) -> FlipStream {
        FlipStream {
            p: self.p,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// Deterministic sequence of flip decisions for one episode. Exactly one
/// uniform draw is consumed per step regardless of `p`.
#[derive(Debug, Clone)]
pub struct FlipStream {
    p: f64,
    rng: ChaCha8Rng,
}

impl FlipStream {
    pub fn next_flip(&mut self) -> bool {
        self.rng.gen::<f64>() < self.p
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Agent-visible joint positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerceivedState {
    pub positions: Vec<Position>,
}

impl PerceivedState {
    pub fn from_truth(state: &TrueState) -> Self {
        Self {
            positions: state.positions.clone(),
        }
    }

    /// Positions packed into a bitmask, bit `i` for joint `i`.
    pub fn context_key(&self) -> u64 {
        self.positions
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &p)| acc | (u64::from(p & 1) << i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub perceived: PerceivedState,
    pub last_action: Option<JointId>,
    pub reported_moved: Option<bool>,
    pub step_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipEvent {
    pub step_index: usize,
    pub joint: JointId,
    pub true_moved: bool,
    pub reported_moved: bool,
}

pub fn initial_observation(config: &LockboxConfig) -> Observation {
    Observation {
        perceived: PerceivedState::from_truth(&config.initial_state()),
        last_action: None,
        reported_moved: None,
        step_index: 0,
    }
}

/// Produces the observation that follows `outcome` at step `step` (1-based).
pub fn observe_after(
    stream: &mut FlipStream,
    ledger: &PerceivedState,
    outcome: &ActionOutcome,
    step: usize,
) -> (Observation, PerceivedState, Option<FlipEvent>) {
    debug_assert!(step >= 1, "observations after an action start at step 1");
    let flip = stream.next_flip();
    let reported_moved = outcome.moved != flip;
    let mut next = ledger.clone();
    let slot = &mut next.positions[outcome.joint.0];
    match (flip, outcome.moved) {
        (false, true) => *slot = outcome.new_true_position,
        (false, false) => {}
        // falsely reported as moved: the agent believes the joint toggled
        (true, false) => *slot ^= 1,
        // falsely reported as stuck: belief stays where it was
        (true, true) => {}
    }
    let event = flip.then_some(FlipEvent {
        step_index: step,
        joint: outcome.joint,
        true_moved: outcome.moved,
        reported_moved,
    });
    let obs = Observation {
        perceived: next.clone(),
        last_action: Some(outcome.joint),
        reported_moved: Some(reported_moved),
        step_index: step,
    };
    (obs, next, event)
}

pub fn flip_rate(events: &[FlipEvent], steps: usize) -> Result<f64, ChannelError> {
    if steps == 0 {
        return Err(ChannelError::NoSteps);
    }
    Ok(events.len() as f64 / steps as f64)
}
