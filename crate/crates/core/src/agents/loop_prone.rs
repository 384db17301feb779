//! Synthetic agent that falls into repeated action cycles.
//!
//! With probability `repeat_bias` it replays the action it took `window`
//! steps ago. A replay carries an expectation: the replayed action should be
//! reported with the same outcome it had one cycle earlier. When the report
//! contradicts that expectation the cycle is abandoned: the next `window`
//! actions are uniform draws. Inverted observations therefore disrupt loops.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Observation;
use crate::lockbox::JointId;

use super::{AgentDecision, AgentError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopProneParams {
    pub repeat_bias: f64,
    pub window: usize,
}

impl Default for LoopProneParams {
    fn default() -> Self {
        Self {
            repeat_bias: 0.9,
            window: 3,
        }
    }
}

impl LoopProneParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&self.repeat_bias) {
            return Err(AgentError::Config(format!(
                "repeat_bias must lie in [0, 1], got {}",
                self.repeat_bias
            )));
        }
        if self.window < 3 {
            return Err(AgentError::Config(format!(
                "window must be at least 3, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LoopProneAgent {
    params: LoopProneParams,
    num_joints: usize,
    rng: ChaCha8Rng,
    replayed: Vec<bool>,
}

impl LoopProneAgent {
    pub fn new(params: LoopProneParams, num_joints: usize, seed: u64) -> Result<Self, AgentError> {
        params.validate()?;
        Ok(Self {
            params,
            num_joints,
            rng: ChaCha8Rng::seed_from_u64(seed),
            replayed: Vec::new(),
        })
    }

    pub fn step(&mut self, obs: &Observation, history: &[(Observation, AgentDecision)]) -> AgentDecision {
        let decision = loop_prone_policy(
            &self.params,
            &mut self.rng,
            &self.replayed,
            self.num_joints,
            obs,
            history,
        );
        self.replayed.push(decision.rationale.as_deref() == Some(REPLAY));
        decision
    }
}

const REPLAY: &str = "replay";
const SURPRISED: &str = "surprised";

/// One decision. `replayed[k]` tells whether action `k + 1` was a replay;
/// `history[i]` holds the observation at step `i` and the action taken at
/// step `i + 1`.
pub fn loop_prone_policy<R: Rng + ?Sized>(
    params: &LoopProneParams,
    rng: &mut R,
    replayed: &[bool],
    num_joints: usize,
    obs: &Observation,
    history: &[(Observation, AgentDecision)],
) -> AgentDecision {
    let taken = history.len();
    let w = params.window;
    // reported outcome of action k (1-based) lives in the observation of step k
    let reported = |k: usize| -> Option<bool> {
        if k == taken {
            obs.reported_moved
        } else {
            history.get(k).and_then(|(o, _)| o.reported_moved)
        }
    };
    let surprised =
        taken > w && replayed.get(taken - 1).copied().unwrap_or(false) && reported(taken) != reported(taken - w);
    // a surprise abandons the whole cycle: no replay until `window` fresh draws
    let abandoned = history[taken.saturating_sub(w - 1)..]
        .iter()
        .any(|(_, d)| d.rationale.as_deref() == Some(SURPRISED));
    let replay = taken >= w && !surprised && !abandoned && rng.gen_bool(params.repeat_bias);
    if replay {
        AgentDecision {
            joint: history[taken - w].1.joint,
            rationale: Some(REPLAY.to_string()),
        }
    } else {
        AgentDecision {
            joint: JointId(rng.gen_range(0..num_joints)),
            rationale: Some(if surprised { SURPRISED } else { "explore" }.to_string()),
        }
    }
}
