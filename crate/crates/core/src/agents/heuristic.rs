//! Trial-and-error strategy that infers the dependency structure from
//! movement reports.
//!
//! Rules, in priority order:
//!
//! 1. Try the target whenever its status is unknown in the current perceived
//!    context (the bitmask of perceived joint positions).
//! 2. Re-attempt focus-stack joints from the top; after any reported
//!    movement the context changes, so every stack joint becomes untried
//!    again.
//! 3. If every stack joint is tried in this context, push an untried joint as
//!    a hypothesized unlocker (lowest index first, or a seeded shuffle).
//! 4. Never repeat a (joint, context) pair already marked blocked.
//!
//! When every joint has been tried in the current context the strategy walks
//! the transitions it has observed towards the nearest context that still
//! has untried joints.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Observation;
use crate::lockbox::{JointId, LockboxConfig};

use super::AgentDecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    SeededShuffle,
}

#[derive(Debug, Clone)]
pub struct HeuristicMemory {
    /// Every (joint, context) pair attempted so far.
    pub tried: BTreeSet<(JointId, u64)>,
    pub known_movable: BTreeSet<JointId>,
    pub known_blocked: BTreeSet<JointId>,
    /// Bottom is always the target; top is the joint currently pursued.
    pub focus_stack: Vec<JointId>,
    blocked: BTreeSet<(JointId, u64)>,
    transitions: BTreeMap<(JointId, u64), u64>,
    pending: Option<(JointId, u64)>,
    num_joints: usize,
    target: JointId,
    tie_break: TieBreak,
    rng: ChaCha8Rng,
}

impl HeuristicMemory {
    pub fn new(config: &LockboxConfig, tie_break: TieBreak, seed: u64) -> Self {
        Self {
            tried: BTreeSet::new(),
            known_movable: BTreeSet::new(),
            known_blocked: BTreeSet::new(),
            focus_stack: vec![config.target()],
            blocked: BTreeSet::new(),
            transitions: BTreeMap::new(),
            pending: None,
            num_joints: config.num_joints(),
            target: config.target(),
            tie_break,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_blocked(&self, joint: JointId, context: u64) -> bool {
        self.blocked.contains(&(joint, context))
    }

    fn record(&mut self, obs: &Observation) {
        let Some((joint, context)) = self.pending.take() else {
            return;
        };
        if obs.last_action != Some(joint) {
            return;
        }
        self.tried.insert((joint, context));
        if obs.reported_moved == Some(true) {
            self.known_movable.insert(joint);
            self.transitions.insert((joint, context), obs.perceived.context_key());
            self.focus_stack.retain(|&j| j != joint || j == self.target);
        } else {
            self.known_blocked.insert(joint);
            self.blocked.insert((joint, context));
        }
    }

    fn untried(&self, joint: JointId, context: u64) -> bool {
        !self.tried.contains(&(joint, context))
    }

    fn has_untried(&self, context: u64) -> bool {
        (0..self.num_joints).any(|i| self.untried(JointId(i), context))
    }

    /// First move along the shortest known path to a context with untried
    /// joints.
    fn route_to_frontier(&self, from: u64) -> Option<JointId> {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::new();
        for i in 0..self.num_joints {
            if let Some(&next) = self.transitions.get(&(JointId(i), from)) {
                if seen.insert(next) {
                    queue.push_back((next, JointId(i)));
                }
            }
        }
        while let Some((ctx, first)) = queue.pop_front() {
            if self.has_untried(ctx) {
                return Some(first);
            }
            for i in 0..self.num_joints {
                if let Some(&next) = self.transitions.get(&(JointId(i), ctx)) {
                    if seen.insert(next) {
                        queue.push_back((next, first));
                    }
                }
            }
        }
        None
    }

    fn ordered(&mut self, mut joints: Vec<JointId>) -> Vec<JointId> {
        if self.tie_break == TieBreak::SeededShuffle {
            joints.shuffle(&mut self.rng);
        }
        joints
    }

    fn choose(&mut self, context: u64) -> (JointId, &'static str) {
        if self.untried(self.target, context) {
            return (self.target, "target status unknown in this context");
        }
        if let Some(&j) = self.focus_stack.iter().rev().find(|&&j| self.untried(j, context)) {
            return (j, "re-attempting focused joint");
        }
        let fresh: Vec<JointId> = (0..self.num_joints)
            .map(JointId)
            .filter(|j| self.untried(*j, context) && !self.focus_stack.contains(j))
            .collect();
        if let Some(&j) = self.ordered(fresh).first() {
            self.focus_stack.push(j);
            return (j, "hypothesized unlocker");
        }
        if let Some(j) = self.route_to_frontier(context) {
            return (j, "moving towards an unexplored configuration");
        }
        let open: Vec<JointId> = (0..self.num_joints)
            .map(JointId)
            .filter(|&j| !self.is_blocked(j, context))
            .collect();
        if let Some(&j) = self.ordered(open).first() {
            return (j, "no unexplored configuration reachable");
        }
        // Every joint is recorded blocked here, which only happens when the
        // perceived context is inconsistent with the true one. Forget this
        // context and start over from rule 1.
        self.tried.retain(|&(_, c)| c != context);
        self.blocked.retain(|&(_, c)| c != context);
        (self.target, "perceived context inconsistent; resetting")
    }

    pub fn step(&mut self, obs: &Observation) -> AgentDecision {
        self.record(obs);
        let context = obs.perceived.context_key();
        let (joint, why) = self.choose(context);
        self.pending = Some((joint, context));
        AgentDecision {
            joint,
            rationale: Some(why.to_string()),
        }
    }
}

/// Functional form of [`HeuristicMemory::step`].
pub fn heuristic_policy(mut memory: HeuristicMemory, observation: &Observation) -> (AgentDecision, HeuristicMemory) {
    let decision = memory.step(observation);
    (decision, memory)
}
