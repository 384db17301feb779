//! Lockbox simulator: binary joints whose movability is gated by hidden
//! conjunctive dependency rules.
//!
//! A joint with no rule is always movable. A joint with a rule is movable iff
//! every guard `(joint, state)` of that rule holds in the current state. An
//! action on a movable joint toggles it; an action on a locked joint is a
//! no-op reported as `moved = false`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary joint position.
pub type Position = u8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LockboxError {
    #[error("unknown joint index {0}")]
    UnknownJoint(usize),
    #[error("unknown joint label `{0}`")]
    UnknownLabel(String),
    #[error("invalid lockbox config: {0}")]
    InvalidConfig(String),
}

/// Index of a joint inside its [`LockboxConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointId(pub usize);

impl JointId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

/// Wire form of a joint identifier: `{"index": 0, "label": "L1"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointRef {
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSpec {
    pub id: JointRef,
    pub kind: JointKind,
    pub is_target: bool,
}

impl JointSpec {
    pub fn label(&self) -> &str {
        &self.id.label
    }
}

/// One guard of a [`DependencyRule`]: `joint` must be at `state`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guard {
    pub joint: JointId,
    pub state: Position,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyRule {
    pub subject: JointId,
    pub guards: Vec<Guard>,
}

/// A complete Lockbox: joints, hidden rules and the shared initial state.
///
/// Serialized as JSON with top-level keys `joints`, `rules`,
/// `initial_state` and `target`. Rules and the target refer to joints by
/// label; `initial_state` maps labels to `0`/`1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "wire::ConfigDoc", into = "wire::ConfigDoc")]
pub struct LockboxConfig {
    joints: Vec<JointSpec>,
    rules: Vec<DependencyRule>,
    initial_state: Vec<Position>,
    target: JointId,
    // rule index per joint, derived
    rule_of: Vec<Option<usize>>,
}

impl LockboxConfig {
    /// Builds and validates a config. `initial_state[i]` is joint `i`'s
    /// starting position.
    pub fn new(
        joints: Vec<JointSpec>,
        rules: Vec<DependencyRule>,
        initial_state: Vec<Position>,
    ) -> Result<Self, LockboxError> {
        let invalid = |msg: String| Err(LockboxError::InvalidConfig(msg));
        if joints.is_empty() {
            return invalid("a lockbox needs at least one joint".into());
        }
        if joints.len() > 64 {
            return invalid(format!("at most 64 joints are supported, got {}", joints.len()));
        }
        let mut labels = HashSet::new();
        for (i, j) in joints.iter().enumerate() {
            if j.id.index != i {
                return invalid(format!(
                    "joint indices must be contiguous from 0: joint `{}` has index {} at position {i}",
                    j.id.label, j.id.index
                ));
            }
            if j.id.label.trim().is_empty() {
                return invalid(format!("joint {i} has an empty label"));
            }
            if !labels.insert(j.id.label.as_str()) {
                return invalid(format!("duplicate joint label `{}`", j.id.label));
            }
        }
        let targets: Vec<usize> = joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.is_target)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return invalid(format!("exactly one target joint required, found {}", targets.len()));
        }
        if initial_state.len() != joints.len() {
            return invalid(format!(
                "initial_state has {} entries for {} joints",
                initial_state.len(),
                joints.len()
            ));
        }
        if let Some(bad) = initial_state.iter().find(|&&p| p > 1) {
            return invalid(format!("joint positions are binary, got {bad}"));
        }
        let mut rule_of = vec![None; joints.len()];
        for (r, rule) in rules.iter().enumerate() {
            let s = rule.subject.0;
            if s >= joints.len() {
                return invalid(format!("rule {r} names unknown subject {s}"));
            }
            if rule_of[s].replace(r).is_some() {
                return invalid(format!("joint `{}` has more than one rule", joints[s].id.label));
            }
            for g in &rule.guards {
                if g.joint.0 >= joints.len() {
                    return invalid(format!(
                        "rule for `{}` guards unknown joint {}",
                        joints[s].id.label, g.joint.0
                    ));
                }
                if g.joint.0 == s {
                    return invalid(format!("joint `{}` guards on itself", joints[s].id.label));
                }
                if g.state > 1 {
                    return invalid(format!("guard state must be 0 or 1, got {}", g.state));
                }
            }
        }
        Ok(Self {
            joints,
            rules,
            initial_state,
            target: JointId(targets[0]),
            rule_of,
        })
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn rules(&self) -> &[DependencyRule] {
        &self.rules
    }

    pub fn initial_positions(&self) -> &[Position] {
        &self.initial_state
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn target(&self) -> JointId {
        self.target
    }

    pub fn joint_ids(&self) -> impl Iterator<Item = JointId> {
        (0..self.joints.len()).map(JointId)
    }

    pub fn label(&self, j: JointId) -> &str {
        &self.joints[j.0].id.label
    }

    pub fn check(&self, j: JointId) -> Result<(), LockboxError> {
        if j.0 < self.joints.len() {
            Ok(())
        } else {
            Err(LockboxError::UnknownJoint(j.0))
        }
    }

    /// Case-insensitive lookup by label.
    pub fn joint_by_label(&self, label: &str) -> Result<JointId, LockboxError> {
        let wanted = label.trim();
        self.joints
            .iter()
            .position(|j| j.id.label.eq_ignore_ascii_case(wanted))
            .map(JointId)
            .ok_or_else(|| LockboxError::UnknownLabel(wanted.to_string()))
    }

    pub fn rule_for(&self, j: JointId) -> Option<&DependencyRule> {
        self.rule_of.get(j.0).copied().flatten().map(|r| &self.rules[r])
    }

    pub fn initial_state(&self) -> TrueState {
        TrueState {
            positions: self.initial_state.clone(),
            target_moved: false,
        }
    }
}

/// Ground-truth joint positions of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrueState {
    pub positions: Vec<Position>,
    pub target_moved: bool,
}

impl TrueState {
    pub fn position(&self, j: JointId) -> Position {
        self.positions[j.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub joint: JointId,
    pub moved: bool,
    pub new_true_position: Position,
}

pub fn is_movable(config: &LockboxConfig, state: &TrueState, j: JointId) -> Result<bool, LockboxError> {
    config.check(j)?;
    Ok(match config.rule_for(j) {
        None => true,
        Some(rule) => rule.guards.iter().all(|g| state.positions[g.joint.0] == g.state),
    })
}

pub fn apply_action(
    config: &LockboxConfig,
    state: &TrueState,
    j: JointId,
) -> Result<(TrueState, ActionOutcome), LockboxError> {
    let movable = is_movable(config, state, j)?;
    let mut next = state.clone();
    if movable {
        next.positions[j.0] ^= 1;
        if j == config.target() {
            next.target_moved = true;
        }
    }
    let outcome = ActionOutcome {
        joint: j,
        moved: movable,
        new_true_position: next.positions[j.0],
    };
    Ok((next, outcome))
}

pub fn is_solved(state: &TrueState) -> bool {
    state.target_moved
}

/// The stand-in four-joint box: two prismatic sliders and two revolute
/// levers, with the leftmost revolute joint (L1) as target.
///
/// Serial chain `L4 -> L3 -> L2 -> L1`: L4 is free, L3 needs L4 = 1,
/// L2 needs L3 = 1, L1 needs L3 = 1 and L2 = 1. Everything starts at 0, so
/// only L4 is movable initially and the shortest solution is
/// `L4, L3, L2, L1`.
pub fn default_config() -> LockboxConfig {
    let joint = |index: usize, label: &str, kind, is_target| JointSpec {
        id: JointRef {
            index,
            label: label.to_string(),
        },
        kind,
        is_target,
    };
    let guard = |j: usize, state| Guard {
        joint: JointId(j),
        state,
    };
    let joints = vec![
        joint(0, "L1", JointKind::Revolute, true),
        joint(1, "L2", JointKind::Revolute, false),
        joint(2, "L3", JointKind::Prismatic, false),
        joint(3, "L4", JointKind::Prismatic, false),
    ];
    let rules = vec![
        DependencyRule {
            subject: JointId(0),
            guards: vec![guard(2, 1), guard(1, 1)],
        },
        DependencyRule {
            subject: JointId(1),
            guards: vec![guard(2, 1)],
        },
        DependencyRule {
            subject: JointId(2),
            guards: vec![guard(3, 1)],
        },
    ];
    LockboxConfig::new(joints, rules, vec![0; 4]).expect("default config is valid")
}

/// Draws a random conjunctive-rule config with `n` joints (labels `L1..Ln`).
///
/// Each joint gets a rule with probability 0.7, guarding on up to three
/// other joints. Solvability is not guaranteed; see [`shortest_solution`].
pub fn random_config<R: Rng + ?Sized>(rng: &mut R, n: usize) -> LockboxConfig {
    assert!((1..=64).contains(&n), "joint count out of range");
    let target = rng.gen_range(0..n);
    let joints = (0..n)
        .map(|i| JointSpec {
            id: JointRef {
                index: i,
                label: format!("L{}", i + 1),
            },
            kind: if rng.gen_bool(0.5) {
                JointKind::Prismatic
            } else {
                JointKind::Revolute
            },
            is_target: i == target,
        })
        .collect();
    let mut rules = Vec::new();
    for subject in 0..n {
        if n == 1 || !rng.gen_bool(0.7) {
            continue;
        }
        let mut others: Vec<usize> = (0..n).filter(|&o| o != subject).collect();
        others.shuffle(rng);
        let k = rng.gen_range(1..=others.len().min(3));
        let mut guards: Vec<Guard> = others[..k]
            .iter()
            .map(|&o| Guard {
                joint: JointId(o),
                state: rng.gen_range(0..=1),
            })
            .collect();
        guards.sort_by_key(|g| g.joint);
        rules.push(DependencyRule {
            subject: JointId(subject),
            guards,
        });
    }
    let initial = (0..n).map(|_| rng.gen_range(0..=1)).collect();
    LockboxConfig::new(joints, rules, initial).expect("generated config is valid")
}

/// Breadth-first search over true states for the shortest action sequence
/// that moves the target. `None` if the target can never move.
pub fn shortest_solution(config: &LockboxConfig) -> Option<Vec<JointId>> {
    use std::collections::{HashMap, VecDeque};
    let start = config.initial_state();
    let mut parent: HashMap<Vec<Position>, Option<(Vec<Position>, JointId)>> = HashMap::new();
    parent.insert(start.positions.clone(), None);
    let mut queue = VecDeque::from([start]);
    while let Some(state) = queue.pop_front() {
        for j in config.joint_ids() {
            let (next, outcome) = apply_action(config, &state, j).expect("joint ids come from config");
            if !outcome.moved {
                continue;
            }
            if next.target_moved {
                let mut path = vec![j];
                let mut cursor = state.positions.clone();
                while let Some(Some((prev, via))) = parent.get(&cursor) {
                    path.push(*via);
                    cursor = prev.clone();
                }
                path.reverse();
                return Some(path);
            }
            if !parent.contains_key(&next.positions) {
                parent.insert(next.positions.clone(), Some((state.positions.clone(), j)));
                queue.push_back(next);
            }
        }
    }
    None
}

mod wire {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct GuardDoc {
        pub joint: String,
        pub state: Position,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct RuleDoc {
        pub subject: String,
        pub guards: Vec<GuardDoc>,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct ConfigDoc {
        pub joints: Vec<JointSpec>,
        pub rules: Vec<RuleDoc>,
        pub initial_state: BTreeMap<String, Position>,
        pub target: String,
    }

    impl TryFrom<ConfigDoc> for LockboxConfig {
        type Error = LockboxError;

        fn try_from(doc: ConfigDoc) -> Result<Self, Self::Error> {
            let lookup = |label: &str| {
                doc.joints
                    .iter()
                    .find(|j| j.id.label == label)
                    .map(|j| JointId(j.id.index))
                    .ok_or_else(|| LockboxError::UnknownLabel(label.to_string()))
            };
            let rules = doc
                .rules
                .iter()
                .map(|r| {
                    Ok(DependencyRule {
                        subject: lookup(&r.subject)?,
                        guards: r
                            .guards
                            .iter()
                            .map(|g| {
                                Ok(Guard {
                                    joint: lookup(&g.joint)?,
                                    state: g.state,
                                })
                            })
                            .collect::<Result<_, LockboxError>>()?,
                    })
                })
                .collect::<Result<Vec<_>, LockboxError>>()?;
            for label in doc.initial_state.keys() {
                lookup(label)?;
            }
            let mut initial = Vec::with_capacity(doc.joints.len());
            for j in &doc.joints {
                match doc.initial_state.get(&j.id.label) {
                    Some(&p) => initial.push(p),
                    None => {
                        return Err(LockboxError::InvalidConfig(format!(
                            "initial_state is missing joint `{}`",
                            j.id.label
                        )))
                    }
                }
            }
            let target = lookup(&doc.target)?;
            let config = LockboxConfig::new(doc.joints, rules, initial)?;
            if config.target() != target {
                return Err(LockboxError::InvalidConfig(format!(
                    "`target` is `{}` but joint `{}` carries is_target",
                    doc.target,
                    config.label(config.target())
                )));
            }
            Ok(config)
        }
    }

    impl From<LockboxConfig> for ConfigDoc {
        fn from(c: LockboxConfig) -> Self {
            let label = |j: JointId| c.joints[j.0].id.label.clone();
            ConfigDoc {
                rules: c
                    .rules
                    .iter()
                    .map(|r| RuleDoc {
                        subject: label(r.subject),
                        guards: r
                            .guards
                            .iter()
                            .map(|g| GuardDoc {
                                joint: label(g.joint),
                                state: g.state,
                            })
                            .collect(),
                    })
                    .collect(),
                initial_state: c
                    .joints
                    .iter()
                    .zip(&c.initial_state)
                    .map(|(j, &p)| (j.id.label.clone(), p))
                    .collect(),
                target: label(c.target),
                joints: c.joints,
            }
        }
    }
}
