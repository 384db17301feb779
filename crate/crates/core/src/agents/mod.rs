//! Agents: observation in, joint selection out.

mod heuristic;
mod loop_prone;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Observation;
use crate::llm::{EndpointConfig, LlmAgent, TransportLog};
use crate::lockbox::{JointId, LockboxConfig};

pub use heuristic::{heuristic_policy, HeuristicMemory, TieBreak};
pub use loop_prone::{loop_prone_policy, LoopProneAgent, LoopProneParams};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bridge(#[from] crate::llm::BridgeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub joint: JointId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Everything an agent hands back for one step.
#[derive(Debug, Clone)]
pub struct Turn {
    pub decision: AgentDecision,
    /// The agent's own answer was unusable and a seeded random joint was
    /// substituted.
    pub substituted: bool,
    pub transport: Option<TransportLog>,
}

impl From<AgentDecision> for Turn {
    fn from(decision: AgentDecision) -> Self {
        Self {
            decision,
            substituted: false,
            transport: None,
        }
    }
}

pub trait Agent: Send {
    /// `history[i]` pairs the observation at step `i` with the decision
    /// taken in response to it; `observation` is the newest one.
    fn decide(
        &mut self,
        observation: &Observation,
        history: &[(Observation, AgentDecision)],
    ) -> Result<Turn, AgentError>;

    /// Hash of the instruction prompt, for agents that use one.
    fn prompt_sha256(&self) -> Option<String> {
        None
    }
}

pub struct RandomAgent {
    num_joints: usize,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(num_joints: usize, seed: u64) -> Self {
        Self {
            num_joints,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn decide(&mut self, _: &Observation, _: &[(Observation, AgentDecision)]) -> Result<Turn, AgentError> {
        Ok(AgentDecision {
            joint: JointId(self.rng.gen_range(0..self.num_joints)),
            rationale: None,
        }
        .into())
    }
}

/// Replays a fixed script, then keeps repeating its last entry.
pub struct ScriptedAgent {
    script: Vec<JointId>,
    cursor: usize,
}

impl ScriptedAgent {
    pub fn new(script: Vec<JointId>) -> Result<Self, AgentError> {
        if script.is_empty() {
            return Err(AgentError::Config("scripted agent needs a non-empty script".into()));
        }
        Ok(Self { script, cursor: 0 })
    }
}

impl Agent for ScriptedAgent {
    fn decide(&mut self, _: &Observation, _: &[(Observation, AgentDecision)]) -> Result<Turn, AgentError> {
        let joint = self.script[self.cursor.min(self.script.len() - 1)];
        self.cursor += 1;
        Ok(AgentDecision { joint, rationale: None }.into())
    }
}

pub struct HeuristicAgent {
    memory: HeuristicMemory,
}

impl HeuristicAgent {
    pub fn new(config: &LockboxConfig, tie_break: TieBreak, seed: u64) -> Self {
        Self {
            memory: HeuristicMemory::new(config, tie_break, seed),
        }
    }

    pub fn memory(&self) -> &HeuristicMemory {
        &self.memory
    }
}

impl Agent for HeuristicAgent {
    fn decide(&mut self, observation: &Observation, _: &[(Observation, AgentDecision)]) -> Result<Turn, AgentError> {
        Ok(self.memory.step(observation).into())
    }
}

impl Agent for LoopProneAgent {
    fn decide(
        &mut self,
        observation: &Observation,
        history: &[(Observation, AgentDecision)],
    ) -> Result<Turn, AgentError> {
        Ok(self.step(observation, history).into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicParams {
    #[serde(default)]
    pub tie_break: TieBreak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptParams {
    /// Joint labels.
    pub script: Vec<String>,
}

/// Agent selection by name plus parameter block:
/// `{"name": "loop_prone", "params": {"repeat_bias": 0.9, "window": 3}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAgentSpec", into = "RawAgentSpec")]
pub enum AgentSpec {
    Heuristic(HeuristicParams),
    Random,
    Scripted(ScriptParams),
    LoopProne(LoopProneParams),
    Llm(EndpointConfig),
}

pub const AGENT_NAMES: [&str; 5] = ["heuristic", "random", "scripted", "loop_prone", "llm"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgentSpec {
    name: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    params: serde_json::Value,
}

impl TryFrom<RawAgentSpec> for AgentSpec {
    type Error = String;

    fn try_from(raw: RawAgentSpec) -> Result<Self, Self::Error> {
        fn params<T: serde::de::DeserializeOwned + Default>(v: serde_json::Value) -> Result<T, String> {
            if v.is_null() {
                return Ok(T::default());
            }
            serde_json::from_value(v).map_err(|e| format!("params: {e}"))
        }
        fn required<T: serde::de::DeserializeOwned>(name: &str, v: serde_json::Value) -> Result<T, String> {
            if v.is_null() {
                return Err(format!("agent `{name}` requires a params block"));
            }
            serde_json::from_value(v).map_err(|e| format!("params: {e}"))
        }
        match raw.name.as_str() {
            "heuristic" => Ok(Self::Heuristic(params(raw.params)?)),
            "random" => match raw.params {
                serde_json::Value::Null => Ok(Self::Random),
                serde_json::Value::Object(m) if m.is_empty() => Ok(Self::Random),
                _ => Err("agent `random` takes no params".into()),
            },
            "scripted" => Ok(Self::Scripted(required("scripted", raw.params)?)),
            "loop_prone" => {
                let p: LoopProneParams = params(raw.params)?;
                p.validate().map_err(|e| e.to_string())?;
                Ok(Self::LoopProne(p))
            }
            "llm" => {
                let cfg: EndpointConfig = required("llm", raw.params)?;
                cfg.validate().map_err(|e| e.to_string())?;
                Ok(Self::Llm(cfg))
            }
            other => Err(format!(
                "unknown agent `{other}`, expected one of {}",
                AGENT_NAMES.join(", ")
            )),
        }
    }
}

impl From<AgentSpec> for RawAgentSpec {
    fn from(spec: AgentSpec) -> Self {
        let (name, params) = match &spec {
            AgentSpec::Heuristic(p) => ("heuristic", serde_json::to_value(p)),
            AgentSpec::Random => ("random", Ok(serde_json::Value::Null)),
            AgentSpec::Scripted(p) => ("scripted", serde_json::to_value(p)),
            AgentSpec::LoopProne(p) => ("loop_prone", serde_json::to_value(p)),
            AgentSpec::Llm(p) => ("llm", serde_json::to_value(p)),
        };
        RawAgentSpec {
            name: name.to_string(),
            params: params.expect("agent params serialize"),
        }
    }
}

/// Per-trial knobs the runner passes to agent construction.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext {
    pub seed: u64,
    pub substitution_seed: u64,
    pub step_budget: usize,
    pub archive_transcripts: bool,
}

impl AgentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AgentSpec::Heuristic(_) => "heuristic",
            AgentSpec::Random => "random",
            AgentSpec::Scripted(_) => "scripted",
            AgentSpec::LoopProne(_) => "loop_prone",
            AgentSpec::Llm(_) => "llm",
        }
    }

    /// Agent for the given name with default parameters. `scripted` and
    /// `llm` need a parameter block and have no default.
    pub fn by_name(name: &str) -> Result<Self, String> {
        RawAgentSpec {
            name: name.to_string(),
            params: serde_json::Value::Null,
        }
        .try_into()
    }

    /// Checks the parts of the spec that depend on the lockbox.
    pub fn validate_for(&self, config: &LockboxConfig) -> Result<(), AgentError> {
        if let AgentSpec::Scripted(p) = self {
            self.script_ids(config, p)?;
        }
        Ok(())
    }

    fn script_ids(&self, config: &LockboxConfig, p: &ScriptParams) -> Result<Vec<JointId>, AgentError> {
        p.script
            .iter()
            .map(|l| {
                config
                    .joint_by_label(l)
                    .map_err(|e| AgentError::Config(format!("script: {e}")))
            })
            .collect()
    }

    pub fn build(&self, config: &LockboxConfig, ctx: AgentContext) -> Result<Box<dyn Agent>, AgentError> {
        Ok(match self {
            AgentSpec::Heuristic(p) => Box::new(HeuristicAgent::new(config, p.tie_break, ctx.seed)),
            AgentSpec::Random => Box::new(RandomAgent::new(config.num_joints(), ctx.seed)),
            AgentSpec::Scripted(p) => Box::new(ScriptedAgent::new(self.script_ids(config, p)?)?),
            AgentSpec::LoopProne(p) => Box::new(LoopProneAgent::new(*p, config.num_joints(), ctx.seed)?),
            AgentSpec::Llm(cfg) => Box::new(LlmAgent::new(
                cfg.clone(),
                config.clone(),
                ctx.step_budget,
                ctx.substitution_seed,
                ctx.archive_transcripts,
            )),
        })
    }
}
