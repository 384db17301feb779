//! Bridge from a chat-completion HTTP endpoint to the [`Agent`] trait.
//!
//! Each call sends the full transcript: the instruction prompt, then one
//! user turn per observation and one assistant turn per earlier reply.

use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{Agent, AgentDecision, AgentError, Turn};
use crate::channel::Observation;
use crate::lockbox::{JointId, LockboxConfig};

const PROMPT_TEMPLATE: &str = include_str!("../assets/instruction_prompt.txt");

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("endpoint configuration: {0}")]
    Config(String),
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("endpoint returned an unusable body: {0}")]
    BadResponse(String),
    #[error("no joint label found in response: {raw:?}")]
    Parse { raw: String },
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Extra request fields passed through verbatim (e.g. `temperature`).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, Value>,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        let absolute = ["http://", "https://"]
            .iter()
            .any(|s| self.base_url.starts_with(s) && self.base_url.len() > s.len());
        if !absolute {
            return Err(BridgeError::Config(format!(
                "base_url must be an absolute http(s) URL, got `{}`",
                self.base_url
            )));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(BridgeError::Config(format!(
                "timeout must be positive, got {}",
                self.timeout
            )));
        }
        if self.model_name.is_empty() || self.api_key_env.is_empty() {
            return Err(BridgeError::Config(
                "model_name and api_key_env must be non-empty".into(),
            ));
        }
        for reserved in ["model", "messages"] {
            if self.extra.contains_key(reserved) {
                return Err(BridgeError::Config(format!("`extra` may not override `{reserved}`")));
            }
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Agent,
    Environment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTranscript {
    pub system_prompt: String,
    pub turns: Vec<(Role, String)>,
}

impl PromptTranscript {
    pub fn new(system_prompt: String) -> Self {
        Self {
            system_prompt,
            turns: Vec::new(),
        }
    }

    pub fn messages(&self) -> Vec<Value> {
        std::iter::once(json!({"role": "system", "content": self.system_prompt}))
            .chain(self.turns.iter().map(|(role, text)| {
                let role = match role {
                    Role::Agent => "assistant",
                    Role::Environment => "user",
                };
                json!({"role": role, "content": text})
            }))
            .collect()
    }
}

pub fn instruction_prompt(config: &LockboxConfig, budget: usize) -> String {
    let labels: Vec<&str> = config.joints().iter().map(|j| j.label()).collect();
    PROMPT_TEMPLATE
        .replace("{labels}", &labels.join(", "))
        .replace("{target}", config.label(config.target()))
        .replace("{budget}", &budget.to_string())
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn state_word(p: u8) -> &'static str {
    if p == 0 {
        "closed"
    } else {
        "open"
    }
}

/// One `<label>: <state>` line per joint in index order, then the movement
/// report for the last action if there was one.
pub fn render_observation(obs: &Observation, config: &LockboxConfig) -> String {
    let mut out = String::new();
    for (spec, &p) in config.joints().iter().zip(&obs.perceived.positions) {
        out.push_str(spec.label());
        out.push_str(": ");
        out.push_str(state_word(p));
        out.push('\n');
    }
    if let (Some(j), Some(moved)) = (obs.last_action, obs.reported_moved) {
        let verdict = if moved { "moved" } else { "did not move" };
        out.push_str(&format!("Last action: {} {verdict}.\n", config.label(j)));
    }
    out
}

fn label_pattern(config: &LockboxConfig) -> Regex {
    let mut labels: Vec<&str> = config.joints().iter().map(|j| j.label()).collect();
    // longest first so `L10` wins over `L1`
    labels.sort_by_key(|l| std::cmp::Reverse(l.len()));
    let alternatives: Vec<String> = labels.iter().map(|l| regex::escape(l)).collect();
    Regex::new(&format!(r"(?i)(?:^|[^\w])({})(?:$|[^\w])", alternatives.join("|"))).expect("label regex")
}

/// Joint named on the first `ANSWER:` line, else the first label anywhere.
pub fn parse_decision(response: &str, config: &LockboxConfig) -> Result<AgentDecision, BridgeError> {
    let pattern = label_pattern(config);
    let first_label = |text: &str| {
        pattern
            .captures(text)
            .and_then(|c| c.get(1))
            .and_then(|m| config.joint_by_label(m.as_str()).ok())
    };
    let marked = response.lines().find_map(|line| {
        let upper = line.to_ascii_uppercase();
        upper
            .find("ANSWER:")
            .and_then(|at| first_label(&line[at + "ANSWER:".len()..]))
    });
    marked
        .or_else(|| first_label(response))
        .map(|joint| AgentDecision {
            joint,
            rationale: Some(response.to_string()),
        })
        .ok_or_else(|| BridgeError::Parse {
            raw: response.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryRecord {
    pub attempt: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointReply {
    pub content: String,
    pub retries: Vec<RetryRecord>,
}

/// Transport details recorded on a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportLog {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retries: Vec<RetryRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

pub fn request_body(cfg: &EndpointConfig, transcript: &PromptTranscript) -> Value {
    let mut body = cfg.extra.clone();
    body.insert("model".into(), json!(cfg.model_name));
    body.insert("messages".into(), Value::Array(transcript.messages()));
    Value::Object(body)
}

/// POSTs the transcript and returns the first choice's content. Transport
/// errors, 429 and 5xx responses are retried with exponential backoff.
pub fn call_endpoint(cfg: &EndpointConfig, transcript: &PromptTranscript) -> Result<EndpointReply, BridgeError> {
    cfg.validate()?;
    let key = std::env::var(&cfg.api_key_env).map_err(|_| BridgeError::MissingCredential(cfg.api_key_env.clone()))?;
    let body = request_body(cfg, transcript);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout)))
        .http_status_as_error(false)
        .build()
        .into();
    let url = cfg.url();
    let mut retries = Vec::new();
    let mut attempt = 0u32;
    loop {
        let failure = match agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
        {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                if (200..300).contains(&status) {
                    return first_choice(&text).map(|content| EndpointReply { content, retries });
                }
                if status == 429 || status >= 500 {
                    format!("HTTP {status}")
                } else {
                    return Err(BridgeError::BadResponse(format!("HTTP {status}: {text}")));
                }
            }
            Err(e) => e.to_string(),
        };
        if attempt >= cfg.max_retries {
            return Err(BridgeError::Transport {
                attempts: attempt + 1,
                last: failure,
            });
        }
        attempt += 1;
        retries.push(RetryRecord {
            attempt,
            reason: failure,
        });
        let delay = cfg.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        std::thread::sleep(Duration::from_millis(delay));
    }
}

fn first_choice(text: &str) -> Result<String, BridgeError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BridgeError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BridgeError::BadResponse(format!("missing choices[0].message.content in {text}")))
}

pub struct LlmAgent {
    endpoint: EndpointConfig,
    config: LockboxConfig,
    transcript: PromptTranscript,
    substitutions: ChaCha8Rng,
    archive: bool,
}

impl LlmAgent {
    pub fn new(
        endpoint: EndpointConfig,
        config: LockboxConfig,
        step_budget: usize,
        substitution_seed: u64,
        archive: bool,
    ) -> Self {
        let transcript = PromptTranscript::new(instruction_prompt(&config, step_budget));
        Self {
            endpoint,
            config,
            transcript,
            substitutions: ChaCha8Rng::seed_from_u64(substitution_seed),
            archive,
        }
    }

    pub fn transcript(&self) -> &PromptTranscript {
        &self.transcript
    }
}

impl Agent for LlmAgent {
    fn decide(&mut self, observation: &Observation, _: &[(Observation, AgentDecision)]) -> Result<Turn, AgentError> {
        self.transcript
            .turns
            .push((Role::Environment, render_observation(observation, &self.config)));
        let request = self.archive.then(|| request_body(&self.endpoint, &self.transcript));
        let reply = call_endpoint(&self.endpoint, &self.transcript)?;
        self.transcript.turns.push((Role::Agent, reply.content.clone()));
        let (decision, parse_error) = match parse_decision(&reply.content, &self.config) {
            Ok(d) => (d, None),
            Err(e) => {
                let joint = JointId(self.substitutions.gen_range(0..self.config.num_joints()));
                (
                    AgentDecision {
                        joint,
                        rationale: Some("substituted: unparseable reply".into()),
                    },
                    Some(e.to_string()),
                )
            }
        };
        Ok(Turn {
            substituted: parse_error.is_some(),
            decision,
            transport: Some(TransportLog {
                retries: reply.retries,
                parse_error,
                request,
                response: self.archive.then_some(reply.content),
            }),
        })
    }

    fn prompt_sha256(&self) -> Option<String> {
        Some(sha256_hex(&self.transcript.system_prompt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::initial_observation;
    use crate::lockbox::default_config;

    fn endpoint(url: &str, var: &str) -> EndpointConfig {
        EndpointConfig {
            base_url: url.into(),
            model_name: "test-model".into(),
            api_key_env: var.into(),
            timeout: 5.0,
            max_retries: 2,
            backoff_ms: 1,
            extra: Default::default(),
        }
    }

    #[test]
    fn renders_initial_observation() {
        let c = default_config();
        let text = render_observation(&initial_observation(&c), &c);
        assert_eq!(text, "L1: closed\nL2: closed\nL3: closed\nL4: closed\n");
        assert_eq!(text, render_observation(&initial_observation(&c), &c));
    }

    #[test]
    fn renders_last_action() {
        let c = default_config();
        let mut obs = initial_observation(&c);
        obs.perceived.positions[2] = 1;
        obs.last_action = Some(JointId(2));
        obs.reported_moved = Some(true);
        obs.step_index = 1;
        let text = render_observation(&obs, &c);
        assert!(text.contains("L3: open\n"));
        assert!(text.ends_with("Last action: L3 moved.\n"), "{text}");
        obs.reported_moved = Some(false);
        assert!(render_observation(&obs, &c).ends_with("Last action: L3 did not move.\n"));
    }

    #[test]
    fn parses_marker_then_fallback() {
        let c = default_config();
        assert_eq!(parse_decision("ANSWER: L2", &c).unwrap().joint, JointId(1));
        assert_eq!(
            parse_decision("I will try L3 because...", &c).unwrap().joint,
            JointId(2)
        );
        assert_eq!(
            parse_decision("L4 looked stuck, so\nanswer: l1\n", &c).unwrap().joint,
            JointId(0)
        );
        assert!(matches!(
            parse_decision("I give up", &c),
            Err(BridgeError::Parse { .. })
        ));
        // not a label: L12 is a different token
        assert!(parse_decision("try L12", &c).is_err());
    }

    #[test]
    fn prompt_mentions_target_and_budget() {
        let c = default_config();
        let p = instruction_prompt(&c, 20);
        assert!(p.contains("L1, L2, L3, L4"));
        assert!(p.contains("at most 20 actions"));
        assert!(p.contains("ANSWER:"));
        assert_eq!(sha256_hex(&p), sha256_hex(&instruction_prompt(&c, 20)));
    }

    #[test]
    fn request_shape() {
        let mut t = PromptTranscript::new("sys".into());
        t.turns.push((Role::Environment, "obs".into()));
        t.turns.push((Role::Agent, "ANSWER: L4".into()));
        let mut cfg = endpoint("http://localhost:1", "X");
        cfg.extra.insert("temperature".into(), json!(1.0));
        let body = request_body(&cfg, &t);
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 1.0);
        let roles: Vec<_> = body["messages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["role"].clone())
            .collect();
        assert_eq!(roles, vec![json!("system"), json!("user"), json!("assistant")]);
    }

    #[test]
    fn config_validation() {
        assert!(endpoint("localhost:8080", "X").validate().is_err());
        let mut cfg = endpoint("http://localhost:8080/v1", "X");
        assert!(cfg.validate().is_ok());
        cfg.timeout = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_credential_fails_before_network() {
        // port 9 discard: would fail differently if a request were attempted
        let cfg = endpoint("http://127.0.0.1:9", "LOCKBOX_TEST_SURELY_UNSET_VAR");
        let err = call_endpoint(&cfg, &PromptTranscript::new("s".into())).unwrap_err();
        assert!(matches!(err, BridgeError::MissingCredential(ref v) if v == "LOCKBOX_TEST_SURELY_UNSET_VAR"));
    }
}
