//! Episodes and sweeps.
//!
//! A trial resets the box to the plan's initial configuration and loops
//! decision, action, observation until the target moves or the step budget
//! runs out. Success is judged on the true state, whatever the agent was
//! told. A sweep runs `flip_grid x repetitions x trials_per_repetition`
//! trials with positional seeds, in parallel, and returns them in canonical
//! (grid, repetition, trial) order.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{AgentContext, AgentDecision, AgentSpec};
use crate::channel::{initial_observation, observe_after, FlipEvent, FlipPolicy, Observation};
use crate::llm::TransportLog;
use crate::lockbox::{apply_action, default_config, is_solved, ActionOutcome, LockboxConfig};
use crate::seed;

pub const DEFAULT_STEP_BUDGET: usize = 20;

/// Where the plan's lockbox comes from: `"default"`, a path to a config
/// JSON (relative to the plan file), or an inline config object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigRef {
    Named(String),
    Inline(LockboxConfig),
}

impl ConfigRef {
    pub fn resolve(&self, base_dir: &Path) -> Result<LockboxConfig, String> {
        match self {
            ConfigRef::Inline(c) => Ok(c.clone()),
            ConfigRef::Named(name) if name == "default" => Ok(default_config()),
            ConfigRef::Named(path) => {
                let full: PathBuf = base_dir.join(path);
                let text = std::fs::read_to_string(&full).map_err(|e| format!("{}: {e}", full.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", full.display()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunPlan {
    pub config_ref: LockboxConfig,
    pub agent_spec: AgentSpec,
    pub flip_grid: Vec<f64>,
    pub repetitions: usize,
    pub trials_per_repetition: usize,
    pub step_budget: usize,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub archive_transcripts: bool,
}

/// One problem found while reading a run plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("malformed JSON at byte offset {offset} (line {line}, column {column}): {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid run plan:\n{}", .0.iter().map(|e| format!("  {}: {}", e.field, e.message)).collect::<Vec<_>>().join("\n"))]
    Fields(Vec<FieldError>),
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

const PLAN_FIELDS: [&str; 8] = [
    "config_ref",
    "agent_spec",
    "flip_grid",
    "repetitions",
    "trials_per_repetition",
    "step_budget",
    "master_seed",
    "archive_transcripts",
];

impl RunPlan {
    /// A plan with the default box, a 20-step budget and the 0..0.6 grid.
    pub fn new(agent_spec: AgentSpec, repetitions: usize, trials_per_repetition: usize, master_seed: u64) -> Self {
        Self {
            config_ref: default_config(),
            agent_spec,
            flip_grid: standard_grid(),
            repetitions,
            trials_per_repetition,
            step_budget: DEFAULT_STEP_BUDGET,
            master_seed,
            archive_transcripts: false,
        }
    }

    /// Parses and validates a plan, reporting every bad field at once.
    /// Relative config paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PlanError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| PlanError::Syntax {
            offset: byte_offset(text, e.line(), e.column()),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut errors = Vec::new();
        let mut bad = |field: &str, message: String| {
            errors.push(FieldError {
                field: field.to_string(),
                message,
            })
        };
        let Some(obj) = doc.as_object() else {
            bad("<root>", "expected a JSON object".into());
            return Err(PlanError::Fields(errors));
        };
        for key in obj.keys() {
            if !PLAN_FIELDS.contains(&key.as_str()) {
                bad(key, "unknown field".into());
            }
        }
        fn field<T: serde::de::DeserializeOwned>(
            obj: &serde_json::Map<String, Value>,
            name: &str,
            default: Option<T>,
            bad: &mut dyn FnMut(&str, String),
        ) -> Option<T> {
            match obj.get(name) {
                None => {
                    if default.is_none() {
                        bad(name, "missing".into());
                    }
                    default
                }
                Some(v) => match serde_json::from_value(v.clone()) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        bad(name, e.to_string());
                        None
                    }
                },
            }
        }
        let config_ref: Option<ConfigRef> =
            field(obj, "config_ref", Some(ConfigRef::Named("default".into())), &mut bad);
        let agent_spec: Option<AgentSpec> = field(obj, "agent_spec", None, &mut bad);
        let flip_grid: Option<Vec<f64>> = field(obj, "flip_grid", None, &mut bad);
        let repetitions: Option<usize> = field(obj, "repetitions", None, &mut bad);
        let trials: Option<usize> = field(obj, "trials_per_repetition", None, &mut bad);
        let step_budget: Option<usize> = field(obj, "step_budget", Some(DEFAULT_STEP_BUDGET), &mut bad);
        let master_seed: Option<u64> = field(obj, "master_seed", None, &mut bad);
        let archive: Option<bool> = field(obj, "archive_transcripts", Some(false), &mut bad);

        let config = config_ref.and_then(|r| match r.resolve(base_dir) {
            Ok(c) => Some(c),
            Err(e) => {
                bad("config_ref", e);
                None
            }
        });
        if let (Some(spec), Some(config)) = (&agent_spec, &config) {
            if let Err(e) = spec.validate_for(config) {
                bad("agent_spec", e.to_string());
            }
        }
        match (
            config,
            agent_spec,
            flip_grid,
            repetitions,
            trials,
            step_budget,
            master_seed,
            archive,
        ) {
            (
                Some(config),
                Some(spec),
                Some(grid),
                Some(reps),
                Some(trials),
                Some(budget),
                Some(seed),
                Some(archive),
            ) if errors.is_empty() => {
                let plan = RunPlan {
                    config_ref: config,
                    agent_spec: spec,
                    flip_grid: grid,
                    repetitions: reps,
                    trials_per_repetition: trials,
                    step_budget: budget,
                    master_seed: seed,
                    archive_transcripts: archive,
                };
                plan.validate()?;
                Ok(plan)
            }
            _ => Err(PlanError::Fields(errors)),
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let mut errors = Vec::new();
        let mut bad = |field: &str, message: String| {
            errors.push(FieldError {
                field: field.into(),
                message,
            })
        };
        if self.step_budget < 1 {
            bad("step_budget", "must be at least 1".into());
        }
        if self.repetitions < 1 {
            bad("repetitions", "must be at least 1".into());
        }
        if self.trials_per_repetition < 1 {
            bad("trials_per_repetition", "must be at least 1".into());
        }
        if self.flip_grid.is_empty() {
            bad("flip_grid", "must contain at least one probability".into());
        }
        for (i, p) in self.flip_grid.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                bad(
                    &format!("flip_grid[{i}]"),
                    format!("probability must lie in [0, 1], got {p}"),
                );
            } else if self.flip_grid[..i].contains(p) {
                bad(&format!("flip_grid[{i}]"), format!("duplicate probability {p}"));
            }
        }
        if let Err(e) = self.agent_spec.validate_for(&self.config_ref) {
            bad("agent_spec", e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PlanError::Fields(errors))
        }
    }

    pub fn total_trials(&self) -> usize {
        self.flip_grid.len() * self.repetitions * self.trials_per_repetition
    }
}

/// `0.0, 0.1, ..., 0.6`.
pub fn standard_grid() -> Vec<f64> {
    (0..=6).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub decision: AgentDecision,
    pub true_outcome: ActionOutcome,
    pub observation: Observation,
    pub flip: Option<FlipEvent>,
    pub substitution: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub grid_index: usize,
    pub repetition: usize,
    pub trial_index: usize,
    pub trial_seed: u64,
    pub flip_p: f64,
    pub agent: String,
    pub step_budget: usize,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    pub steps_to_success: Option<usize>,
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    /// Wall-clock start; excluded from determinism comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_unix_ms: Option<u64>,
}

impl TrialRecord {
    pub fn actions(&self) -> Vec<crate::lockbox::JointId> {
        self.steps.iter().map(|s| s.decision.joint).collect()
    }

    pub fn flips(&self) -> impl Iterator<Item = &FlipEvent> {
        self.steps.iter().filter_map(|s| s.flip.as_ref())
    }

    pub fn substitutions(&self) -> usize {
        self.steps.iter().filter(|s| s.substitution).count()
    }

    pub fn without_timestamp(mut self) -> Self {
        self.started_unix_ms = None;
        self
    }
}

fn now_ms() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_millis() as u64)
}

/// Runs one episode. Coordinates (`grid_index`, `repetition`,
/// `trial_index`) are left at zero; [`run_sweep`] fills them in.
pub fn run_trial(plan: &RunPlan, flip_p: f64, trial_seed: u64) -> TrialRecord {
    let config = &plan.config_ref;
    let mut record = TrialRecord {
        grid_index: 0,
        repetition: 0,
        trial_index: 0,
        trial_seed,
        flip_p,
        agent: plan.agent_spec.name().to_string(),
        step_budget: plan.step_budget,
        steps: Vec::new(),
        success: false,
        steps_to_success: None,
        aborted: false,
        abort_note: None,
        prompt_sha256: None,
        started_unix_ms: now_ms(),
    };
    let ctx = AgentContext {
        seed: seed::derive(trial_seed, &[seed::AGENT_STREAM]),
        substitution_seed: seed::derive(trial_seed, &[seed::SUBSTITUTION_STREAM]),
        step_budget: plan.step_budget,
        archive_transcripts: plan.archive_transcripts,
    };
    let mut agent = match plan.agent_spec.build(config, ctx) {
        Ok(a) => a,
        Err(e) => {
            record.aborted = true;
            record.abort_note = Some(e.to_string());
            return record;
        }
    };
    record.prompt_sha256 = agent.prompt_sha256();
    let policy = match FlipPolicy::new(flip_p, seed::derive(trial_seed, &[seed::CHANNEL_STREAM])) {
        Ok(p) => p,
        Err(e) => {
            record.aborted = true;
            record.abort_note = Some(e.to_string());
            return record;
        }
    };
    let mut stream = policy.stream();
    let mut state = config.initial_state();
    let mut obs = initial_observation(config);
    let mut history: Vec<(Observation, AgentDecision)> = Vec::new();
    for step in 1..=plan.step_budget {
        let turn = match agent.decide(&obs, &history) {
            Ok(t) => t,
            Err(e) => {
                record.aborted = true;
                record.abort_note = Some(format!("step {step}: {e}"));
                break;
            }
        };
        let (next, outcome) = match apply_action(config, &state, turn.decision.joint) {
            Ok(r) => r,
            Err(e) => {
                record.aborted = true;
                record.abort_note = Some(format!("step {step}: agent chose an invalid joint: {e}"));
                break;
            }
        };
        let (next_obs, _, flip) = observe_after(&mut stream, &obs.perceived, &outcome, step);
        record.steps.push(StepRecord {
            step_index: step,
            decision: turn.decision.clone(),
            true_outcome: outcome,
            observation: next_obs.clone(),
            flip,
            substitution: turn.substituted,
            transport: turn.transport,
        });
        history.push((obs, turn.decision));
        obs = next_obs;
        state = next;
        if is_solved(&state) {
            record.success = true;
            record.steps_to_success = Some(step);
            break;
        }
    }
    record
}

/// Runs the whole grid on `jobs` worker threads (0 = rayon default).
pub fn run_sweep(plan: &RunPlan, jobs: usize) -> Vec<TrialRecord> {
    let coords: Vec<(usize, usize, usize)> = (0..plan.flip_grid.len())
        .flat_map(|g| (0..plan.repetitions).flat_map(move |r| (0..plan.trials_per_repetition).map(move |t| (g, r, t))))
        .collect();
    let run = |&(g, r, t): &(usize, usize, usize)| {
        let mut rec = run_trial(plan, plan.flip_grid[g], seed::trial_seed(plan.master_seed, g, r, t));
        rec.grid_index = g;
        rec.repetition = r;
        rec.trial_index = t;
        rec
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build();
    match pool {
        Ok(pool) => pool.install(|| coords.par_iter().map(run).collect()),
        Err(_) => coords.iter().map(run).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptParams;

    fn scripted(labels: &[&str]) -> AgentSpec {
        AgentSpec::Scripted(ScriptParams {
            script: labels.iter().map(|s| s.to_string()).collect(),
        })
    }

    #[test]
    fn scripted_solution_succeeds_at_four() {
        let plan = RunPlan::new(scripted(&["L4", "L3", "L2", "L1"]), 1, 1, 0);
        let rec = run_trial(&plan, 0.0, 1);
        assert!(rec.success);
        assert_eq!(rec.steps_to_success, Some(4));
        assert_eq!(rec.steps.len(), 4);
        assert_eq!(rec.flips().count(), 0);
    }

    #[test]
    fn locked_joint_exhausts_budget() {
        let plan = RunPlan::new(scripted(&["L2"]), 1, 1, 0);
        let rec = run_trial(&plan, 0.0, 1);
        assert!(!rec.success && !rec.aborted);
        assert_eq!(rec.steps.len(), 20);
        assert!(rec.steps.iter().all(|s| !s.true_outcome.moved));
    }

    #[test]
    fn success_is_judged_on_truth() {
        let plan = RunPlan::new(scripted(&["L4", "L3", "L2", "L1"]), 1, 1, 0);
        let rec = run_trial(&plan, 1.0, 1);
        assert!(rec.success);
        assert_eq!(rec.steps_to_success, Some(4));
        assert_eq!(rec.flips().count(), 4);
        for s in &rec.steps {
            let f = s.flip.unwrap();
            assert_eq!(f.true_moved, s.true_outcome.moved);
            assert_eq!(Some(f.reported_moved), s.observation.reported_moved);
        }
    }

    #[test]
    fn sweep_shape_and_order() {
        let plan = RunPlan::new(AgentSpec::Random, 3, 10, 5);
        let recs = run_sweep(&plan, 2);
        assert_eq!(recs.len(), 210);
        let coords: Vec<_> = recs
            .iter()
            .map(|r| (r.grid_index, r.repetition, r.trial_index))
            .collect();
        let mut sorted = coords.clone();
        sorted.sort();
        assert_eq!(coords, sorted);
        let mut single = RunPlan::new(AgentSpec::Random, 1, 1, 5);
        single.flip_grid = vec![0.0];
        assert_eq!(run_sweep(&single, 1).len(), 1);
    }

    #[test]
    fn trials_are_positionally_seeded() {
        let plan = RunPlan::new(AgentSpec::Random, 2, 4, 77);
        let recs = run_sweep(&plan, 3);
        let r = &recs[9];
        let alone = run_trial(&plan, plan.flip_grid[r.grid_index], r.trial_seed);
        assert_eq!(alone.steps, r.steps);
    }

    #[test]
    fn plan_parsing_reports_fields() {
        let text = r#"{"agent_spec":{"name":"random"},"flip_grid":[0.0,1.5],"repetitions":0,
                       "trials_per_repetition":2,"master_seed":1}"#;
        let err = RunPlan::from_json(text, Path::new(".")).unwrap_err();
        let PlanError::Fields(fields) = err else { panic!() };
        let names: Vec<_> = fields.iter().map(|f| f.field.as_str()).collect();
        assert!(names.contains(&"repetitions"), "{names:?}");
        assert!(names.contains(&"flip_grid[1]"), "{names:?}");

        let err = RunPlan::from_json(r#"{"agent_spec": }"#, Path::new(".")).unwrap_err();
        assert!(matches!(err, PlanError::Syntax { offset: 15, .. }), "{err:?}");

        let err = RunPlan::from_json(r#"{"bogus": 1}"#, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("bogus: unknown field"), "{err}");
    }

    #[test]
    fn plan_round_trips_through_json() {
        let plan = RunPlan::new(scripted(&["L4"]), 3, 10, 9);
        let text = serde_json::to_string(&plan).unwrap();
        assert_eq!(RunPlan::from_json(&text, Path::new(".")).unwrap(), plan);
    }
}
