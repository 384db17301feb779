use std::io::{self, BufRead, Write};

use lockbox_probe::channel::{initial_observation, observe_after, FlipPolicy};
use lockbox_probe::llm::render_observation;
use lockbox_probe::lockbox::{apply_action, is_solved, LockboxConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlayOutcome {
    Solved { step: usize },
    BudgetExhausted,
    Quit,
}

/// Interactive session over the same environment and channel code the
/// runner uses.
pub fn play<R: BufRead, W: Write>(
    config: &LockboxConfig,
    flip_p: f64,
    seed: u64,
    budget: usize,
    input: R,
    mut out: W,
) -> io::Result<PlayOutcome> {
    let policy = FlipPolicy::new(flip_p, seed).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let mut stream = policy.stream();
    let mut state = config.initial_state();
    let mut obs = initial_observation(config);
    let labels: Vec<&str> = config.joints().iter().map(|j| j.label()).collect();
    let mut lines = input.lines();
    let mut step = 1;
    writeln!(
        out,
        "Move {} to solve. Joints: {}.",
        config.label(config.target()),
        labels.join(", ")
    )?;
    while step <= budget {
        write!(out, "\n{}step {step}/{budget}> ", render_observation(&obs, config))?;
        out.flush()?;
        let Some(line) = lines.next() else {
            writeln!(out)?;
            return Ok(PlayOutcome::Quit);
        };
        let line = line?;
        let joint = match config.joint_by_label(&line) {
            Ok(j) => j,
            Err(_) => {
                writeln!(
                    out,
                    "unknown joint `{}`; choose one of {}",
                    line.trim(),
                    labels.join(", ")
                )?;
                continue;
            }
        };
        let (next, outcome) = apply_action(config, &state, joint).expect("label lookup yields a valid joint");
        let (next_obs, _, _) = observe_after(&mut stream, &obs.perceived, &outcome, step);
        state = next;
        obs = next_obs;
        if is_solved(&state) {
            writeln!(out, "\n{}Solved at step {step}.", render_observation(&obs, config))?;
            return Ok(PlayOutcome::Solved { step });
        }
        step += 1;
    }
    writeln!(out, "\nStep budget of {budget} exhausted.")?;
    Ok(PlayOutcome::BudgetExhausted)
}
