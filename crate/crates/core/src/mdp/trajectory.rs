use rand::Rng;

use crate::error::{config_err, Error, Result};

use super::{PolicyTable, TabularMdp};

/// One environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// `next_state` is terminal; no step follows this one.
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Cut at `max_steps` rather than by reaching a terminal state.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Chaining and termination invariants.
    pub fn is_well_formed(&self) -> bool {
        let chained = self
            .steps
            .windows(2)
            .all(|w| w[0].next_state == w[1].state && !w[0].terminal);
        let ends_right = match self.steps.last() {
            Some(last) => last.terminal != self.truncated,
            None => !self.truncated,
        };
        chained && ends_right
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u just above the cumulative sum; take the last
    // action with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws the initial state from the MDP's start distribution.
pub fn sample_start<R: Rng + ?Sized>(mdp: &TabularMdp, rng: &mut R) -> usize {
    sample_categorical(mdp.initial_dist(), rng)
}

/// One environment step from a live state.
pub(crate) fn env_step<R: Rng + ?Sized>(mdp: &TabularMdp, probs: &[f64], s: usize, rng: &mut R) -> Step {
    let na = mdp.n_actions();
    let a = sample_categorical(&probs[s * na..(s + 1) * na], rng);
    let next = sample_categorical(mdp.transition_row(s, a), rng);
    Step {
        state: s,
        action: a,
        reward: mdp.r(s, a, next),
        next_state: next,
        terminal: mdp.is_terminal(next),
    }
}

/// Rolls out `policy` from the initial distribution until a terminal state
/// is entered or `max_steps` transitions have been taken.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    rng: &mut R,
    max_steps: usize,
) -> Result<Trajectory> {
    if max_steps == 0 {
        return Err(config_err("max_steps must be at least 1"));
    }
    policy.check_mdp(mdp)?;
    let probs = policy.prob_table();
    let mut s = sample_start(mdp, rng);
    let mut steps = Vec::new();
    if mdp.is_terminal(s) {
        return Ok(Trajectory {
            steps,
            truncated: false,
        });
    }
    while steps.len() < max_steps {
        let step = env_step(mdp, &probs, s, rng);
        steps.push(step);
        if step.terminal {
            return Ok(Trajectory {
                steps,
                truncated: false,
            });
        }
        s = step.next_state;
    }
    Ok(Trajectory { steps, truncated: true })
}

/// `Σ_{k≥t} γ^{k-t} R_k` over the suffix starting at `t`.
pub fn discounted_return(traj: &Trajectory, t: usize, gamma: f64) -> Result<f64> {
    if t >= traj.steps.len() {
        return Err(Error::IndexOutOfBounds {
            index: t,
            len: traj.steps.len(),
        });
    }
    Ok(traj.steps[t..]
        .iter()
        .rev()
        .fold(0.0, |g, step| step.reward + gamma * g))
}
