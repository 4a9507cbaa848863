use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::hindsight::CreditSample;
use crate::mdp::{sample_start, trajectory::env_step, PolicyTable, Step, TabularMdp, Trajectory};

/// A contiguous run of steps from one episode.
///
/// `start_time` is the episode time of the first step, so discounting can
/// use absolute time. A truncated segment stopped at a live state, which is
/// then its bootstrap state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segment {
    pub steps: Vec<Step>,
    pub start_time: usize,
    pub truncated: bool,
}

impl Segment {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Segment {
            steps: traj.steps.clone(),
            start_time: 0,
            truncated: traj.truncated,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `S_i` for `i` in `0..=len`; index `len` is the final next state.
    pub fn state(&self, i: usize) -> usize {
        if i < self.steps.len() {
            self.steps[i].state
        } else {
            self.steps[self.steps.len() - 1].next_state
        }
    }

    pub fn bootstrap_state(&self) -> Option<usize> {
        match (self.truncated, self.steps.last()) {
            (true, Some(last)) => Some(last.next_state),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(config_err("empty segment"));
        }
        let chained = self
            .steps
            .windows(2)
            .all(|w| w[0].next_state == w[1].state && !w[0].terminal);
        let last_terminal = self.steps[self.steps.len() - 1].terminal;
        if !chained || last_terminal == self.truncated {
            return Err(config_err("segment breaks chaining or termination invariants"));
        }
        Ok(())
    }
}

/// Segments gathered for one update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub segments: Vec<Segment>,
}

impl RolloutBatch {
    pub fn new(segments: Vec<Segment>) -> Self {
        RolloutBatch { segments }
    }

    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        RolloutBatch {
            segments: trajs
                .into_iter()
                .filter(|t| !t.is_empty())
                .map(Segment::from_trajectory)
                .collect(),
        }
    }

    /// Number of environment steps in the batch.
    pub fn timesteps(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// Checks non-emptiness, chaining, and index bounds against `mdp`.
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.segments.is_empty() {
            return Err(config_err("rollout batch is empty"));
        }
        for seg in &self.segments {
            seg.check()?;
            for st in &seg.steps {
                for s in [st.state, st.next_state] {
                    if s >= mdp.n_states() {
                        return Err(Error::IndexOutOfBounds {
                            index: s,
                            len: mdp.n_states(),
                        });
                    }
                }
                if st.action >= mdp.n_actions() {
                    return Err(Error::IndexOutOfBounds {
                        index: st.action,
                        len: mdp.n_actions(),
                    });
                }
            }
        }
        Ok(())
    }

    /// All `(S_t, A_t, S_k)` with `t < k ≤ len` inside each segment.
    pub fn credit_samples(&self) -> Vec<CreditSample> {
        let mut out = Vec::new();
        for seg in &self.segments {
            for (t, st) in seg.steps.iter().enumerate() {
                for k in t + 1..=seg.len() {
                    out.push(CreditSample {
                        state: st.state,
                        action: st.action,
                        future: seg.state(k),
                    });
                }
            }
        }
        out
    }

    pub fn visited_states(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| s.steps.iter().map(|st| st.state))
            .collect()
    }
}

/// Parallel environments stepped in lockstep to produce fixed-length
/// rollouts, resetting episodes as they end.
#[derive(Debug, Clone)]
pub struct RolloutCollector {
    states: Vec<usize>,
    episode_time: Vec<usize>,
    max_episode_steps: usize,
    started: bool,
}

impl RolloutCollector {
    pub fn new(num_envs: usize, max_episode_steps: usize) -> Result<Self> {
        if num_envs == 0 || max_episode_steps == 0 {
            return Err(config_err("num_envs and max_episode_steps must be positive"));
        }
        Ok(RolloutCollector {
            states: vec![0; num_envs],
            episode_time: vec![0; num_envs],
            max_episode_steps,
            started: false,
        })
    }

    fn reset<R: Rng + ?Sized>(mdp: &TabularMdp, rng: &mut R) -> usize {
        // Start distributions that put mass on terminal states would yield
        // empty episodes; redraw until live.
        loop {
            let s = sample_start(mdp, rng);
            if !mdp.is_terminal(s) {
                return s;
            }
        }
    }

    /// Runs every environment for `steps` steps. Each environment contributes
    /// one segment per episode fragment.
    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        mdp: &TabularMdp,
        policy: &PolicyTable,
        steps: usize,
        rng: &mut R,
    ) -> Result<RolloutBatch> {
        policy.check_mdp(mdp)?;
        if steps == 0 {
            return Err(config_err("rollout length must be positive"));
        }
        if !self.started {
            for s in self.states.iter_mut() {
                *s = Self::reset(mdp, rng);
            }
            self.started = true;
        }
        let probs = policy.prob_table();
        let mut segments = Vec::new();
        for e in 0..self.states.len() {
            let mut seg = Segment {
                steps: Vec::with_capacity(steps),
                start_time: self.episode_time[e],
                truncated: false,
            };
            for i in 0..steps {
                let step = env_step(mdp, &probs, self.states[e], rng);
                seg.steps.push(step);
                self.episode_time[e] += 1;
                let time_limit = self.episode_time[e] >= self.max_episode_steps;
                if step.terminal || time_limit {
                    seg.truncated = !step.terminal;
                    segments.push(std::mem::take(&mut seg));
                    self.states[e] = Self::reset(mdp, rng);
                    self.episode_time[e] = 0;
                    seg.start_time = 0;
                } else {
                    self.states[e] = step.next_state;
                    if i + 1 == steps {
                        seg.truncated = true;
                    }
                }
            }
            if !seg.steps.is_empty() {
                segments.push(seg);
            }
        }
        Ok(RolloutBatch { segments })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain3, frozenlake_4x4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn credit_pairs_cover_every_later_state() {
        let mdp = chain3(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = crate::mdp::sample_trajectory(&mdp, &PolicyTable::for_mdp(&mdp), &mut rng, 10).unwrap();
        let batch = RolloutBatch::from_trajectories([&t]);
        let pairs: Vec<(usize, usize)> = batch.credit_samples().iter().map(|x| (x.state, x.future)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn window_of_32_steps_gives_528_pairs() {
        let step = Step {
            state: 0,
            action: 0,
            reward: 0.0,
            next_state: 0,
            terminal: false,
        };
        let steps = vec![step; 32];
        let seg = Segment {
            steps,
            start_time: 0,
            truncated: true,
        };
        assert_eq!(RolloutBatch::new(vec![seg]).credit_samples().len(), 528);
    }

    #[test]
    fn collector_produces_valid_segments() {
        let mdp = frozenlake_4x4(true, 0.0, 0.99);
        let pi = PolicyTable::for_mdp(&mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = RolloutCollector::new(4, 10).unwrap();
        for _ in 0..50 {
            let batch = c.collect(&mdp, &pi, 8, &mut rng).unwrap();
            assert_eq!(batch.timesteps(), 32);
            batch.validate(&mdp).unwrap();
            for seg in &batch.segments {
                assert!(seg.start_time + seg.len() <= 10);
                assert_eq!(seg.bootstrap_state().is_some(), seg.truncated);
            }
        }
    }

    #[test]
    fn truncated_segments_continue_episode_time() {
        let mdp = frozenlake_4x4(false, 0.0, 0.99);
        // Always left from the start: the agent never leaves state 0.
        let pi = PolicyTable::greedy(4, &[0; 16], 800.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = RolloutCollector::new(1, 100).unwrap();
        let b1 = c.collect(&mdp, &pi, 32, &mut rng).unwrap();
        let b2 = c.collect(&mdp, &pi, 32, &mut rng).unwrap();
        assert_eq!(b1.segments[0].start_time, 0);
        assert_eq!(b2.segments[0].start_time, 32);
        assert!(b2.segments[0].truncated);
    }

    #[test]
    fn validate_rejects_broken_chains() {
        let mdp = chain3(1.0);
        let step = |s, n, term| Step {
            state: s,
            action: 0,
            reward: 0.0,
            next_state: n,
            terminal: term,
        };
        let bad = RolloutBatch::new(vec![Segment {
            steps: vec![step(0, 1, false), step(0, 1, false)],
            start_time: 0,
            truncated: true,
        }]);
        assert!(bad.validate(&mdp).is_err());
        assert!(RolloutBatch::default().validate(&mdp).is_err());
    }
}
