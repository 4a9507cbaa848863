//! Finite MDPs, tabular policies and values, trajectory sampling, and the
//! dynamic-programming routines every estimator in this crate is checked
//! against.

pub(crate) mod dp;
mod format;
mod policy;
pub(crate) mod trajectory;
mod update;

pub use dp::{
    default_horizon, discounted_visitation, evaluate_policy, evaluate_policy_with, exact_policy_gradient,
    greedy_action_sets, q_values, shape_rewards, truncation_bound, value_iteration, GRADIENT_TRUNCATION_TOL,
};
pub use format::{read_mdp, read_policy, write_mdp, write_policy};
pub use policy::{softmax_into, PolicyTable, ValueTable};
pub use trajectory::{discounted_return, sample_categorical, sample_start, sample_trajectory, Step, Trajectory};
pub use update::UpdateEstimate;

use crate::error::{Error, Result};

/// Row-sum tolerance for transition rows and the initial distribution.
pub const PROBABILITY_TOL: f64 = 1e-12;

/// How the reward table depends on the transition.
///
/// `NextStateOnly` means `r[s][a][s']` is constant in `(s, a)` for every
/// non-terminal source `s`. Terminal rows are forced to zero regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    NextStateOnly,
    FullTransition,
}

impl RewardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::NextStateOnly => "next_state_only",
            RewardKind::FullTransition => "full_transition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "next_state_only" => Some(RewardKind::NextStateOnly),
            "full_transition" => Some(RewardKind::FullTransition),
            _ => None,
        }
    }
}

/// A finite MDP with dense `P[s][a][s']` and `r[s][a][s']` tables.
///
/// Terminal states self-loop with probability one and zero reward. Episodes
/// end on entering them, so every dynamic-programming routine here treats
/// them as absorbing with value zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    reward_kind: RewardKind,
    gamma: f64,
    terminal: Vec<bool>,
    initial_dist: Vec<f64>,
}

impl TabularMdp {
    pub fn builder(n_states: usize, n_actions: usize) -> MdpBuilder {
        MdpBuilder::new(n_states, n_actions)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward_kind
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    #[inline]
    fn row(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.n_states
    }

    /// `P[s][a][·]`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.row(s, a);
        &self.transition[i..i + self.n_states]
    }

    /// `r[s][a][·]`.
    #[inline]
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.row(s, a);
        &self.reward[i..i + self.n_states]
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[self.row(s, a) + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.row(s, a) + next]
    }

    /// Flat transition tensor, row-major over `(s, a, s')`.
    pub fn transition_table(&self) -> &[f64] {
        &self.transition
    }

    /// Flat reward tensor, row-major over `(s, a, s')`.
    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    /// Expected immediate reward `Σ_s' P[s][a][s'] r[s][a][s']`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(self.reward_row(s, a))
            .map(|(p, r)| p * r)
            .sum()
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Same dynamics, different rewards. The new table is validated against
    /// `kind`.
    pub fn with_rewards(&self, reward: Vec<f64>, kind: RewardKind) -> Result<Self> {
        let mut out = self.clone();
        out.reward = reward;
        out.reward_kind = kind;
        out.zero_terminal_rows();
        out.validate()?;
        Ok(out)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut out = self.clone();
        out.gamma = gamma;
        out.validate()?;
        Ok(out)
    }

    fn zero_terminal_rows(&mut self) {
        let (ns, na) = (self.n_states, self.n_actions);
        for s in (0..ns).filter(|&s| self.terminal[s]) {
            for a in 0..na {
                let i = (s * na + a) * ns;
                for j in 0..ns {
                    self.transition[i + j] = if j == s { 1.0 } else { 0.0 };
                    self.reward[i + j] = 0.0;
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        let expect = ns * na * ns;
        for (what, len) in [("transition", self.transition.len()), ("reward", self.reward.len())] {
            if len != expect {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: expect,
                    got: len,
                });
            }
        }
        if self.terminal.len() != ns {
            return Err(Error::DimensionMismatch {
                what: "terminal",
                expected: ns,
                got: self.terminal.len(),
            });
        }
        if self.initial_dist.len() != ns {
            return Err(Error::DimensionMismatch {
                what: "initial_dist",
                expected: ns,
                got: self.initial_dist.len(),
            });
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition_row(s, a);
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::InvalidMdp(format!(
                        "P[{s}][{a}] has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROBABILITY_TOL {
                    return Err(Error::InvalidMdp(format!("P[{s}][{a}] sums to {sum}")));
                }
                if self.reward_row(s, a).iter().any(|r| !r.is_finite()) {
                    return Err(Error::InvalidMdp(format!("r[{s}][{a}] has a non-finite entry")));
                }
            }
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if self.initial_dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (init_sum - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::InvalidMdp(format!("initial distribution sums to {init_sum}")));
        }
        if self.reward_kind == RewardKind::NextStateOnly {
            let mut reference: Option<(usize, usize)> = None;
            for s in (0..ns).filter(|&s| !self.terminal[s]) {
                for a in 0..na {
                    match reference {
                        None => reference = Some((s, a)),
                        Some((s0, a0)) => {
                            let base = self.reward_row(s0, a0);
                            let row = self.reward_row(s, a);
                            if let Some(j) = (0..ns).find(|&j| row[j] != base[j]) {
                                return Err(Error::InvalidMdp(format!(
                                    "reward_kind next_state_only but r[{s}][{a}][{j}] = {} differs from r[{s0}][{a0}][{j}] = {}",
                                    row[j], base[j]
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Incremental construction of a [`TabularMdp`].
///
/// Terminal rows are overwritten with a zero-reward self-loop in
/// [`MdpBuilder::build`], so callers only describe live states.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    reward_kind: RewardKind,
    gamma: f64,
    terminal: Vec<bool>,
    initial_dist: Vec<f64>,
}

impl MdpBuilder {
    fn new(n_states: usize, n_actions: usize) -> Self {
        let mut initial_dist = vec![0.0; n_states];
        if let Some(first) = initial_dist.first_mut() {
            *first = 1.0;
        }
        MdpBuilder {
            n_states,
            n_actions,
            transition: vec![0.0; n_states * n_actions * n_states],
            reward: vec![0.0; n_states * n_actions * n_states],
            reward_kind: RewardKind::FullTransition,
            gamma: 1.0,
            terminal: vec![false; n_states],
            initial_dist,
        }
    }

    fn idx(&self, s: usize, a: usize, next: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + next
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn reward_kind(mut self, kind: RewardKind) -> Self {
        self.reward_kind = kind;
        self
    }

    pub fn terminal(mut self, s: usize) -> Self {
        self.terminal[s] = true;
        self
    }

    pub fn initial_dist(mut self, dist: Vec<f64>) -> Self {
        self.initial_dist = dist;
        self
    }

    /// Adds `p` to `P[s][a][next]`.
    pub fn transition(mut self, s: usize, a: usize, next: usize, p: f64) -> Self {
        let i = self.idx(s, a, next);
        self.transition[i] += p;
        self
    }

    pub fn set_transition(&mut self, s: usize, a: usize, next: usize, p: f64) {
        let i = self.idx(s, a, next);
        self.transition[i] = p;
    }

    pub fn set_reward(&mut self, s: usize, a: usize, next: usize, r: f64) {
        let i = self.idx(s, a, next);
        self.reward[i] = r;
    }

    pub fn reward(mut self, s: usize, a: usize, next: usize, r: f64) -> Self {
        self.set_reward(s, a, next, r);
        self
    }

    /// Sets `r[s][a][next] = r` for every live `(s, a)`.
    pub fn reward_on_entry(mut self, next: usize, r: f64) -> Self {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                self.set_reward(s, a, next, r);
            }
        }
        self
    }

    pub fn set_terminal(&mut self, s: usize) {
        self.terminal[s] = true;
    }

    pub fn build(self) -> Result<TabularMdp> {
        let mut mdp = TabularMdp {
            n_states: self.n_states,
            n_actions: self.n_actions,
            transition: self.transition,
            reward: self.reward,
            reward_kind: self.reward_kind,
            gamma: self.gamma,
            terminal: self.terminal,
            initial_dist: self.initial_dist,
        };
        if mdp.terminal.len() == mdp.n_states && mdp.transition.len() == mdp.n_states * mdp.n_actions * mdp.n_states {
            mdp.zero_terminal_rows();
        }
        mdp.validate()?;
        Ok(mdp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin() -> MdpBuilder {
        TabularMdp::builder(3, 2)
            .transition(0, 0, 1, 0.5)
            .transition(0, 0, 2, 0.5)
            .transition(0, 1, 2, 1.0)
            .terminal(1)
            .terminal(2)
    }

    #[test]
    fn builder_forces_terminal_self_loops() {
        let mdp = coin().reward(1, 0, 2, 5.0).build().unwrap();
        assert_eq!(mdp.transition_row(1, 0), &[0.0, 1.0, 0.0]);
        assert_eq!(mdp.reward_row(1, 0), &[0.0, 0.0, 0.0]);
        assert!(mdp.is_terminal(2));
    }

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        let err = TabularMdp::builder(2, 1)
            .transition(0, 0, 1, 0.9)
            .terminal(1)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidMdp(_)), "{err}");
    }

    #[test]
    fn rejects_bad_gamma_and_initial_dist() {
        assert!(coin().gamma(0.0).build().is_err());
        assert!(coin().gamma(1.5).build().is_err());
        assert!(coin().initial_dist(vec![0.5, 0.0, 0.0]).build().is_err());
    }

    #[test]
    fn next_state_only_requires_constant_entry_rewards() {
        let ok = coin()
            .reward_kind(RewardKind::NextStateOnly)
            .reward_on_entry(2, 1.0)
            .build();
        assert!(ok.is_ok());
        let bad = coin()
            .reward_kind(RewardKind::NextStateOnly)
            .reward(0, 1, 2, 1.0)
            .build();
        assert!(bad.is_err());
    }

    #[test]
    fn expected_reward_weights_by_transition() {
        let mdp = coin().reward(0, 0, 2, 2.0).build().unwrap();
        assert_eq!(mdp.expected_reward(0, 0), 1.0);
        assert_eq!(mdp.expected_reward(0, 1), 0.0);
    }
}
