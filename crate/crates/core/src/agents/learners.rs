use crate::error::{config_err, Error, Result};
use crate::mdp::{PolicyTable, UpdateEstimate, ValueTable};

use super::RolloutBatch;

/// Tabular estimate of `E[R | s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    n_states: usize,
    n_actions: usize,
    table: Vec<f64>,
}

impl RewardModel {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        RewardModel {
            n_states,
            n_actions,
            table: vec![0.0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.n_actions + a]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub(crate) fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if self.n_states != policy.n_states() || self.n_actions != policy.n_actions() {
            return Err(Error::DimensionMismatch {
                what: "reward model",
                expected: policy.n_states() * policy.n_actions(),
                got: self.table.len(),
            });
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr <= 1.0) {
        return Err(config_err(format!("learning rate {lr} outside (0, 1]")));
    }
    Ok(())
}

/// Moves every entry toward the batch mean of its targets by `lr`.
/// `sums[i]` / `counts[i]` are per-entry target sums and counts.
fn mean_step(table: &mut [f64], sums: &[f64], counts: &[f64], lr: f64) {
    for ((v, &s), &n) in table.iter_mut().zip(sums).zip(counts) {
        if n > 0.0 {
            *v += lr * (s / n - *v);
        }
    }
}

/// One step of the critic toward segment-length bootstrapped returns
/// `Σ γ^{k-i} R_k + γ^{L-i} V(S_L)` (the tail only on truncated segments).
///
/// Each visited state moves by `lr` toward its mean target in the batch.
/// Returns the mean squared error before the step.
pub fn train_value(value: &mut ValueTable, batch: &RolloutBatch, gamma: f64, lr: f64) -> Result<f64> {
    check_lr(lr)?;
    if batch.segments.is_empty() {
        return Err(config_err("rollout batch is empty"));
    }
    let ns = value.len();
    let mut sums = vec![0.0; ns];
    let mut counts = vec![0.0; ns];
    let mut sq = 0.0;
    let mut n = 0usize;
    for seg in &batch.segments {
        let mut g = seg.bootstrap_state().map_or(Ok(0.0), |s| {
            if s < ns {
                Ok(value[s])
            } else {
                Err(Error::IndexOutOfBounds { index: s, len: ns })
            }
        })?;
        for st in seg.steps.iter().rev() {
            if st.state >= ns {
                return Err(Error::IndexOutOfBounds {
                    index: st.state,
                    len: ns,
                });
            }
            g = st.reward + gamma * g;
            sums[st.state] += g;
            counts[st.state] += 1.0;
            sq += (g - value[st.state]).powi(2);
            n += 1;
        }
    }
    mean_step(&mut value.0, &sums, &counts, lr);
    Ok(sq / n.max(1) as f64)
}

/// One step of the reward model toward the batch mean reward per `(s, a)`.
/// Returns the mean squared error before the step.
pub fn train_reward_model(model: &mut RewardModel, batch: &RolloutBatch, lr: f64) -> Result<f64> {
    check_lr(lr)?;
    let (ns, na) = (model.n_states, model.n_actions);
    let mut sums = vec![0.0; ns * na];
    let mut counts = vec![0.0; ns * na];
    let mut sq = 0.0;
    let mut n = 0usize;
    for st in batch.segments.iter().flat_map(|s| &s.steps) {
        if st.state >= ns || st.action >= na {
            return Err(Error::IndexOutOfBounds {
                index: st.state * na + st.action,
                len: ns * na,
            });
        }
        let i = st.state * na + st.action;
        sums[i] += st.reward;
        counts[i] += 1.0;
        sq += (st.reward - model.table[i]).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(config_err("rollout batch is empty"));
    }
    mean_step(&mut model.table, &sums, &counts, lr);
    Ok(sq / n as f64)
}

/// Gradient ascent on the logits, after rescaling the update to global norm
/// at most `max_grad_norm` (no clipping when it is not positive).
pub fn apply_update(policy: &PolicyTable, update: &UpdateEstimate, lr: f64, max_grad_norm: f64) -> Result<PolicyTable> {
    if update.n_states() != policy.n_states() || update.n_actions() != policy.n_actions() {
        return Err(Error::DimensionMismatch {
            what: "update",
            expected: policy.logits().len(),
            got: update.grad.len(),
        });
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(config_err(format!("learning rate {lr} must be positive")));
    }
    if !update.is_finite() {
        return Err(config_err("update contains non-finite entries"));
    }
    let norm = update.norm();
    let k = if max_grad_norm > 0.0 && norm > max_grad_norm {
        max_grad_norm / norm
    } else {
        1.0
    };
    let mut out = policy.clone();
    for (l, g) in out.logits_mut().iter_mut().zip(&update.grad) {
        *l += lr * k * g;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Segment;
    use crate::mdp::Step;

    fn step(s: usize, a: usize, r: f64, n: usize, term: bool) -> Step {
        Step {
            state: s,
            action: a,
            reward: r,
            next_state: n,
            terminal: term,
        }
    }

    #[test]
    fn value_moves_toward_mean_return() {
        let batch = RolloutBatch::new(vec![
            Segment {
                steps: vec![step(0, 0, 0.0, 1, false), step(1, 0, 1.0, 2, true)],
                start_time: 0,
                truncated: false,
            },
            Segment {
                steps: vec![step(0, 1, 0.0, 2, true)],
                start_time: 0,
                truncated: false,
            },
        ]);
        let mut v = ValueTable::zeros(3);
        let mse = train_value(&mut v, &batch, 0.5, 1.0).unwrap();
        assert!((mse - (0.25 + 1.0) / 3.0).abs() < 1e-15);
        assert_eq!(v.0, vec![0.25, 1.0, 0.0]);
    }

    #[test]
    fn truncated_segments_bootstrap() {
        let batch = RolloutBatch::new(vec![Segment {
            steps: vec![step(0, 0, 1.0, 1, false)],
            start_time: 4,
            truncated: true,
        }]);
        let mut v = ValueTable(vec![0.0, 2.0]);
        train_value(&mut v, &batch, 0.5, 0.5).unwrap();
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn reward_model_converges_to_means() {
        let batch = RolloutBatch::new(vec![Segment {
            steps: vec![
                step(0, 1, 1.0, 0, false),
                step(0, 1, 3.0, 0, false),
                step(0, 0, -1.0, 1, true),
            ],
            start_time: 0,
            truncated: false,
        }]);
        let mut m = RewardModel::new(2, 2);
        train_reward_model(&mut m, &batch, 1.0).unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(0, 0), -1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert!(train_reward_model(&mut m, &batch, 0.0).is_err());
    }

    #[test]
    fn apply_update_clips_global_norm() {
        let pi = PolicyTable::uniform(1, 2);
        let mut u = UpdateEstimate::zeros(1, 2);
        u.grad = vec![3.0, 4.0];
        let p = apply_update(&pi, &u, 1.0, 0.5).unwrap();
        assert!((p.logits()[0] - 0.3).abs() < 1e-15);
        assert!((p.logits()[1] - 0.4).abs() < 1e-15);
        let p = apply_update(&pi, &u, 0.1, 0.0).unwrap();
        assert!((p.logits()[1] - 0.4).abs() < 1e-15);
        assert!(apply_update(&PolicyTable::uniform(2, 2), &u, 1.0, 0.5).is_err());
    }
}
