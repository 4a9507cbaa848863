//! Policy-gradient update rules over a [`RolloutBatch`].
//!
//! Every rule discounts by absolute episode time, `γ^{start_time + i}`, and
//! accumulates `Σ_a w_a ∇ log π(a | S_t)` into an [`UpdateEstimate`].

use crate::error::{config_err, Result};
use crate::mdp::{PolicyTable, UpdateEstimate, ValueTable};

use super::{CreditFunction, CreditQuery, RewardModel, RolloutBatch, Segment};

fn prepare(batch: &RolloutBatch, policy: &PolicyTable) -> Result<(UpdateEstimate, Vec<f64>)> {
    if batch.segments.is_empty() {
        return Err(config_err("rollout batch is empty"));
    }
    let ns = policy.n_states();
    let na = policy.n_actions();
    for seg in &batch.segments {
        if seg.is_empty() {
            return Err(config_err("empty segment"));
        }
        for st in &seg.steps {
            if st.state >= ns || st.next_state >= ns || st.action >= na {
                return Err(config_err("batch indices exceed policy dimensions"));
            }
        }
    }
    Ok((UpdateEstimate::zeros(ns, na), policy.prob_table()))
}

fn check_value(value: &ValueTable, policy: &PolicyTable) -> Result<()> {
    if value.len() != policy.n_states() {
        return Err(crate::Error::DimensionMismatch {
            what: "value table",
            expected: policy.n_states(),
            got: value.len(),
        });
    }
    Ok(())
}

fn row(probs: &[f64], na: usize, s: usize) -> &[f64] {
    &probs[s * na..(s + 1) * na]
}

/// Discounted reward-to-go `G_i` for every step, closed with `γ^{L-i} tail`.
fn returns_to_go(seg: &Segment, gamma: f64, tail: f64) -> Vec<f64> {
    let mut g = tail;
    let mut out = vec![0.0; seg.len()];
    for (i, st) in seg.steps.iter().enumerate().rev() {
        g = st.reward + gamma * g;
        out[i] = g;
    }
    out
}

/// `γ V(s') (1 - terminal) + r - V(s)`.
pub fn augmented_reward(value: &ValueTable, s: usize, r: f64, s_next: usize, gamma: f64, terminal: bool) -> f64 {
    let next = if terminal { 0.0 } else { value[s_next] };
    gamma * next + r - value[s]
}

/// Score-function estimator with sampled returns.
///
/// Truncated segments are closed with `γ^{L-i} V(S_L)` when `value` is
/// given and left as bare partial sums otherwise.
pub fn reinforce_update(
    batch: &RolloutBatch,
    policy: &PolicyTable,
    gamma: f64,
    value: Option<&ValueTable>,
) -> Result<UpdateEstimate> {
    let (mut out, probs) = prepare(batch, policy)?;
    if let Some(v) = value {
        check_value(v, policy)?;
    }
    let na = policy.n_actions();
    for seg in &batch.segments {
        let tail = match (seg.bootstrap_state(), value) {
            (Some(s), Some(v)) => v[s],
            _ => 0.0,
        };
        let g = returns_to_go(seg, gamma, tail);
        for (i, st) in seg.steps.iter().enumerate() {
            let scale = gamma.powi((seg.start_time + i) as i32);
            out.add_log_prob(st.state, row(&probs, na, st.state), st.action, scale * g[i]);
            out.count(st.state);
        }
    }
    Ok(out)
}

/// `∂H/∂θ_b = -π_b (log π_b + H)` per visited timestep, scaled by `coef`.
pub fn entropy_update(batch: &RolloutBatch, policy: &PolicyTable, coef: f64) -> Result<UpdateEstimate> {
    let (mut out, _) = prepare(batch, policy)?;
    if coef == 0.0 {
        return Ok(out);
    }
    let na = policy.n_actions();
    let grads: Vec<Vec<f64>> = (0..policy.n_states())
        .map(|s| {
            let p = policy.probs(s);
            let lp = policy.log_probs(s);
            let h: f64 = -(0..na).map(|a| p[a] * lp[a]).sum::<f64>();
            (0..na).map(|b| -p[b] * (lp[b] + h)).collect()
        })
        .collect();
    for seg in &batch.segments {
        for st in &seg.steps {
            out.add_row(st.state, &grads[st.state], coef);
        }
    }
    Ok(out)
}

/// Advantage actor-critic with the segment-length advantage
/// `Σ γ^{k-i} R_k + γ^{L-i} V(S_L) - V(S_i)` plus an entropy bonus.
pub fn a2c_update(
    batch: &RolloutBatch,
    policy: &PolicyTable,
    value: &ValueTable,
    gamma: f64,
    entropy_coef: f64,
) -> Result<UpdateEstimate> {
    let (mut out, probs) = prepare(batch, policy)?;
    check_value(value, policy)?;
    let na = policy.n_actions();
    for seg in &batch.segments {
        let tail = seg.bootstrap_state().map_or(0.0, |s| value[s]);
        let g = returns_to_go(seg, gamma, tail);
        for (i, st) in seg.steps.iter().enumerate() {
            let scale = gamma.powi((seg.start_time + i) as i32);
            let adv = g[i] - value[st.state];
            out.add_log_prob(st.state, row(&probs, na, st.state), st.action, scale * adv);
            out.count(st.state);
        }
    }
    if entropy_coef != 0.0 {
        out.grad
            .iter_mut()
            .zip(entropy_update(batch, policy, entropy_coef)?.grad)
            .for_each(|(g, e)| *g += e);
    }
    Ok(out)
}

/// Actor-critic with a sliding `n`-step advantage inside each segment. Near
/// the segment end the window shrinks to the available suffix.
pub fn n_step_a2c_update(
    batch: &RolloutBatch,
    policy: &PolicyTable,
    value: &ValueTable,
    gamma: f64,
    n: usize,
) -> Result<UpdateEstimate> {
    if n == 0 {
        return Err(config_err("n must be at least 1"));
    }
    let (mut out, probs) = prepare(batch, policy)?;
    check_value(value, policy)?;
    let na = policy.n_actions();
    for seg in &batch.segments {
        let len = seg.len();
        for (i, st) in seg.steps.iter().enumerate() {
            let m = n.min(len - i);
            let mut sum = 0.0;
            let mut disc = 1.0;
            for s in &seg.steps[i..i + m] {
                sum += disc * s.reward;
                disc *= gamma;
            }
            let end = i + m;
            if end < len || seg.truncated {
                sum += disc * value[seg.state(end)];
            }
            let scale = gamma.powi((seg.start_time + i) as i32);
            out.add_log_prob(
                st.state,
                row(&probs, na, st.state),
                st.action,
                scale * (sum - value[st.state]),
            );
            out.count(st.state);
        }
    }
    Ok(out)
}

/// Shared body of the next-state-credited rules: for each `t`,
/// `w_a = Σ_{k≥t} γ^{k-t} C(a | S_t, S_{k+1}) x_k`. Zero `x_k` are skipped.
fn next_state_credited(
    batch: &RolloutBatch,
    policy: &PolicyTable,
    credit: &CreditFunction,
    gamma: f64,
    x: impl Fn(&Segment, usize) -> f64,
) -> Result<UpdateEstimate> {
    let (mut out, probs) = prepare(batch, policy)?;
    let na = policy.n_actions();
    let mut w = vec![0.0; na];
    let mut buf = vec![0.0; na];
    for seg in &batch.segments {
        let xs: Vec<f64> = (0..seg.len()).map(|k| x(seg, k)).collect();
        for (i, st) in seg.steps.iter().enumerate() {
            let pi = row(&probs, na, st.state);
            w.iter_mut().for_each(|v| *v = 0.0);
            let mut disc = 1.0;
            for k in i..seg.len() {
                if xs[k] != 0.0 {
                    let q = CreditQuery {
                        state: st.state,
                        action: st.action,
                        future: seg.steps[k].next_state,
                        offset: k + 1 - i,
                        transition: Some((seg.steps[k].state, seg.steps[k].action)),
                    };
                    credit.weights_into(policy, pi, &q, &mut buf)?;
                    for (wa, c) in w.iter_mut().zip(&buf) {
                        *wa += disc * xs[k] * c;
                    }
                }
                disc *= gamma;
            }
            out.add_score(st.state, pi, &w, gamma.powi((seg.start_time + i) as i32));
            out.count(st.state);
        }
    }
    Ok(out)
}

/// Rewards credited through `C(a | S_t, S_{k+1})`, no reward model and no
/// bootstrap.
pub fn deep_hca_update(
    batch: &RolloutBatch,
    policy: &PolicyTable,
    credit: &CreditFunction,
    gamma: f64,
) -> Result<UpdateEstimate> {
    next_state_credited(batch, policy, credit, gamma, |seg, k| seg.steps[k].reward)
}

/// Augmented rewards `γ V(S_{k+1}) + R_k - V(S_k)` credited through
/// `C(a | S_t, S_{k+1})`.
pub fn hca_value_update(
    batch: &RolloutBatch,
    policy: &PolicyTable,
    value: &ValueTable,
    credit: &CreditFunction,
    gamma: f64,
) -> Result<UpdateEstimate> {
    check_value(value, policy)?;
    next_state_credited(batch, policy, credit, gamma, |seg, k| {
        let st = &seg.steps[k];
        augmented_reward(value, st.state, st.reward, st.next_state, gamma, st.terminal)
    })
}

/// State-credited update with a reward model for the immediate term:
/// `w_a = π(a|S_t) r̂(S_t, a) + Σ_{k>t} γ^{k-t} C(a | S_t, S_k) R_k
/// + γ^{L-t} C(a | S_t, S_L) V(S_L)`, the last term only on truncated
/// segments.
pub fn hca_update(
    batch: &RolloutBatch,
    policy: &PolicyTable,
    credit: &CreditFunction,
    reward_model: &RewardModel,
    value: &ValueTable,
    gamma: f64,
) -> Result<UpdateEstimate> {
    let (mut out, probs) = prepare(batch, policy)?;
    check_value(value, policy)?;
    reward_model.check_policy(policy)?;
    let na = policy.n_actions();
    let mut w = vec![0.0; na];
    let mut buf = vec![0.0; na];
    for seg in &batch.segments {
        let len = seg.len();
        for (i, st) in seg.steps.iter().enumerate() {
            let pi = row(&probs, na, st.state);
            for (a, wa) in w.iter_mut().enumerate() {
                *wa = pi[a] * reward_model.get(st.state, a);
            }
            let mut add = |future: usize, offset: usize, amount: f64, w: &mut [f64]| -> Result<()> {
                if amount == 0.0 {
                    return Ok(());
                }
                let q = CreditQuery {
                    state: st.state,
                    action: st.action,
                    future,
                    offset,
                    transition: None,
                };
                credit.weights_into(policy, pi, &q, &mut buf)?;
                for (wa, c) in w.iter_mut().zip(&buf) {
                    *wa += amount * c;
                }
                Ok(())
            };
            let mut disc = gamma;
            for k in i + 1..len {
                add(seg.steps[k].state, k - i, disc * seg.steps[k].reward, &mut w)?;
                disc *= gamma;
            }
            if let Some(boot) = seg.bootstrap_state() {
                add(boot, len - i, disc * value[boot], &mut w)?;
            }
            out.add_score(st.state, pi, &w, gamma.powi((seg.start_time + i) as i32));
            out.count(st.state);
        }
    }
    Ok(out)
}
