//! Measurements taken from trained models and rollouts: NLL gap against the
//! policy per time offset, policy entropy, and equality checks between
//! update rules.

use std::io::Write;

use serde::Serialize;

use crate::agents::RolloutBatch;
use crate::error::{config_err, Error, Result};
use crate::hindsight::CreditModel;
use crate::mdp::{PolicyTable, UpdateEstimate};

/// Mean `-log h(A_t | S_t, S_{t+Δ}) + log π(A_t | S_t)` per offset `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGapCurve {
    /// Entry `Δ - 1`; `None` when no pair had that offset.
    pub gap: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

impl NllGapCurve {
    pub fn delta_max(&self) -> usize {
        self.gap.len()
    }

    pub fn at(&self, delta: usize) -> Option<f64> {
        delta.checked_sub(1).and_then(|i| self.gap.get(i).copied().flatten())
    }
}

/// [`nll_gap_filtered`] over every start state.
pub fn nll_gap(
    credit: &CreditModel,
    policy: &PolicyTable,
    rollouts: &RolloutBatch,
    delta_max: usize,
) -> Result<NllGapCurve> {
    nll_gap_filtered(credit, policy, rollouts, delta_max, |_| true)
}

/// NLL gap over pairs `(S_t, A_t, S_{t+Δ})` inside each segment, keeping
/// only start states accepted by `keep`. Negative values mean the credit
/// model predicts the sampled action better than the policy.
pub fn nll_gap_filtered(
    credit: &CreditModel,
    policy: &PolicyTable,
    rollouts: &RolloutBatch,
    delta_max: usize,
    keep: impl Fn(usize) -> bool,
) -> Result<NllGapCurve> {
    if delta_max == 0 {
        return Err(config_err("delta_max must be at least 1"));
    }
    credit.check_policy(policy)?;
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let mut sum = vec![0.0; delta_max];
    let mut count = vec![0usize; delta_max];
    let mut h = vec![0.0; na];
    for seg in &rollouts.segments {
        for (t, st) in seg.steps.iter().enumerate() {
            if st.state >= ns || st.action >= na {
                return Err(Error::IndexOutOfBounds {
                    index: st.state,
                    len: ns,
                });
            }
            if !keep(st.state) {
                continue;
            }
            let log_pi = policy.probs(st.state)[st.action].ln();
            for delta in 1..=delta_max.min(seg.len() - t) {
                credit.prob_into(policy, st.state, seg.state(t + delta), &mut h);
                sum[delta - 1] += -h[st.action].ln() + log_pi;
                count[delta - 1] += 1;
            }
        }
    }
    let gap = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    Ok(NllGapCurve { gap, count })
}

/// Mean policy entropy in nats over `visited` (repeats count again).
pub fn entropy_trace(policy: &PolicyTable, visited: &[usize]) -> Result<f64> {
    if visited.is_empty() {
        return Err(config_err("no visited states"));
    }
    let mut total = 0.0;
    for &s in visited {
        if s >= policy.n_states() {
            return Err(Error::IndexOutOfBounds {
                index: s,
                len: policy.n_states(),
            });
        }
        total += policy.entropy(s);
    }
    Ok(total / visited.len() as f64)
}

/// Entropy per training step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntropyTrace {
    pub steps: Vec<usize>,
    pub entropy: Vec<f64>,
}

impl EntropyTrace {
    pub fn push(&mut self, step: usize, entropy: f64) {
        self.steps.push(step);
        self.entropy.push(entropy);
    }

    pub fn last(&self) -> Option<f64> {
        self.entropy.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub pair: String,
    pub max_abs_diff: f64,
    pub pass: bool,
}

/// Runs both rules on every batch and reports the largest componentwise
/// difference of their outputs.
pub fn check_identity<A, B>(
    pair: &str,
    rule_a: A,
    rule_b: B,
    batches: &[RolloutBatch],
    tol: f64,
) -> Result<IdentityReport>
where
    A: Fn(&RolloutBatch) -> Result<UpdateEstimate>,
    B: Fn(&RolloutBatch) -> Result<UpdateEstimate>,
{
    if batches.is_empty() {
        return Err(config_err("no batches to compare"));
    }
    let mut worst = 0.0f64;
    for b in batches {
        let d = rule_a(b)?.max_abs_diff(&rule_b(b)?)?;
        worst = if d.is_nan() { f64::NAN } else { worst.max(d) };
    }
    Ok(IdentityReport {
        pair: pair.to_string(),
        max_abs_diff: worst,
        pass: worst <= tol,
    })
}

#[derive(Serialize)]
struct GapRow {
    step: usize,
    delta: usize,
    gap: f64,
    count: usize,
}

/// Long-format `step,delta,gap,count`; absent offsets are skipped.
pub fn write_nll_gap_csv<W: Write>(out: W, curves: &[(usize, NllGapCurve)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (step, curve) in curves {
        for (i, (g, &n)) in curve.gap.iter().zip(&curve.count).enumerate() {
            if let Some(gap) = *g {
                w.serialize(GapRow {
                    step: *step,
                    delta: i + 1,
                    gap,
                    count: n,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_entropy_csv<W: Write>(out: W, trace: &EntropyTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "entropy"])?;
    for (s, e) in trace.steps.iter().zip(&trace.entropy) {
        w.write_record([s.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_identity_csv<W: Write>(out: W, reports: &[IdentityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
