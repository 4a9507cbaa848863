use crate::error::{config_err, Error, Result};
use crate::mdp::{PolicyTable, TabularMdp};

use super::{exact_hindsight, ExactHindsight};

/// Exact `P(A_t = a | S_t, S_k, A_k, S_{k+1})` for offsets `Δ = k - t` in
/// `0..=delta_max`.
///
/// Computed per query by Bayes' rule over the joint
/// `π(a | s_t) · P(S_k, A_k, S_{k+1} | s_t, a)`, with the reach tables of
/// an [`ExactHindsight`] supplying the `S_t → S_k` leg.
#[derive(Debug, Clone)]
pub struct TransitionHindsight {
    mdp: TabularMdp,
    reach: Option<ExactHindsight>,
    probs: Vec<f64>,
    delta_max: usize,
}

pub fn exact_transition_hindsight(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    delta_max: usize,
) -> Result<TransitionHindsight> {
    policy.check_mdp(mdp)?;
    let reach = if delta_max > 0 {
        Some(exact_hindsight(mdp, policy, delta_max)?)
    } else {
        None
    };
    Ok(TransitionHindsight {
        mdp: mdp.clone(),
        reach,
        probs: policy.prob_table(),
        delta_max,
    })
}

impl TransitionHindsight {
    pub fn delta_max(&self) -> usize {
        self.delta_max
    }

    pub fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    /// `P(S_{t+Δ} = x | S_t = s)`, with `Δ = 0` the point mass on `s`.
    pub fn reach(&self, delta: usize, s: usize, x: usize) -> f64 {
        match (delta, &self.reach) {
            (0, _) => f64::from(u8::from(s == x)),
            (d, Some(h)) if d <= self.delta_max => h.reach(d, s, x),
            _ => 0.0,
        }
    }

    /// Writes `h(· | s_t, s_k, a_k, s_next)` at offset `delta = k - t` into `out`.
    pub fn row_into(
        &self,
        delta: usize,
        s_t: usize,
        s_k: usize,
        a_k: usize,
        s_next: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        if delta > self.delta_max {
            return Err(Error::IndexOutOfBounds {
                index: delta,
                len: self.delta_max + 1,
            });
        }
        for x in [s_t, s_k, s_next] {
            if x >= ns {
                return Err(Error::IndexOutOfBounds { index: x, len: ns });
            }
        }
        if a_k >= na {
            return Err(Error::IndexOutOfBounds { index: a_k, len: na });
        }
        if out.len() < na {
            return Err(config_err("output buffer shorter than the action set"));
        }
        let mut z = 0.0;
        for (a, o) in out.iter_mut().enumerate().take(na) {
            let pi_a = self.probs[s_t * na + a];
            *o = if self.mdp.is_terminal(s_k) {
                0.0
            } else if delta == 0 {
                // A_k is A_t itself.
                if s_k == s_t && a == a_k {
                    pi_a * self.mdp.p(s_t, a, s_next)
                } else {
                    0.0
                }
            } else {
                let lead = self.reach.as_ref().map_or(0.0, |r| r.cond_reach(delta, s_t, a, s_k));
                pi_a * lead * self.probs[s_k * na + a_k] * self.mdp.p(s_k, a_k, s_next)
            };
            z += *o;
        }
        if !(z > 0.0) {
            return Err(Error::UnreachablePair {
                state: s_t,
                future: s_next,
                offset: delta,
            });
        }
        out.iter_mut().take(na).for_each(|o| *o /= z);
        Ok(())
    }

    pub fn row(&self, delta: usize, s_t: usize, s_k: usize, a_k: usize, s_next: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.mdp.n_actions()];
        self.row_into(delta, s_t, s_k, a_k, s_next, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain3, frozenlake_4x4, two_arm};

    #[test]
    fn zero_offset_is_indicator_on_own_action() {
        let mdp = frozenlake_4x4(true, 0.0, 0.99);
        let pi = PolicyTable::from_logits(16, 4, (0..64).map(|i| (i % 7) as f64 * 0.2).collect()).unwrap();
        let th = exact_transition_hindsight(&mdp, &pi, 3).unwrap();
        for a in 0..4 {
            let next = (0..16).find(|&y| mdp.p(6, a, y) > 0.0).unwrap();
            let row = th.row(0, 6, 6, a, next).unwrap();
            for b in 0..4 {
                assert_eq!(row[b], if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn two_arm_rewarded_transition() {
        let mdp = two_arm();
        let th = exact_transition_hindsight(&mdp, &PolicyTable::for_mdp(&mdp), 0).unwrap();
        assert_eq!(th.row(0, 0, 0, 1, 2).unwrap(), vec![0.0, 1.0]);
        // action 0 never reaches state 2
        assert!(matches!(th.row(0, 0, 0, 0, 2), Err(Error::UnreachablePair { .. })));
    }

    #[test]
    fn chain3_positive_offsets_give_policy() {
        let mdp = chain3(0.9);
        let pi = PolicyTable::from_logits(3, 2, vec![0.7, -0.2, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let th = exact_transition_hindsight(&mdp, &pi, 3).unwrap();
        let row = th.row(1, 0, 1, 1, 2).unwrap();
        for (r, p) in row.iter().zip(pi.probs(0)) {
            assert!((r - p).abs() < 1e-15);
        }
        assert!(th.row(2, 0, 1, 0, 2).is_err());
    }
}
