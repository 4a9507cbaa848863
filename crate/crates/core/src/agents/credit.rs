use crate::error::{config_err, Error, Result};
use crate::hindsight::{clip_credit_into, CreditModel, ExactHindsight, TransitionHindsight};
use crate::mdp::PolicyTable;

/// Per-action weights `C(a | S_t, future)` applied to a reward inside an
/// update rule.
#[derive(Debug, Clone, Copy)]
pub enum CreditFunction<'a> {
    /// Learned hindsight model, optionally clipped at `λ π(a | s)`.
    Learned { model: &'a CreditModel, clip: Option<f64> },
    /// Exact offset-indexed hindsight on the conditioning state.
    Exact(&'a ExactHindsight),
    /// Exact hindsight conditioned on the rewarded transition
    /// `(S_k, A_k, S_{k+1})` instead of a single state.
    ExactTransition(&'a TransitionHindsight),
    /// `[A_t = a]`.
    Indicator,
    /// `[A_t = a]` for offsets up to `N`, the policy beyond.
    NStepIndicator(usize),
    /// A fixed `c[s][a]` that ignores the future.
    FutureIndependent(&'a [f64]),
}

/// One credit lookup.
///
/// `future` is the conditioning state and `offset` its distance in steps
/// from `S_t`. When the future is the state after a transition, that
/// transition's `(S_k, A_k)` goes in `transition`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CreditQuery {
    pub state: usize,
    pub action: usize,
    pub future: usize,
    pub offset: usize,
    pub transition: Option<(usize, usize)>,
}

impl CreditFunction<'_> {
    /// Writes the weights into `out`. `pi` is `π(· | query.state)`.
    pub fn weights_into(&self, policy: &PolicyTable, pi: &[f64], q: &CreditQuery, out: &mut [f64]) -> Result<()> {
        let na = pi.len();
        let indicator = |out: &mut [f64]| {
            for (a, o) in out.iter_mut().enumerate().take(na) {
                *o = if a == q.action { 1.0 } else { 0.0 };
            }
        };
        match *self {
            CreditFunction::Learned { model, clip } => {
                model.prob_into(policy, q.state, q.future, out);
                if let Some(lambda) = clip {
                    clip_credit_into(&mut out[..na], pi, lambda);
                }
            }
            CreditFunction::Exact(h) => h.row_into(q.offset, q.state, q.future, out)?,
            CreditFunction::ExactTransition(h) => {
                let (s_k, a_k) = q
                    .transition
                    .ok_or_else(|| config_err("transition credit needs the rewarded transition"))?;
                if q.offset == 0 {
                    return Err(Error::IndexOutOfBounds { index: 0, len: 0 });
                }
                h.row_into(q.offset - 1, q.state, s_k, a_k, q.future, out)?;
            }
            CreditFunction::Indicator => indicator(out),
            CreditFunction::NStepIndicator(n) => {
                if q.offset <= n {
                    indicator(out)
                } else {
                    out[..na].copy_from_slice(pi);
                }
            }
            CreditFunction::FutureIndependent(c) => {
                let row = c.get(q.state * na..(q.state + 1) * na).ok_or(Error::IndexOutOfBounds {
                    index: q.state,
                    len: c.len() / na.max(1),
                })?;
                out[..na].copy_from_slice(row);
            }
        }
        Ok(())
    }

    pub fn weights(&self, policy: &PolicyTable, q: &CreditQuery) -> Result<Vec<f64>> {
        let pi = policy.probs(q.state);
        let mut out = vec![0.0; pi.len()];
        self.weights_into(policy, &pi, q, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(offset: usize) -> CreditQuery {
        CreditQuery {
            state: 0,
            action: 2,
            future: 1,
            offset,
            transition: None,
        }
    }

    #[test]
    fn indicator_variants() {
        let pi = PolicyTable::from_logits(2, 3, vec![0.1, 0.2, 0.3, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            CreditFunction::Indicator.weights(&pi, &q(7)).unwrap(),
            vec![0.0, 0.0, 1.0]
        );
        let n = CreditFunction::NStepIndicator(3);
        assert_eq!(n.weights(&pi, &q(3)).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(n.weights(&pi, &q(4)).unwrap(), pi.probs(0));
    }

    #[test]
    fn clipped_learned_credit_never_exceeds_unclipped() {
        let pi = PolicyTable::from_logits(2, 3, vec![2.0, -1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut m = CreditModel::new(2, 3);
        m.residual_row_mut(0, 1).copy_from_slice(&[-3.0, 4.0, 1.0]);
        let raw = CreditFunction::Learned { model: &m, clip: None }
            .weights(&pi, &q(1))
            .unwrap();
        let clipped = CreditFunction::Learned {
            model: &m,
            clip: Some(3.0),
        }
        .weights(&pi, &q(1))
        .unwrap();
        let p = pi.probs(0);
        for a in 0..3 {
            assert!(clipped[a] <= raw[a]);
            assert!(clipped[a] <= 3.0 * p[a]);
        }
        assert!(clipped.iter().sum::<f64>() < 1.0);
    }

    #[test]
    fn transition_credit_requires_transition() {
        let mdp = crate::envs::two_arm();
        let pi = PolicyTable::for_mdp(&mdp);
        let th = crate::hindsight::exact_transition_hindsight(&mdp, &pi, 1).unwrap();
        assert!(CreditFunction::ExactTransition(&th).weights(&pi, &q(1)).is_err());
    }
}
