use std::ops::{Index, IndexMut};

use rand::Rng;

use crate::error::{Error, Result};

use super::{sample_categorical, TabularMdp};

/// Numerically stable softmax of `logits` written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Softmax policy `π_θ(a|s) ∝ exp θ[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl PolicyTable {
    /// Zero logits, i.e. the uniform policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicyTable {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        Self::uniform(mdp.n_states(), mdp.n_actions())
    }

    pub fn from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                what: "policy logits",
                expected: n_states * n_actions,
                got: logits.len(),
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("policy logits must be finite".into()));
        }
        Ok(PolicyTable {
            n_states,
            n_actions,
            logits,
        })
    }

    /// Policy that puts `1 - ε`-ish mass on one action per state: logit
    /// `strength` on the chosen action, zero elsewhere.
    pub fn greedy(n_actions: usize, actions: &[usize], strength: f64) -> Self {
        let mut p = Self::uniform(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            p.logits[s * n_actions + a] = strength;
        }
        p
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.logits[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        let na = self.n_actions;
        &mut self.logits[s * na..(s + 1) * na]
    }

    pub fn probs_into(&self, s: usize, out: &mut [f64]) {
        softmax_into(self.row(s), out);
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        self.probs_into(s, &mut out);
        out
    }

    /// Flat `π[s][a]` for every state.
    pub fn prob_table(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.logits.len()];
        for s in 0..self.n_states {
            let na = self.n_actions;
            softmax_into(self.row(s), &mut out[s * na..(s + 1) * na]);
        }
        out
    }

    pub fn log_probs(&self, s: usize) -> Vec<f64> {
        let row = self.row(s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row.iter().map(|l| l - lse).collect()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs(s)[a]
    }

    /// Shannon entropy of `π(·|s)` in nats.
    pub fn entropy(&self, s: usize) -> f64 {
        self.probs(s)
            .iter()
            .zip(self.log_probs(s))
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| -p * lp)
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(&self.probs(s), rng)
    }

    pub fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: mdp.n_states(),
                got: self.n_states,
            });
        }
        if self.n_actions != mdp.n_actions() {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: mdp.n_actions(),
                got: self.n_actions,
            });
        }
        Ok(())
    }
}

/// State values `V[s]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValueTable(pub Vec<f64>);

impl ValueTable {
    pub fn zeros(n_states: usize) -> Self {
        ValueTable(vec![0.0; n_states])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for ValueTable {
    type Output = f64;
    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

impl IndexMut<usize> for ValueTable {
    fn index_mut(&mut self, s: usize) -> &mut f64 {
        &mut self.0[s]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_entropy_is_log_actions() {
        let p = PolicyTable::uniform(1, 4);
        assert!((p.entropy(0) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn near_deterministic_entropy_is_small() {
        let p = PolicyTable::greedy(4, &[2], 12.0);
        assert!(p.entropy(0) < 0.05);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = PolicyTable::from_logits(1, 3, vec![1000.0, 0.0, -1000.0]).unwrap();
        let pr = p.probs(0);
        assert!((pr[0] - 1.0).abs() < 1e-15);
        assert!(pr.iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn rows_are_positive_distributions(logits in prop::collection::vec(-30.0f64..30.0, 5)) {
            let p = PolicyTable::from_logits(1, 5, logits).unwrap();
            let pr = p.probs(0);
            prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pr.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn shift_invariance(logits in prop::collection::vec(-5.0f64..5.0, 4), c in -50.0f64..50.0) {
            let a = PolicyTable::from_logits(1, 4, logits.clone()).unwrap();
            let b = PolicyTable::from_logits(1, 4, logits.iter().map(|l| l + c).collect()).unwrap();
            for (x, y) in a.probs(0).iter().zip(b.probs(0)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn score_function_has_zero_mean(logits in prop::collection::vec(-6.0f64..6.0, 4)) {
            // Σ_a π(a) ∂log π(a)/∂θ_b = Σ_a π(a)(1[a=b] - π(b)) = 0
            let p = PolicyTable::from_logits(1, 4, logits).unwrap();
            let pr = p.probs(0);
            for b in 0..4 {
                let m: f64 = (0..4)
                    .map(|a| pr[a] * (if a == b { 1.0 } else { 0.0 } - pr[b]))
                    .sum();
                prop_assert!(m.abs() < 1e-12);
            }
        }
    }
}
