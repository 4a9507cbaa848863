use crate::error::{config_err, Error, Result};
use crate::mdp::{dp::policy_kernel, PolicyTable, TabularMdp};

/// Exact offset-indexed hindsight `h_Δ(a | s, s') = P(A_t = a | S_t = s, S_{t+Δ} = s')`
/// under a fixed policy, for `Δ = 1..=delta_max`.
///
/// Built from the action-conditioned reach tables `P_Δ(s' | s, a)` by Bayes'
/// rule. Mass entering a terminal state is counted at that step and then
/// dropped, matching episodes that end on entry. Pairs with zero reach are
/// undefined and queries on them fail.
#[derive(Debug, Clone)]
pub struct ExactHindsight {
    n_states: usize,
    n_actions: usize,
    delta_max: usize,
    probs: Vec<f64>,
    /// `[(Δ-1)][s][a][s']`
    cond_reach: Vec<f64>,
    /// `[(Δ-1)][s][s']`
    reach: Vec<f64>,
}

pub fn exact_hindsight(mdp: &TabularMdp, policy: &PolicyTable, delta_max: usize) -> Result<ExactHindsight> {
    if delta_max == 0 {
        return Err(config_err("delta_max must be at least 1"));
    }
    policy.check_mdp(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let probs = policy.prob_table();
    let (kernel, _) = policy_kernel(mdp, &probs);
    let block = ns * na * ns;
    let mut cond_reach = vec![0.0; delta_max * block];
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..na {
            let i = (s * na + a) * ns;
            cond_reach[i..i + ns].copy_from_slice(mdp.transition_row(s, a));
        }
    }
    for d in 1..delta_max {
        let (prev, next) = cond_reach[(d - 1) * block..(d + 1) * block].split_at_mut(block);
        for (src, dst) in prev.chunks(ns).zip(next.chunks_mut(ns)) {
            for (x, &px) in src.iter().enumerate() {
                if px == 0.0 {
                    continue;
                }
                for (o, &k) in dst.iter_mut().zip(&kernel[x * ns..(x + 1) * ns]) {
                    *o += px * k;
                }
            }
        }
    }
    let mut reach = vec![0.0; delta_max * ns * ns];
    for d in 0..delta_max {
        for s in 0..ns {
            for a in 0..na {
                let pa = probs[s * na + a];
                let i = d * block + (s * na + a) * ns;
                for (r, c) in reach[(d * ns + s) * ns..(d * ns + s + 1) * ns]
                    .iter_mut()
                    .zip(&cond_reach[i..i + ns])
                {
                    *r += pa * c;
                }
            }
        }
    }
    Ok(ExactHindsight {
        n_states: ns,
        n_actions: na,
        delta_max,
        probs,
        cond_reach,
        reach,
    })
}

impl ExactHindsight {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn delta_max(&self) -> usize {
        self.delta_max
    }

    pub(crate) fn policy_probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    fn check(&self, delta: usize, s: usize, future: usize) -> Result<()> {
        if delta == 0 || delta > self.delta_max {
            return Err(Error::IndexOutOfBounds {
                index: delta,
                len: self.delta_max + 1,
            });
        }
        for x in [s, future] {
            if x >= self.n_states {
                return Err(Error::IndexOutOfBounds {
                    index: x,
                    len: self.n_states,
                });
            }
        }
        Ok(())
    }

    /// `P(S_{t+Δ} = future | S_t = s)`; zero outside the table.
    pub fn reach(&self, delta: usize, s: usize, future: usize) -> f64 {
        if self.check(delta, s, future).is_err() {
            return 0.0;
        }
        self.reach[((delta - 1) * self.n_states + s) * self.n_states + future]
    }

    /// `P(S_{t+Δ} = future | S_t = s, A_t = a)`; zero outside the table.
    pub fn cond_reach(&self, delta: usize, s: usize, a: usize, future: usize) -> f64 {
        if self.check(delta, s, future).is_err() || a >= self.n_actions {
            return 0.0;
        }
        let (ns, na) = (self.n_states, self.n_actions);
        self.cond_reach[(delta - 1) * ns * na * ns + (s * na + a) * ns + future]
    }

    pub fn is_defined(&self, delta: usize, s: usize, future: usize) -> bool {
        self.reach(delta, s, future) > 0.0
    }

    /// Writes `h_Δ(· | s, future)` into `out`.
    pub fn row_into(&self, delta: usize, s: usize, future: usize, out: &mut [f64]) -> Result<()> {
        self.check(delta, s, future)?;
        let reach = self.reach(delta, s, future);
        if reach <= 0.0 {
            return Err(Error::UnreachablePair {
                state: s,
                future,
                offset: delta,
            });
        }
        let pi = self.policy_probs(s);
        let mut z = 0.0;
        for (a, o) in out.iter_mut().enumerate().take(self.n_actions) {
            *o = pi[a] * self.cond_reach(delta, s, a, future);
            z += *o;
        }
        // Normalize by the summed numerators rather than `reach` so rows sum
        // to one to rounding.
        out.iter_mut().take(self.n_actions).for_each(|o| *o /= z);
        Ok(())
    }

    pub fn row(&self, delta: usize, s: usize, future: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_actions];
        self.row_into(delta, s, future, &mut out)?;
        Ok(out)
    }

    pub fn prob(&self, delta: usize, s: usize, future: usize, a: usize) -> Result<f64> {
        Ok(self.row(delta, s, future)?[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain3, frozenlake_4x4, random_mdp, two_arm, RandomMdpConfig};
    use crate::mdp::RewardKind;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn varied_policy(mdp: &TabularMdp, seed: u64) -> PolicyTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..mdp.n_states() * mdp.n_actions())
            .map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0))
            .collect();
        PolicyTable::from_logits(mdp.n_states(), mdp.n_actions(), logits).unwrap()
    }

    #[test]
    fn two_arm_rewarded_terminal_reveals_action() {
        let mdp = two_arm();
        let h = exact_hindsight(&mdp, &PolicyTable::for_mdp(&mdp), 3).unwrap();
        assert_eq!(h.row(1, 0, 2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(h.row(1, 0, 1).unwrap(), vec![1.0, 0.0]);
        // terminal states absorb: nothing is reached at offset 2
        assert!(matches!(
            h.row(2, 0, 2),
            Err(Error::UnreachablePair {
                state: 0,
                future: 2,
                offset: 2
            })
        ));
    }

    #[test]
    fn chain3_hindsight_is_policy() {
        let mdp = chain3(0.9);
        let pi = varied_policy(&mdp, 1);
        let h = exact_hindsight(&mdp, &pi, 4).unwrap();
        let mut defined = 0;
        for d in 1..=4 {
            for s in 0..3 {
                for y in 0..3 {
                    if let Ok(row) = h.row(d, s, y) {
                        defined += 1;
                        for (r, p) in row.iter().zip(pi.probs(s)) {
                            assert!((r - p).abs() < 1e-15);
                        }
                    }
                }
            }
        }
        assert_eq!(defined, 3);
    }

    #[test]
    fn frozenlake_bayes_consistency() {
        let mdp = frozenlake_4x4(true, 0.0, 0.99);
        let pi = varied_policy(&mdp, 2);
        let h = exact_hindsight(&mdp, &pi, 40).unwrap();
        for d in 1..=40 {
            for s in 0..16 {
                let p = pi.probs(s);
                for y in 0..16 {
                    let reach = h.reach(d, s, y);
                    if reach == 0.0 {
                        continue;
                    }
                    let row = h.row(d, s, y).unwrap();
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                    for a in 0..4 {
                        let lhs = row[a] * reach;
                        let rhs = h.cond_reach(d, s, a, y) * p[a];
                        assert!((lhs - rhs).abs() < 1e-10, "d={d} s={s} y={y} a={a}");
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_queries() {
        let mdp = two_arm();
        assert!(exact_hindsight(&mdp, &PolicyTable::for_mdp(&mdp), 0).is_err());
        let h = exact_hindsight(&mdp, &PolicyTable::for_mdp(&mdp), 2).unwrap();
        assert!(matches!(h.row(3, 0, 2), Err(Error::IndexOutOfBounds { .. })));
        assert!(matches!(h.row(1, 0, 9), Err(Error::IndexOutOfBounds { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bayes_ratio_on_random_mdps(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = RandomMdpConfig { n_states: 8, n_actions: 3, gamma: 0.9, reward_kind: RewardKind::FullTransition, n_terminal: 2 };
            let mdp = random_mdp(&cfg, &mut rng).unwrap();
            let pi = varied_policy(&mdp, seed);
            let h = exact_hindsight(&mdp, &pi, 6).unwrap();
            for d in 1..=6 {
                for s in 0..8 {
                    let p = pi.probs(s);
                    for y in 0..8 {
                        if let Ok(row) = h.row(d, s, y) {
                            let reach = h.reach(d, s, y);
                            for a in 0..3 {
                                let ratio = row[a] / p[a];
                                let expect = h.cond_reach(d, s, a, y) / reach;
                                prop_assert!((ratio - expect).abs() < 1e-9);
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn irrelevant_actions_give_policy(seed in 0u64..10_000) {
            // Copy action 0's dynamics to every action.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = RandomMdpConfig { n_states: 6, n_actions: 3, gamma: 0.9, reward_kind: RewardKind::NextStateOnly, n_terminal: 1 };
            let base = random_mdp(&cfg, &mut rng).unwrap();
            let mut b = TabularMdp::builder(6, 3).gamma(0.9).initial_dist(base.initial_dist().to_vec());
            for s in 0..6 {
                if base.is_terminal(s) { b.set_terminal(s); }
                for a in 0..3 {
                    for y in 0..6 { b.set_transition(s, a, y, base.p(s, 0, y)); }
                }
            }
            let mdp = b.build().unwrap();
            let pi = varied_policy(&mdp, seed + 1);
            let h = exact_hindsight(&mdp, &pi, 5).unwrap();
            for d in 1..=5 {
                for s in 0..6 {
                    for y in 0..6 {
                        if let Ok(row) = h.row(d, s, y) {
                            for (r, p) in row.iter().zip(pi.probs(s)) {
                                prop_assert!((r - p).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }
}
