//! Expected updates of the credited rules computed by enumeration rather
//! than sampling.

use crate::error::Result;
use crate::hindsight::{ExactHindsight, TransitionHindsight};
use crate::mdp::{discounted_visitation, PolicyTable, TabularMdp, UpdateEstimate};

fn finish(mdp: &TabularMdp, policy: &PolicyTable, horizon: usize, w: &[f64]) -> UpdateEstimate {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let d = discounted_visitation(mdp, policy, horizon);
    let mut out = UpdateEstimate::zeros(ns, na);
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        let p = policy.probs(s);
        out.add_score(s, &p, &w[s * na..(s + 1) * na], d[s]);
    }
    out.weight = d;
    out
}

/// Expected [`deep_hca_update`](super::deep_hca_update) under exact
/// state-conditioned credit, with the visitation summed over `horizon` steps
/// and offsets up to `hindsight.delta_max()`.
///
/// With `W(s,a) = Σ_{Δ≥1} γ^{Δ-1} Σ_y ρ_Δ(s,y) h_Δ(a | s, y)` and
/// `ρ_Δ(s,y)` the expected reward earned on entering `y` at offset `Δ`, the
/// result is `d(s) (W(s,b) - π(b|s) Σ_a W(s,a))`.
pub fn enumerated_state_credit_gradient(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    hindsight: &ExactHindsight,
    horizon: usize,
) -> Result<UpdateEstimate> {
    policy.check_mdp(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let probs = policy.prob_table();
    // rbar[x][y] = Σ_c π(c|x) P(y|x,c) r(x,c,y)
    let mut rbar = vec![0.0; ns * ns];
    for x in (0..ns).filter(|&x| !mdp.is_terminal(x)) {
        for c in 0..na {
            for y in 0..ns {
                rbar[x * ns + y] += probs[x * na + c] * mdp.p(x, c, y) * mdp.r(x, c, y);
            }
        }
    }
    let gamma = mdp.gamma();
    let mut w = vec![0.0; ns * na];
    let mut h = vec![0.0; na];
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        let mut disc = 1.0;
        for delta in 1..=hindsight.delta_max() {
            for y in 0..ns {
                let rho: f64 = (0..ns)
                    .map(|x| {
                        let reach = if delta == 1 {
                            f64::from(u8::from(x == s))
                        } else {
                            hindsight.reach(delta - 1, s, x)
                        };
                        reach * rbar[x * ns + y]
                    })
                    .sum();
                if rho == 0.0 {
                    continue;
                }
                hindsight.row_into(delta, s, y, &mut h)?;
                for a in 0..na {
                    w[s * na + a] += disc * rho * h[a];
                }
            }
            disc *= gamma;
        }
    }
    Ok(finish(mdp, policy, horizon, &w))
}

/// Expected [`hca_value_update`](super::hca_value_update)-style update under
/// exact transition-conditioned credit, for the rewards of `mdp`:
/// `W(s,a) = Σ_{Δ≥0} γ^Δ Σ_{x,c,y} P_Δ(x|s) π(c|x) P(y|x,c) r(x,c,y)
/// h_Δ(a | s, x, c, y)`.
pub fn enumerated_transition_credit_gradient(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    hindsight: &TransitionHindsight,
    horizon: usize,
) -> Result<UpdateEstimate> {
    policy.check_mdp(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let probs = policy.prob_table();
    let gamma = mdp.gamma();
    let mut w = vec![0.0; ns * na];
    let mut h = vec![0.0; na];
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        let mut disc = 1.0;
        for delta in 0..=hindsight.delta_max() {
            for x in (0..ns).filter(|&x| !mdp.is_terminal(x)) {
                let reach = hindsight.reach(delta, s, x);
                if reach == 0.0 {
                    continue;
                }
                for c in 0..na {
                    for y in 0..ns {
                        let mass = reach * probs[x * na + c] * mdp.p(x, c, y) * mdp.r(x, c, y);
                        if mass == 0.0 {
                            continue;
                        }
                        hindsight.row_into(delta, s, x, c, y, &mut h)?;
                        for a in 0..na {
                            w[s * na + a] += disc * mass * h[a];
                        }
                    }
                }
            }
            disc *= gamma;
        }
    }
    Ok(finish(mdp, policy, horizon, &w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain3, delayed_penalty, frozenlake_4x4, random_mdp, two_arm, RandomMdpConfig};
    use crate::hindsight::{exact_hindsight, exact_transition_hindsight};
    use crate::mdp::{default_horizon, evaluate_policy, exact_policy_gradient, shape_rewards, RewardKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(ns: usize, na: usize, rng: &mut ChaCha8Rng) -> PolicyTable {
        PolicyTable::from_logits(ns, na, (0..ns * na).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    fn check_state(mdp: &TabularMdp, pi: &PolicyTable, tol: f64) {
        let hz = default_horizon(mdp, pi);
        let h = exact_hindsight(mdp, pi, hz).unwrap();
        let g = enumerated_state_credit_gradient(mdp, pi, &h, hz).unwrap();
        let e = exact_policy_gradient(mdp, pi, hz).unwrap();
        let diff = g.max_abs_diff(&e).unwrap();
        assert!(diff < tol, "diff {diff}");
    }

    #[test]
    fn state_credit_matches_gradient_on_small_mdps() {
        let m = two_arm();
        check_state(&m, &PolicyTable::for_mdp(&m), 1e-12);
        let m = chain3(0.9);
        check_state(
            &m,
            &PolicyTable::from_logits(3, 2, vec![0.4, -0.2, 0.0, 1.0, 0.0, 0.0]).unwrap(),
            1e-10,
        );
        let m = delayed_penalty(3, -1.0, 0.95).unwrap();
        check_state(&m, &PolicyTable::for_mdp(&m), 1e-10);
    }

    #[test]
    fn state_credit_matches_gradient_on_frozenlake() {
        let m = frozenlake_4x4(true, 0.0, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check_state(&m, &random_policy(16, 4, &mut rng), 1e-9);
    }

    #[test]
    fn transition_credit_matches_gradient_on_random_mdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let cfg = RandomMdpConfig {
                n_states: 6,
                n_actions: 3,
                gamma: 0.8,
                reward_kind: RewardKind::FullTransition,
                n_terminal: 1,
            };
            let mdp = random_mdp(&cfg, &mut rng).unwrap();
            let pi = random_policy(6, 3, &mut rng);
            let hz = default_horizon(&mdp, &pi);
            let th = exact_transition_hindsight(&mdp, &pi, hz).unwrap();
            let g = enumerated_transition_credit_gradient(&mdp, &pi, &th, hz).unwrap();
            let e = exact_policy_gradient(&mdp, &pi, hz).unwrap();
            assert!(g.max_abs_diff(&e).unwrap() < 1e-9);
            // Shaping by the exact value leaves the gradient unchanged.
            let v = evaluate_policy(&mdp, &pi, 1e-14).unwrap();
            let shaped = shape_rewards(&mdp, &v).unwrap();
            let g2 = enumerated_transition_credit_gradient(&shaped, &pi, &th, hz).unwrap();
            assert!(g2.max_abs_diff(&e).unwrap() < 1e-9);
        }
    }
}
