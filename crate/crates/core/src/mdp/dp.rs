//! Exact dynamic programming on a [`TabularMdp`].
//!
//! Every routine treats terminal states as killed: probability mass that
//! enters a terminal state stops propagating, and terminal values are zero.

use crate::error::{config_err, Error, Result};

use super::{PolicyTable, RewardKind, TabularMdp, UpdateEstimate, ValueTable};

/// Truncation tolerance for [`exact_policy_gradient`].
pub const GRADIENT_TRUNCATION_TOL: f64 = 1e-10;

const HORIZON_CAP: usize = 1_000_000;

/// Policy-averaged one-step kernel `M[x][y] = Σ_b π(b|x) P[x][b][y]` with
/// terminal rows zeroed, and expected reward `r̄[x]`.
pub(crate) fn policy_kernel(mdp: &TabularMdp, probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut kernel = vec![0.0; ns * ns];
    let mut rbar = vec![0.0; ns];
    for x in (0..ns).filter(|&x| !mdp.is_terminal(x)) {
        for b in 0..na {
            let pb = probs[x * na + b];
            rbar[x] += pb * mdp.expected_reward(x, b);
            for (k, &p) in kernel[x * ns..(x + 1) * ns].iter_mut().zip(mdp.transition_row(x, b)) {
                *k += pb * p;
            }
        }
    }
    (kernel, rbar)
}

/// `out = dist · M`.
pub(crate) fn propagate(dist: &[f64], kernel: &[f64], out: &mut [f64]) {
    let ns = dist.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (x, &dx) in dist.iter().enumerate() {
        if dx == 0.0 {
            continue;
        }
        for (o, &k) in out.iter_mut().zip(&kernel[x * ns..(x + 1) * ns]) {
            *o += dx * k;
        }
    }
}

/// Iterative policy evaluation with a default iteration cap.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &PolicyTable, tol: f64) -> Result<ValueTable> {
    evaluate_policy_with(mdp, policy, tol, HORIZON_CAP)
}

/// Iterates the Bellman expectation backup until the sup-norm change (the
/// Bellman residual of the previous iterate) drops below `tol`.
pub fn evaluate_policy_with(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    tol: f64,
    max_iterations: usize,
) -> Result<ValueTable> {
    if !(tol > 0.0) {
        return Err(config_err("tolerance must be positive"));
    }
    policy.check_mdp(mdp)?;
    let ns = mdp.n_states();
    let (kernel, rbar) = policy_kernel(mdp, &policy.prob_table());
    let gamma = mdp.gamma();
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        residual = 0.0;
        for x in 0..ns {
            let row = &kernel[x * ns..(x + 1) * ns];
            let ev: f64 = row.iter().zip(&v).map(|(k, vy)| k * vy).sum();
            next[x] = rbar[x] + gamma * ev;
            residual = f64::max(residual, (next[x] - v[x]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual < tol {
            return Ok(ValueTable(v));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual,
    })
}

/// `Q(s,a) = Σ_s' P[s][a][s'] (r[s][a][s'] + γ V[s'])`, flat over `(s, a)`.
/// Terminal rows are zero.
pub fn q_values(mdp: &TabularMdp, value: &ValueTable) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..na {
            q[s * na + a] = mdp
                .transition_row(s, a)
                .iter()
                .zip(mdp.reward_row(s, a))
                .enumerate()
                .map(|(y, (p, r))| {
                    let vy = if mdp.is_terminal(y) { 0.0 } else { value[y] };
                    p * (r + mdp.gamma() * vy)
                })
                .sum();
        }
    }
    q
}

/// Optimal values by value iteration; returns `V*` and `Q*`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(ValueTable, Vec<f64>)> {
    if !(tol > 0.0) {
        return Err(config_err("tolerance must be positive"));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = ValueTable::zeros(ns);
    let mut residual = f64::INFINITY;
    for _ in 0..HORIZON_CAP {
        let q = q_values(mdp, &v);
        residual = 0.0;
        let mut next = ValueTable::zeros(ns);
        for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
            next[s] = q[s * na..(s + 1) * na]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (next[s] - v[s]).abs());
        }
        v = next;
        if residual < tol {
            let q = q_values(mdp, &v);
            return Ok((v, q));
        }
    }
    Err(Error::NonConvergence {
        iterations: HORIZON_CAP,
        residual,
    })
}

/// Per state, every action whose `Q` is within `tie_tol` of the row maximum.
pub fn greedy_action_sets(q: &[f64], n_actions: usize, tie_tol: f64) -> Vec<Vec<usize>> {
    q.chunks(n_actions)
        .map(|row| {
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (0..n_actions).filter(|&a| row[a] >= best - tie_tol).collect()
        })
        .collect()
}

/// Live (non-terminal) probability mass after each of `horizon` steps.
fn alive_mass(mdp: &TabularMdp, kernel: &[f64], horizon: usize) -> Vec<f64> {
    let ns = mdp.n_states();
    let mut dist = mdp.initial_dist().to_vec();
    let mut next = vec![0.0; ns];
    let live = |d: &[f64]| (0..ns).filter(|&s| !mdp.is_terminal(s)).map(|s| d[s]).sum::<f64>();
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(live(&dist));
    for _ in 0..horizon {
        propagate(&dist, kernel, &mut next);
        std::mem::swap(&mut dist, &mut next);
        out.push(live(&dist));
    }
    out
}

/// Upper estimate of the value mass omitted by stopping after `horizon` steps.
///
/// For `γ < 1` this is `γ^H · alive_H · max|r| / (1 − γ)`. For `γ = 1` the
/// tail is extrapolated geometrically from the last observed survival ratio,
/// and is infinite when survival does not decay.
pub fn truncation_bound(mdp: &TabularMdp, policy: &PolicyTable, horizon: usize) -> f64 {
    let (kernel, _) = policy_kernel(mdp, &policy.prob_table());
    let alive = alive_mass(mdp, &kernel, horizon);
    bound_from_alive(mdp, &alive, horizon)
}

fn bound_from_alive(mdp: &TabularMdp, alive: &[f64], horizon: usize) -> f64 {
    let rmax = mdp.max_abs_reward();
    let a_h = alive[horizon];
    if a_h == 0.0 || rmax == 0.0 {
        return 0.0;
    }
    let gamma = mdp.gamma();
    if gamma < 1.0 {
        return gamma.powi(horizon as i32) * a_h * rmax / (1.0 - gamma);
    }
    if horizon == 0 {
        return f64::INFINITY;
    }
    let rho = a_h / alive[horizon - 1];
    if rho >= 1.0 {
        f64::INFINITY
    } else {
        a_h * rmax / (1.0 - rho)
    }
}

/// Smallest horizon meeting [`GRADIENT_TRUNCATION_TOL`].
///
/// For `γ < 1` this is the smallest `H` with `γ^H · max|r| / (1 − γ) < 1e-10`
/// and does not depend on the policy. For `γ = 1` the live mass under
/// `policy` is propagated until the geometric tail estimate meets the
/// tolerance (capped at one million steps).
pub fn default_horizon(mdp: &TabularMdp, policy: &PolicyTable) -> usize {
    let rmax = mdp.max_abs_reward();
    let gamma = mdp.gamma();
    if rmax == 0.0 {
        return 1;
    }
    if gamma < 1.0 {
        let h = ((GRADIENT_TRUNCATION_TOL * (1.0 - gamma) / rmax).ln() / gamma.ln()).floor() as usize + 1;
        return h.max(1);
    }
    let (kernel, _) = policy_kernel(mdp, &policy.prob_table());
    let ns = mdp.n_states();
    let mut dist = mdp.initial_dist().to_vec();
    let mut next = vec![0.0; ns];
    let live = |d: &[f64]| (0..ns).filter(|&s| !mdp.is_terminal(s)).map(|s| d[s]).sum::<f64>();
    let mut alive = vec![live(&dist)];
    for h in 1..=HORIZON_CAP {
        propagate(&dist, &kernel, &mut next);
        std::mem::swap(&mut dist, &mut next);
        alive.push(live(&dist));
        if bound_from_alive(mdp, &alive, h) < GRADIENT_TRUNCATION_TOL {
            return h;
        }
    }
    HORIZON_CAP
}

/// `d(s) = Σ_{t<H} γ^t P(S_t = s)` from the initial distribution.
pub fn discounted_visitation(mdp: &TabularMdp, policy: &PolicyTable, horizon: usize) -> Vec<f64> {
    let ns = mdp.n_states();
    let (kernel, _) = policy_kernel(mdp, &policy.prob_table());
    let mut dist = mdp.initial_dist().to_vec();
    let mut next = vec![0.0; ns];
    let mut d = vec![0.0; ns];
    let mut disc = 1.0;
    for _ in 0..horizon {
        for (acc, p) in d.iter_mut().zip(&dist) {
            *acc += disc * p;
        }
        propagate(&dist, &kernel, &mut next);
        std::mem::swap(&mut dist, &mut next);
        disc *= mdp.gamma();
    }
    d
}

/// Exact `∇_θ V^{π_θ}(μ)` for softmax logits:
/// `grad[s][b] = d(s) π(b|s) (Q(s,b) − V(s))`.
pub fn exact_policy_gradient(mdp: &TabularMdp, policy: &PolicyTable, horizon: usize) -> Result<UpdateEstimate> {
    policy.check_mdp(mdp)?;
    if horizon == 0 {
        return Err(config_err("horizon must be positive"));
    }
    let bound = truncation_bound(mdp, policy, horizon);
    if bound > GRADIENT_TRUNCATION_TOL {
        return Err(Error::HorizonTooShort { horizon, bound });
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let value = evaluate_policy_with(mdp, policy, 1e-14, HORIZON_CAP.max(4 * horizon))?;
    let q = q_values(mdp, &value);
    let probs = policy.prob_table();
    let d = discounted_visitation(mdp, policy, horizon);
    let mut out = UpdateEstimate::zeros(ns, na);
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        let adv: Vec<f64> = (0..na)
            .map(|b| probs[s * na + b] * (q[s * na + b] - value[s]))
            .collect();
        out.add_row(s, &adv, d[s]);
    }
    out.weight = d;
    Ok(out)
}

/// Potential-based shaping `r'(s,a,s') = γ Φ(s') + r(s,a,s') − Φ(s)`.
pub fn shape_rewards(mdp: &TabularMdp, potential: &ValueTable) -> Result<TabularMdp> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if potential.len() != ns {
        return Err(Error::DimensionMismatch {
            what: "potential",
            expected: ns,
            got: potential.len(),
        });
    }
    if let Some(s) = (0..ns).find(|&s| mdp.is_terminal(s) && potential[s] != 0.0) {
        return Err(config_err(format!("potential of terminal state {s} must be 0")));
    }
    let mut reward = mdp.reward_table().to_vec();
    for s in (0..ns).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..na {
            for y in 0..ns {
                reward[(s * na + a) * ns + y] += mdp.gamma() * potential[y] - potential[s];
            }
        }
    }
    mdp.with_rewards(reward, RewardKind::FullTransition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain3, frozenlake_4x4, random_mdp, two_arm, RandomMdpConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `V(μ)` in every logit.
    fn fd_gradient(mdp: &TabularMdp, policy: &PolicyTable, eps: f64) -> Vec<f64> {
        let v_mu = |p: &PolicyTable| {
            let v = evaluate_policy(mdp, p, 1e-15).unwrap();
            mdp.initial_dist().iter().zip(&v.0).map(|(m, v)| m * v).sum::<f64>()
        };
        (0..policy.logits().len())
            .map(|i| {
                let mut plus = policy.clone();
                plus.logits_mut()[i] += eps;
                let mut minus = policy.clone();
                minus.logits_mut()[i] -= eps;
                (v_mu(&plus) - v_mu(&minus)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn two_arm_values_and_gradient() {
        let mdp = two_arm();
        let pi = PolicyTable::for_mdp(&mdp);
        let v = evaluate_policy(&mdp, &pi, 1e-12).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-12);
        let g = exact_policy_gradient(&mdp, &pi, default_horizon(&mdp, &pi)).unwrap();
        // π(b)(Q(b) − V) with Q = [0, 1], V = 0.5
        assert!((g.get(0, 1) - 0.25).abs() < 1e-12);
        assert!((g.get(0, 0) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn chain3_values_and_zero_gradient() {
        let mdp = chain3(0.9);
        let pi = PolicyTable::from_logits(3, 2, vec![0.4, -0.3, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = evaluate_policy(&mdp, &pi, 1e-12).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-12);
        let g = exact_policy_gradient(&mdp, &pi, default_horizon(&mdp, &pi)).unwrap();
        assert!(g.grad.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut mdps = vec![two_arm(), chain3(0.9), frozenlake_4x4(true, 0.0, 0.9)];
        for kind in [RewardKind::NextStateOnly, RewardKind::FullTransition] {
            let cfg = RandomMdpConfig {
                n_states: 6,
                n_actions: 3,
                gamma: 0.9,
                reward_kind: kind,
                n_terminal: 1,
            };
            mdps.push(random_mdp(&cfg, &mut rng).unwrap());
        }
        for mdp in &mdps {
            let logits = (0..mdp.n_states() * mdp.n_actions())
                .map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0)
                .collect();
            let pi = PolicyTable::from_logits(mdp.n_states(), mdp.n_actions(), logits).unwrap();
            let exact = exact_policy_gradient(mdp, &pi, default_horizon(mdp, &pi)).unwrap();
            let fd = fd_gradient(mdp, &pi, 1e-5);
            for (e, f) in exact.grad.iter().zip(&fd) {
                assert!((e - f).abs() < 1e-6, "exact {e} vs fd {f}");
            }
        }
    }

    #[test]
    fn short_horizon_is_reported() {
        let mdp = frozenlake_4x4(true, 0.0, 0.99);
        let pi = PolicyTable::for_mdp(&mdp);
        match exact_policy_gradient(&mdp, &pi, 5) {
            Err(Error::HorizonTooShort { horizon: 5, bound }) => assert!(bound > 1e-10),
            other => panic!("expected HorizonTooShort, got {other:?}"),
        }
    }

    #[test]
    fn default_horizon_formula() {
        // smallest H with 0.9^H / 0.1 < 1e-10
        let mdp = chain3(0.9);
        let h = default_horizon(&mdp, &PolicyTable::for_mdp(&mdp));
        assert!(0.9f64.powi(h as i32) / 0.1 < 1e-10);
        assert!(0.9f64.powi(h as i32 - 1) / 0.1 >= 1e-10);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mdp = frozenlake_4x4(true, 0.0, 0.99);
        let err = evaluate_policy_with(&mdp, &PolicyTable::for_mdp(&mdp), 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn zero_potential_leaves_rewards() {
        let mdp = frozenlake_4x4(true, -1.0, 0.99);
        let shaped = shape_rewards(&mdp, &ValueTable::zeros(16)).unwrap();
        assert_eq!(shaped.reward_table(), mdp.reward_table());
        assert_eq!(shaped.reward_kind(), RewardKind::FullTransition);
    }

    #[test]
    fn exact_value_potential_zeroes_expected_shaped_reward() {
        let mdp = frozenlake_4x4(true, 0.0, 0.99);
        let pi = PolicyTable::from_logits(16, 4, (0..64).map(|i| (i % 5) as f64 * 0.3).collect()).unwrap();
        let v = evaluate_policy(&mdp, &pi, 1e-14).unwrap();
        let shaped = shape_rewards(&mdp, &v).unwrap();
        for s in (0..16).filter(|&s| !mdp.is_terminal(s)) {
            let p = pi.probs(s);
            let e: f64 = (0..4).map(|a| p[a] * shaped.expected_reward(s, a)).sum();
            assert!(e.abs() < 1e-12, "state {s}: {e}");
        }
    }

    #[test]
    fn terminal_potential_must_be_zero() {
        let mdp = two_arm();
        assert!(shape_rewards(&mdp, &ValueTable(vec![0.0, 1.0, 0.0])).is_err());
        assert!(shape_rewards(&mdp, &ValueTable(vec![0.0, 0.0])).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn potential_shaping_keeps_gradient_and_greedy_policy(seed in 0u64..1_000_000) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = RandomMdpConfig {
                n_states: 6,
                n_actions: 3,
                gamma: 0.9,
                reward_kind: RewardKind::FullTransition,
                n_terminal: 1,
            };
            let mdp = random_mdp(&cfg, &mut rng).unwrap();
            let pi = PolicyTable::from_logits(6, 3, (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let phi = ValueTable((0..6).map(|s| if mdp.is_terminal(s) { 0.0 } else { rng.gen_range(-3.0..3.0) }).collect());
            let shaped = shape_rewards(&mdp, &phi).unwrap();
            let h = default_horizon(&mdp, &pi).max(default_horizon(&shaped, &pi));
            let a = exact_policy_gradient(&mdp, &pi, h).unwrap();
            let b = exact_policy_gradient(&shaped, &pi, h).unwrap();
            proptest::prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-8);
            let (_, qa) = value_iteration(&mdp, 1e-13).unwrap();
            let (_, qb) = value_iteration(&shaped, 1e-13).unwrap();
            let (ga, gb) = (greedy_action_sets(&qa, 3, 1e-9), greedy_action_sets(&qb, 3, 1e-9));
            for s in (0..6).filter(|&s| !mdp.is_terminal(s)) {
                proptest::prop_assert_eq!(&ga[s], &gb[s]);
            }
        }
    }
}
