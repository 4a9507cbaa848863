//! Benchmark MDPs: FrozenLake, the delayed-reward chain, small hand-built
//! MDPs, and a random MDP generator.

use rand::Rng;

use crate::error::{config_err, Result};
use crate::mdp::{MdpBuilder, RewardKind, TabularMdp};

pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;

pub const DEFAULT_MAP: &str = "SFFF/FHFH/FFFH/HFFG";

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLakeConfig {
    pub map: Vec<String>,
    pub slippery: bool,
    pub hole_penalty: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl Default for FrozenLakeConfig {
    fn default() -> Self {
        FrozenLakeConfig {
            map: parse_map(DEFAULT_MAP),
            slippery: true,
            hole_penalty: 0.0,
            goal_reward: 1.0,
            gamma: 0.99,
        }
    }
}

/// Splits a `/`-separated map such as `"SFFF/FHFH/FFFH/HFFG"` into rows.
pub fn parse_map(map: &str) -> Vec<String> {
    map.split('/').map(|r| r.trim().to_string()).collect()
}

impl FrozenLakeConfig {
    pub fn n_rows(&self) -> usize {
        self.map.len()
    }

    pub fn n_cols(&self) -> usize {
        self.map.first().map_or(0, |r| r.len())
    }

    pub fn state(&self, row: usize, col: usize) -> usize {
        row * self.n_cols() + col
    }

    fn validate(&self) -> Result<()> {
        let cols = self.n_cols();
        if self.map.is_empty() || cols == 0 {
            return Err(config_err("frozenlake map is empty"));
        }
        if self.map.iter().any(|r| r.len() != cols) {
            return Err(config_err("frozenlake map is not rectangular"));
        }
        if let Some(c) = self.map.iter().flat_map(|r| r.chars()).find(|c| !"SFHG".contains(*c)) {
            return Err(config_err(format!("frozenlake map has invalid tile '{c}'")));
        }
        let count = |t: char| self.map.iter().flat_map(|r| r.chars()).filter(|&c| c == t).count();
        if count('S') != 1 {
            return Err(config_err("frozenlake map needs exactly one S"));
        }
        if count('G') == 0 {
            return Err(config_err("frozenlake map needs at least one G"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config_err(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Grid MDP over `{S, F, H, G}` tiles with actions left, down, right, up.
///
/// Slippery moves go in the intended direction or either perpendicular one,
/// each with probability 1/3. Moving off the grid leaves the agent in place.
pub fn make_frozenlake(config: &FrozenLakeConfig) -> Result<TabularMdp> {
    config.validate()?;
    let (rows, cols) = (config.n_rows(), config.n_cols());
    let ns = rows * cols;
    let tiles: Vec<u8> = config.map.iter().flat_map(|r| r.bytes()).collect();
    let start = tiles.iter().position(|&t| t == b'S').unwrap_or(0);
    let mut initial = vec![0.0; ns];
    initial[start] = 1.0;

    let mut b = TabularMdp::builder(ns, 4)
        .gamma(config.gamma)
        .reward_kind(RewardKind::NextStateOnly)
        .initial_dist(initial);
    let move_to = |s: usize, dir: usize| -> usize {
        let (r, c) = (s / cols, s % cols);
        match dir {
            LEFT if c > 0 => s - 1,
            DOWN if r + 1 < rows => s + cols,
            RIGHT if c + 1 < cols => s + 1,
            UP if r > 0 => s - cols,
            _ => s,
        }
    };
    for (s, &tile) in tiles.iter().enumerate() {
        match tile {
            b'H' | b'G' => b.set_terminal(s),
            _ => {}
        }
    }
    for s in 0..ns {
        for a in 0..4 {
            let dirs: &[usize] = if config.slippery {
                &[(a + 3) % 4, a, (a + 1) % 4]
            } else {
                &[a]
            };
            let p = 1.0 / dirs.len() as f64;
            for &d in dirs {
                b = b.transition(s, a, move_to(s, d), p);
            }
        }
    }
    for (y, &tile) in tiles.iter().enumerate() {
        match tile {
            b'G' => b = b.reward_on_entry(y, config.goal_reward),
            b'H' => b = b.reward_on_entry(y, config.hole_penalty),
            _ => {}
        }
    }
    b.build()
}

/// The default 4x4 map.
pub fn frozenlake_4x4(slippery: bool, hole_penalty: f64, gamma: f64) -> TabularMdp {
    let cfg = FrozenLakeConfig {
        slippery,
        hole_penalty,
        gamma,
        ..FrozenLakeConfig::default()
    };
    make_frozenlake(&cfg).expect("default map is valid")
}

/// Chain of decision blocks with a delayed reward.
///
/// Each block starts at a decision state. The last action leads through
/// `delay` filler states to a rewarding state (+1 on entry); every other
/// action leads through a parallel filler path to a zero-reward state.
/// Filler actions have no effect. Reward states of one block lead to the
/// next block's decision state; those of the last block are terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedChainConfig {
    pub decision_states: usize,
    pub delay: usize,
    pub n_actions: usize,
    pub gamma: f64,
}

impl Default for DelayedChainConfig {
    fn default() -> Self {
        DelayedChainConfig {
            decision_states: 4,
            delay: 5,
            n_actions: 2,
            gamma: 1.0,
        }
    }
}

impl DelayedChainConfig {
    pub fn block_size(&self) -> usize {
        2 * self.delay + 3
    }

    pub fn n_states(&self) -> usize {
        self.decision_states * self.block_size()
    }

    pub fn decision_state(&self, block: usize) -> usize {
        block * self.block_size()
    }

    pub fn is_decision_state(&self, s: usize) -> bool {
        s % self.block_size() == 0
    }

    pub fn good_action(&self) -> usize {
        self.n_actions - 1
    }

    pub fn bad_reward_state(&self, block: usize) -> usize {
        self.decision_state(block) + 2 * self.delay + 1
    }

    pub fn good_reward_state(&self, block: usize) -> usize {
        self.decision_state(block) + 2 * self.delay + 2
    }

    /// The `j`-th filler (0-based) on the good or bad path of `block`.
    pub fn filler_state(&self, block: usize, good: bool, j: usize) -> usize {
        self.decision_state(block) + 1 + j + if good { self.delay } else { 0 }
    }
}

pub fn make_delayed_chain(config: &DelayedChainConfig) -> Result<TabularMdp> {
    if config.decision_states == 0 {
        return Err(config_err("delayed chain needs at least one decision state"));
    }
    if config.n_actions < 2 {
        return Err(config_err("delayed chain needs at least two actions"));
    }
    let (d, na) = (config.delay, config.n_actions);
    let mut b = TabularMdp::builder(config.n_states(), na)
        .gamma(config.gamma)
        .reward_kind(RewardKind::NextStateOnly);
    let all = |b: MdpBuilder, s: usize, next: usize| (0..na).fold(b, |b, a| b.transition(s, a, next, 1.0));
    for block in 0..config.decision_states {
        let dec = config.decision_state(block);
        for good in [false, true] {
            let reward_state = if good {
                config.good_reward_state(block)
            } else {
                config.bad_reward_state(block)
            };
            let path: Vec<usize> = (0..d)
                .map(|j| config.filler_state(block, good, j))
                .chain([reward_state])
                .collect();
            let actions: Vec<usize> = if good { vec![na - 1] } else { (0..na - 1).collect() };
            for a in actions {
                b = b.transition(dec, a, path[0], 1.0);
            }
            for w in path.windows(2) {
                b = all(b, w[0], w[1]);
            }
            if block + 1 < config.decision_states {
                b = all(b, reward_state, config.decision_state(block + 1));
            } else {
                b.set_terminal(reward_state);
            }
        }
        b = b.reward_on_entry(config.good_reward_state(block), 1.0);
    }
    b.build()
}

/// One start state with two actions into two terminal states; action 1
/// pays 1. States are `[s0, T0, T1]` and `γ = 1`.
pub fn two_arm() -> TabularMdp {
    TabularMdp::builder(3, 2)
        .reward_kind(RewardKind::NextStateOnly)
        .transition(0, 0, 1, 1.0)
        .transition(0, 1, 2, 1.0)
        .terminal(1)
        .terminal(2)
        .reward_on_entry(2, 1.0)
        .build()
        .expect("two-arm MDP is valid")
}

/// Deterministic chain `0 → 1 → 2` with +1 on entering the terminal state 2.
/// Both actions behave identically.
pub fn chain3(gamma: f64) -> TabularMdp {
    TabularMdp::builder(3, 2)
        .gamma(gamma)
        .reward_kind(RewardKind::NextStateOnly)
        .transition(0, 0, 1, 1.0)
        .transition(0, 1, 1, 1.0)
        .transition(1, 0, 2, 1.0)
        .transition(1, 1, 2, 1.0)
        .terminal(2)
        .reward_on_entry(2, 1.0)
        .build()
        .expect("chain MDP is valid")
}

/// `s0 → s1 → terminal` regardless of action; entering the terminal state
/// pays `penalty`, every other reward is 0.
pub fn delayed_penalty(n_actions: usize, penalty: f64, gamma: f64) -> Result<TabularMdp> {
    let mut b = TabularMdp::builder(3, n_actions)
        .gamma(gamma)
        .reward_kind(RewardKind::NextStateOnly)
        .terminal(2)
        .reward_on_entry(2, penalty);
    for a in 0..n_actions {
        b = b.transition(0, a, 1, 1.0).transition(1, a, 2, 1.0);
    }
    b.build()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward_kind: RewardKind,
    /// The last `n_terminal` states are terminal.
    pub n_terminal: usize,
}

/// Random MDP with sparse transition rows (support of 1 to 3 states),
/// rewards uniform on `[-1, 1)`, and a random start distribution over live
/// states.
pub fn random_mdp<R: Rng + ?Sized>(config: &RandomMdpConfig, rng: &mut R) -> Result<TabularMdp> {
    let (ns, na) = (config.n_states, config.n_actions);
    if config.n_terminal >= ns {
        return Err(config_err("random MDP needs at least one live state"));
    }
    let live = ns - config.n_terminal;
    let mut initial: Vec<f64> = (0..ns)
        .map(|s| if s < live { rng.gen::<f64>() + 0.05 } else { 0.0 })
        .collect();
    let z: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= z);

    let mut b = TabularMdp::builder(ns, na)
        .gamma(config.gamma)
        .reward_kind(config.reward_kind)
        .initial_dist(initial);
    for s in live..ns {
        b.set_terminal(s);
    }
    for s in 0..live {
        for a in 0..na {
            let k = rng.gen_range(1..=3.min(ns));
            let support: Vec<usize> = rand::seq::index::sample(rng, ns, k).into_vec();
            let weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.1).collect();
            let z: f64 = weights.iter().sum();
            for (&y, w) in support.iter().zip(&weights) {
                b.set_transition(s, a, y, w / z);
            }
        }
    }
    match config.reward_kind {
        RewardKind::NextStateOnly => {
            for y in 0..ns {
                let r = rng.gen_range(-1.0..1.0);
                b = b.reward_on_entry(y, r);
            }
        }
        RewardKind::FullTransition => {
            for s in 0..ns {
                for a in 0..na {
                    for y in 0..ns {
                        b.set_reward(s, a, y, rng.gen_range(-1.0..1.0));
                    }
                }
            }
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hindsight::exact_hindsight;
    use crate::mdp::{evaluate_policy, greedy_action_sets, sample_trajectory, value_iteration, PolicyTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_lake_right_then_down_reaches_goal() {
        let mdp = frozenlake_4x4(false, 0.0, 0.99);
        let cfg = FrozenLakeConfig::default();
        // S(0,0) → (0,1) → (0,2) → (1,2) → (2,2) → (3,2) → (3,3)=G
        let mut actions = vec![0; 16];
        for (r, c, a) in [
            (0, 0, RIGHT),
            (0, 1, RIGHT),
            (0, 2, DOWN),
            (1, 2, DOWN),
            (2, 2, DOWN),
            (3, 2, RIGHT),
        ] {
            actions[cfg.state(r, c)] = a;
        }
        let pi = PolicyTable::greedy(4, &actions, 800.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_trajectory(&mdp, &pi, &mut rng, 100).unwrap();
        assert_eq!(t.total_reward(), 1.0);
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn slippery_right_from_start() {
        let mdp = frozenlake_4x4(true, 0.0, 0.99);
        let third = 1.0 / 3.0;
        let row = mdp.transition_row(0, RIGHT);
        assert!((row[0] - third).abs() < 1e-15); // up reflects
        assert!((row[1] - third).abs() < 1e-15);
        assert!((row[4] - third).abs() < 1e-15);
        assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 3);
    }

    #[test]
    fn holes_pay_penalty_and_terminate() {
        let mdp = frozenlake_4x4(true, -1.0, 0.99);
        for h in [5, 7, 11, 12] {
            assert!(mdp.is_terminal(h));
            assert_eq!(mdp.r(1, DOWN, h), -1.0);
        }
        assert!(mdp.is_terminal(15));
        assert_eq!(mdp.r(14, RIGHT, 15), 1.0);
    }

    #[test]
    fn penalty_variant_shares_dynamics_and_optimal_actions() {
        let plain = frozenlake_4x4(true, 0.0, 0.99);
        let penalty = frozenlake_4x4(true, -1.0, 0.99);
        assert_eq!(plain.transition_table(), penalty.transition_table());
        let (_, q0) = value_iteration(&plain, 1e-12).unwrap();
        let (_, q1) = value_iteration(&penalty, 1e-12).unwrap();
        let g0 = greedy_action_sets(&q0, 4, 1e-9);
        let g1 = greedy_action_sets(&q1, 4, 1e-9);
        for s in (0..16).filter(|&s| !plain.is_terminal(s)) {
            assert!(
                g0[s].iter().any(|a| g1[s].contains(a)),
                "state {s}: {:?} vs {:?}",
                g0[s],
                g1[s]
            );
        }
    }

    #[test]
    fn malformed_maps_are_rejected() {
        for map in ["SFF/FF", "FFFF/FHFH", "SSFG", "SFXG", "SFFF"] {
            let cfg = FrozenLakeConfig {
                map: parse_map(map),
                ..FrozenLakeConfig::default()
            };
            assert!(make_frozenlake(&cfg).is_err(), "{map}");
        }
    }

    #[test]
    fn uniform_success_rate_matches_dp() {
        let mdp = frozenlake_4x4(true, 0.0, 1.0);
        let pi = PolicyTable::for_mdp(&mdp);
        let v = evaluate_policy(&mdp, &pi, 1e-13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let wins = (0..n)
            .filter(|_| sample_trajectory(&mdp, &pi, &mut rng, 100_000).unwrap().total_reward() > 0.0)
            .count() as f64;
        let p_hat = wins / n as f64;
        let se = (v[0] * (1.0 - v[0]) / n as f64).sqrt();
        assert!((p_hat - v[0]).abs() < 3.0 * se, "mc {p_hat} vs dp {}", v[0]);
    }

    #[test]
    fn delayed_chain_with_no_delay_is_two_arm() {
        let cfg = DelayedChainConfig {
            decision_states: 1,
            delay: 0,
            n_actions: 2,
            gamma: 1.0,
        };
        assert_eq!(make_delayed_chain(&cfg).unwrap(), two_arm());
    }

    #[test]
    fn delayed_chain_layout() {
        let cfg = DelayedChainConfig {
            decision_states: 2,
            delay: 3,
            n_actions: 3,
            gamma: 1.0,
        };
        let mdp = make_delayed_chain(&cfg).unwrap();
        assert_eq!(mdp.n_states(), 18);
        assert_eq!(mdp.p(0, 2, cfg.filler_state(0, true, 0)), 1.0);
        assert_eq!(mdp.p(0, 0, cfg.filler_state(0, false, 0)), 1.0);
        assert_eq!(mdp.p(cfg.good_reward_state(0), 1, cfg.decision_state(1)), 1.0);
        assert!(mdp.is_terminal(cfg.good_reward_state(1)));
        assert!(!mdp.is_terminal(cfg.good_reward_state(0)));
        let pi = PolicyTable::greedy(3, &vec![2; 18], 800.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_trajectory(&mdp, &pi, &mut rng, 100).unwrap();
        assert_eq!(t.total_reward(), 2.0);
        assert_eq!(t.len(), 9);
    }

    #[test]
    fn delayed_chain_hindsight_structure() {
        let cfg = DelayedChainConfig {
            decision_states: 1,
            delay: 3,
            n_actions: 2,
            gamma: 1.0,
        };
        let mdp = make_delayed_chain(&cfg).unwrap();
        let pi = PolicyTable::from_logits(
            mdp.n_states(),
            2,
            (0..mdp.n_states() * 2).map(|i| (i % 3) as f64 * 0.4).collect(),
        )
        .unwrap();
        let h = exact_hindsight(&mdp, &pi, 6).unwrap();
        let s_plus = cfg.good_reward_state(0);
        assert!((h.prob(4, 0, s_plus, cfg.good_action()).unwrap() - 1.0).abs() < 1e-15);
        for good in [false, true] {
            for j in 0..3 {
                let f = cfg.filler_state(0, good, j);
                let p = pi.probs(f);
                for delta in 1..=6 {
                    for y in 0..mdp.n_states() {
                        if let Ok(row) = h.row(delta, f, y) {
                            for a in 0..2 {
                                assert!((row[a] - p[a]).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn random_mdps_are_valid_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [RewardKind::NextStateOnly, RewardKind::FullTransition] {
            let cfg = RandomMdpConfig {
                n_states: 20,
                n_actions: 4,
                gamma: 0.9,
                reward_kind: kind,
                n_terminal: 3,
            };
            let mdp = random_mdp(&cfg, &mut rng).unwrap();
            assert_eq!(mdp.reward_kind(), kind);
            assert_eq!((0..20).filter(|&s| mdp.is_terminal(s)).count(), 3);
        }
    }

    #[test]
    fn delayed_penalty_shape() {
        let mdp = delayed_penalty(3, -1.0, 1.0).unwrap();
        assert_eq!(mdp.r(1, 2, 2), -1.0);
        assert_eq!(mdp.r(0, 1, 1), 0.0);
    }
}
