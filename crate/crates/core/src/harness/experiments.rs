//! Canned experiments behind the CLI and the acceptance suite.

use std::path::Path;

use rayon::prelude::*;

use crate::agents::{
    apply_update, hca_update, hca_value_update, train_reward_model, train_value, CreditFunction, RewardModel,
    RolloutCollector,
};
use crate::diagnostics::{entropy_trace, nll_gap_filtered, EntropyTrace, NllGapCurve};
use crate::envs::{delayed_penalty, make_delayed_chain, DelayedChainConfig};
use crate::error::{config_err, Result};
use crate::hindsight::{train_credit_model, CreditModel};
use crate::mdp::{PolicyTable, ValueTable};

use super::{describe, replicate_rngs, run_experiment, write_run, Algorithm, EnvSpec, ExperimentConfig, SummaryRow};

/// Settings for the policy-collapse experiment on the delayed-penalty MDP
/// (`s0 → s1 → end`, penalty on the last step).
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseConfig {
    pub n_actions: usize,
    pub penalty: f64,
    /// Fixed credit row used at every state; must differ from uniform.
    pub credit: Vec<f64>,
    pub updates: usize,
    pub episodes_per_update: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        CollapseConfig {
            n_actions: 3,
            penalty: -1.0,
            credit: vec![0.5, 0.3, 0.2],
            updates: 2000,
            episodes_per_update: 8,
            lr_policy: 1.0,
            lr_value: 0.1,
        }
    }
}

/// Entropy at the start state after every update, and the final policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseRun {
    pub trace: EntropyTrace,
    pub policy: PolicyTable,
}

impl CollapseRun {
    pub fn final_entropy(&self) -> f64 {
        self.trace.last().unwrap_or(f64::NAN)
    }

    pub fn min_entropy(&self) -> f64 {
        self.trace.entropy.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Trains from a uniform policy with the fixed credit `cfg.credit`, using
/// rewards (`augmented = false`, with a learned reward model) or augmented
/// rewards under a learned value table (`augmented = true`).
pub fn collapse_run(cfg: &CollapseConfig, seed: u64, augmented: bool) -> Result<CollapseRun> {
    let na = cfg.n_actions;
    if cfg.credit.len() != na {
        return Err(config_err("credit row length must equal n_actions"));
    }
    let mdp = delayed_penalty(na, cfg.penalty, 1.0)?;
    let ns = mdp.n_states();
    let credit_table: Vec<f64> = (0..ns).flat_map(|_| cfg.credit.iter().copied()).collect();
    let credit = CreditFunction::FutureIndependent(&credit_table);
    let (mut rng, _) = replicate_rngs(seed);
    let mut collector = RolloutCollector::new(cfg.episodes_per_update, 2)?;
    let mut policy = PolicyTable::uniform(ns, na);
    let mut value = ValueTable::zeros(ns);
    let mut reward = RewardModel::new(ns, na);
    let mut trace = EntropyTrace::default();
    trace.push(0, entropy_trace(&policy, &[0])?);
    for i in 0..cfg.updates {
        let batch = collector.collect(&mdp, &policy, 2, &mut rng)?;
        let mut u = if augmented {
            train_value(&mut value, &batch, 1.0, cfg.lr_value)?;
            hca_value_update(&batch, &policy, &value, &credit, 1.0)?
        } else {
            train_reward_model(&mut reward, &batch, 1.0)?;
            hca_update(&batch, &policy, &credit, &reward, &value, 1.0)?
        };
        u.scale(1.0 / batch.timesteps() as f64);
        policy = apply_update(&policy, &u, cfg.lr_policy, 0.0)?;
        trace.push(i + 1, entropy_trace(&policy, &[0])?);
    }
    Ok(CollapseRun { trace, policy })
}

/// Settings for the credit-horizon experiment on the delayed chain under a
/// fixed uniform policy.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGapConfig {
    pub chain: DelayedChainConfig,
    pub rollout_len: usize,
    pub num_envs: usize,
    pub train_updates: usize,
    pub credit_batches: usize,
    pub lr_credit: f64,
    /// Fresh rollouts used to measure the gap after training.
    pub eval_updates: usize,
}

impl Default for NllGapConfig {
    fn default() -> Self {
        NllGapConfig {
            chain: DelayedChainConfig::default(),
            rollout_len: 32,
            num_envs: 8,
            train_updates: 1000,
            credit_batches: 1,
            lr_credit: 0.1,
            eval_updates: 20,
        }
    }
}

/// Trains a policy-prior credit model on rollouts of the uniform policy and
/// returns its gap curve at decision states over offsets `1..=rollout_len`.
pub fn delayed_chain_nll_gap(cfg: &NllGapConfig, seed: u64) -> Result<NllGapCurve> {
    let mdp = make_delayed_chain(&cfg.chain)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let policy = PolicyTable::uniform(ns, na);
    let mut model = CreditModel::new(ns, na);
    let (mut rng, mut eval_rng) = replicate_rngs(seed);
    let max_steps = 4 * ns;
    let mut collector = RolloutCollector::new(cfg.num_envs, max_steps)?;
    for _ in 0..cfg.train_updates {
        let samples = collector
            .collect(&mdp, &policy, cfg.rollout_len, &mut rng)?
            .credit_samples();
        for _ in 0..cfg.credit_batches {
            train_credit_model(&mut model, &policy, &samples, cfg.lr_credit)?;
        }
    }
    let mut eval = RolloutCollector::new(cfg.num_envs, max_steps)?;
    let mut segments = Vec::new();
    for _ in 0..cfg.eval_updates {
        segments.extend(eval.collect(&mdp, &policy, cfg.rollout_len, &mut eval_rng)?.segments);
    }
    let batch = crate::agents::RolloutBatch::new(segments);
    let chain = cfg.chain;
    nll_gap_filtered(&model, &policy, &batch, cfg.rollout_len, |s| chain.is_decision_state(s))
}

/// Final-return statistics of one algorithm on one environment variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub variant: String,
    pub algorithm: Algorithm,
    pub final_returns: Vec<f64>,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// The FrozenLake comparison of `hca`, `hca_prior` and `hca_value` on the
/// standard map and on the hole-penalty variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLakeComparison {
    pub entries: Vec<ComparisonEntry>,
    pub summary: Vec<SummaryRow>,
}

pub const COMPARED: [Algorithm; 3] = [Algorithm::Hca, Algorithm::HcaPrior, Algorithm::HcaValue];

impl FrozenLakeComparison {
    pub fn entry(&self, variant: &str, algorithm: Algorithm) -> Option<&ComparisonEntry> {
        self.entries
            .iter()
            .find(|e| e.variant == variant && e.algorithm == algorithm)
    }

    /// The ordering and penalty-robustness claims, each with its numbers.
    pub fn checks(&self) -> Vec<CheckResult> {
        let get = |v, a| self.entry(v, a).expect("comparison covers every algorithm");
        let gap_check = |name: &str, hi: &ComparisonEntry, lo: &ComparisonEntry| {
            let pooled = (hi.se.powi(2) + lo.se.powi(2)).sqrt();
            let gap = hi.mean - lo.mean;
            CheckResult {
                name: name.to_string(),
                pass: gap > 2.0 * pooled,
                detail: format!(
                    "{} {:.4} vs {} {:.4}: gap {:.4}, 2 pooled SE {:.4}",
                    hi.algorithm,
                    hi.mean,
                    lo.algorithm,
                    lo.mean,
                    gap,
                    2.0 * pooled
                ),
            }
        };
        let hv = get("standard", Algorithm::HcaValue);
        let hp = get("standard", Algorithm::HcaPrior);
        let h = get("standard", Algorithm::Hca);
        let hp_pen = get("penalty", Algorithm::HcaPrior);
        let hv_pen = get("penalty", Algorithm::HcaValue);
        let pooled = (hv.se.powi(2) + hv_pen.se.powi(2)).sqrt();
        vec![
            gap_check("hca_value above hca_prior", hv, hp),
            gap_check("hca_prior above hca", hp, h),
            CheckResult {
                name: "hca_prior stalls under hole penalty".into(),
                pass: hp_pen.mean <= 0.05,
                detail: format!("penalty hca_prior mean {:.4} (limit 0.05)", hp_pen.mean),
            },
            CheckResult {
                name: "hca_value unaffected by hole penalty".into(),
                pass: (hv_pen.mean - hv.mean).abs() <= 2.0 * pooled,
                detail: format!(
                    "penalty {:.4} vs standard {:.4}: diff {:.4}, 2 pooled SE {:.4}",
                    hv_pen.mean,
                    hv.mean,
                    hv_pen.mean - hv.mean,
                    2.0 * pooled
                ),
            },
        ]
    }
}

/// Default settings of the FrozenLake comparison: 100 replicates of 200k
/// steps on the slippery 4x4 map. The policy step is raised to 0.3 so that
/// every variant levels off within the budget.
pub fn frozenlake_comparison_config() -> ExperimentConfig {
    ExperimentConfig {
        lr_policy: 0.3,
        budget: 200_000,
        replicates: 100,
        ..ExperimentConfig::default()
    }
}

/// Runs [`COMPARED`] on FrozenLake with and without a `-1` hole penalty,
/// `base` supplying every other setting. When `out` is given each run is
/// written to `out/<variant>/<algorithm>` and the pooled summary to
/// `out/summary.csv`.
pub fn frozenlake_comparison(base: &ExperimentConfig, out: Option<&Path>) -> Result<FrozenLakeComparison> {
    let EnvSpec::FrozenLake {
        map,
        slippery,
        goal_reward,
        ..
    } = &base.env
    else {
        return Err(config_err("the comparison needs a FrozenLake environment"));
    };
    let mut jobs = Vec::new();
    for (variant, penalty) in [("standard", 0.0), ("penalty", -1.0)] {
        for algorithm in COMPARED {
            let mut cfg = base.with_algorithm(algorithm);
            cfg.env = EnvSpec::FrozenLake {
                map: map.clone(),
                slippery: *slippery,
                hole_penalty: penalty,
                goal_reward: *goal_reward,
            };
            jobs.push((variant, cfg));
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(variant, cfg)| run_experiment(cfg).map(|runs| (*variant, cfg, runs)))
        .collect::<Result<_>>()?;
    let mut entries = Vec::new();
    let mut summary = Vec::new();
    for (variant, cfg, runs) in &results {
        let name = format!("{variant}/{}", cfg.algorithm);
        if let Some(dir) = out {
            write_run(&dir.join(variant).join(cfg.algorithm.as_str()), cfg, runs)?;
        }
        let logs: Vec<_> = runs.iter().map(|r| r.log.clone()).collect();
        summary.extend(super::summarize(&name, &logs)?);
        let final_returns: Vec<f64> = logs.iter().filter_map(|l| l.final_return()).collect();
        let (mean, _, _, se) = describe(&final_returns);
        entries.push(ComparisonEntry {
            variant: variant.to_string(),
            algorithm: cfg.algorithm,
            final_returns,
            mean,
            se,
        });
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        super::write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?, &summary)?;
    }
    Ok(FrozenLakeComparison { entries, summary })
}
