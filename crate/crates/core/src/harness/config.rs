use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::envs::{
    chain3, delayed_penalty, make_delayed_chain, make_frozenlake, parse_map, two_arm, DelayedChainConfig,
    FrozenLakeConfig, DEFAULT_MAP,
};
use crate::error::{config_err, Error, Result};
use crate::hindsight::DEFAULT_CLIP_RATIO;
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Reinforce,
    A2c,
    NStepA2c,
    /// State-conditioned hindsight with a credit model that ignores the policy.
    Hca,
    /// As `Hca` with the credit model parametrized as a residual on the policy logits.
    HcaPrior,
    /// Augmented rewards credited through a policy-prior model.
    HcaValue,
    /// `HcaValue` with credit clipped at `lambda_clip · π`.
    HcaValueClip,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Reinforce,
        Algorithm::A2c,
        Algorithm::NStepA2c,
        Algorithm::Hca,
        Algorithm::HcaPrior,
        Algorithm::HcaValue,
        Algorithm::HcaValueClip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Reinforce => "reinforce",
            Algorithm::A2c => "a2c",
            Algorithm::NStepA2c => "n_step_a2c",
            Algorithm::Hca => "hca",
            Algorithm::HcaPrior => "hca_prior",
            Algorithm::HcaValue => "hca_value",
            Algorithm::HcaValueClip => "hca_value_clip",
        }
    }

    pub fn uses_credit(self) -> bool {
        matches!(
            self,
            Algorithm::Hca | Algorithm::HcaPrior | Algorithm::HcaValue | Algorithm::HcaValueClip
        )
    }

    pub fn uses_value(self) -> bool {
        !matches!(self, Algorithm::Reinforce)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| config_err(format!("unknown algorithm `{s}`")))
    }
}

/// Which update rule the `hca` and `hca_prior` algorithms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcaRule {
    /// Reward model for the immediate term, credit on `S_k`, value bootstrap.
    State,
    /// Credit on `S_{k+1}`, no reward model and no bootstrap.
    Deep,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    FrozenLake {
        map: String,
        slippery: bool,
        hole_penalty: f64,
        goal_reward: f64,
    },
    DelayedChain {
        decision_states: usize,
        delay: usize,
        n_actions: usize,
    },
    DelayedPenalty {
        n_actions: usize,
        penalty: f64,
    },
    TwoArm,
    Chain3,
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::FrozenLake { .. } => "frozenlake",
            EnvSpec::DelayedChain { .. } => "delayed_chain",
            EnvSpec::DelayedPenalty { .. } => "delayed_penalty",
            EnvSpec::TwoArm => "two_arm",
            EnvSpec::Chain3 => "chain3",
        }
    }

    /// The MDP the agent trains on.
    pub fn build(&self, gamma: f64) -> Result<TabularMdp> {
        match self {
            EnvSpec::FrozenLake {
                map,
                slippery,
                hole_penalty,
                goal_reward,
            } => make_frozenlake(&FrozenLakeConfig {
                map: parse_map(map),
                slippery: *slippery,
                hole_penalty: *hole_penalty,
                goal_reward: *goal_reward,
                gamma,
            }),
            EnvSpec::DelayedChain {
                decision_states,
                delay,
                n_actions,
            } => make_delayed_chain(&DelayedChainConfig {
                decision_states: *decision_states,
                delay: *delay,
                n_actions: *n_actions,
                gamma,
            }),
            EnvSpec::DelayedPenalty { n_actions, penalty } => delayed_penalty(*n_actions, *penalty, gamma),
            EnvSpec::TwoArm => two_arm().with_gamma(gamma),
            EnvSpec::Chain3 => Ok(chain3(gamma)),
        }
    }

    /// The MDP used to score evaluation returns: FrozenLake without its hole
    /// penalty, every other environment unchanged.
    pub fn build_eval(&self, gamma: f64) -> Result<TabularMdp> {
        match self {
            EnvSpec::FrozenLake { .. } => {
                let mut plain = self.clone();
                if let EnvSpec::FrozenLake { hole_penalty, .. } = &mut plain {
                    *hole_penalty = 0.0;
                }
                plain.build(gamma)
            }
            _ => self.build(gamma),
        }
    }
}

/// Everything one experiment needs. Parsed from flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algorithm: Algorithm,
    pub hca_rule: HcaRule,
    pub gamma: f64,
    /// Rollout length `T` per environment and update.
    pub rollout_len: usize,
    pub num_envs: usize,
    pub max_episode_steps: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub lr_credit: f64,
    pub entropy_coef: f64,
    pub lambda_clip: Option<f64>,
    pub n_step: usize,
    pub credit_batches: usize,
    pub max_grad_norm: f64,
    /// Policy update before the auxiliary models instead of after them.
    pub policy_first: bool,
    pub budget: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvSpec::FrozenLake {
                map: DEFAULT_MAP.to_string(),
                slippery: true,
                hole_penalty: 0.0,
                goal_reward: 1.0,
            },
            algorithm: Algorithm::HcaValue,
            hca_rule: HcaRule::State,
            gamma: 0.99,
            rollout_len: 32,
            num_envs: 8,
            max_episode_steps: 100,
            lr_policy: 0.1,
            lr_value: 0.1,
            lr_credit: 0.5,
            entropy_coef: 0.0,
            lambda_clip: None,
            n_step: 5,
            credit_batches: 8,
            max_grad_norm: 0.5,
            policy_first: false,
            budget: 200_000,
            replicates: 1,
            base_seed: 0,
            eval_every: 1000,
            eval_episodes: 100,
            out_dir: None,
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value `{v}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse {
            line,
            msg: format!("invalid boolean `{v}` for `{key}`"),
        }),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses and validates. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut env_name = "frozenlake".to_string();
        let mut map = DEFAULT_MAP.to_string();
        let mut slippery = true;
        let mut hole_penalty = 0.0;
        let mut goal_reward = 1.0;
        let mut decision_states = 4;
        let mut delay = 5;
        let mut n_actions = None;
        let mut penalty = -1.0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "env" => env_name = v.to_string(),
                "map" => map = v.to_string(),
                "slippery" => slippery = parse_bool(line, key, v)?,
                "hole_penalty" => hole_penalty = parse_num(line, key, v)?,
                "goal_reward" => goal_reward = parse_num(line, key, v)?,
                "decision_states" => decision_states = parse_num(line, key, v)?,
                "delay" => delay = parse_num(line, key, v)?,
                "n_actions" => n_actions = Some(parse_num(line, key, v)?),
                "penalty" => penalty = parse_num(line, key, v)?,
                "algorithm" => cfg.algorithm = v.parse()?,
                "hca_rule" => {
                    cfg.hca_rule = match v {
                        "state" => HcaRule::State,
                        "deep" => HcaRule::Deep,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("hca_rule must be `state` or `deep`, got `{v}`"),
                            })
                        }
                    }
                }
                "gamma" => cfg.gamma = parse_num(line, key, v)?,
                "rollout_len" => cfg.rollout_len = parse_num(line, key, v)?,
                "num_envs" => cfg.num_envs = parse_num(line, key, v)?,
                "max_episode_steps" => cfg.max_episode_steps = parse_num(line, key, v)?,
                "lr_policy" => cfg.lr_policy = parse_num(line, key, v)?,
                "lr_value" => cfg.lr_value = parse_num(line, key, v)?,
                "lr_credit" => cfg.lr_credit = parse_num(line, key, v)?,
                "entropy_coef" => cfg.entropy_coef = parse_num(line, key, v)?,
                "lambda_clip" => cfg.lambda_clip = Some(parse_num(line, key, v)?),
                "n_step" => cfg.n_step = parse_num(line, key, v)?,
                "credit_batches" => cfg.credit_batches = parse_num(line, key, v)?,
                "max_grad_norm" => cfg.max_grad_norm = parse_num(line, key, v)?,
                "order" => {
                    cfg.policy_first = match v {
                        "credit_first" => false,
                        "policy_first" => true,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("order must be `credit_first` or `policy_first`, got `{v}`"),
                            })
                        }
                    }
                }
                "budget" => cfg.budget = parse_num(line, key, v)?,
                "replicates" => cfg.replicates = parse_num(line, key, v)?,
                "base_seed" => cfg.base_seed = parse_num(line, key, v)?,
                "eval_every" => cfg.eval_every = parse_num(line, key, v)?,
                "eval_episodes" => cfg.eval_episodes = parse_num(line, key, v)?,
                "out" => cfg.out_dir = Some(PathBuf::from(v)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        cfg.env = match env_name.as_str() {
            "frozenlake" => EnvSpec::FrozenLake {
                map,
                slippery,
                hole_penalty,
                goal_reward,
            },
            "delayed_chain" => EnvSpec::DelayedChain {
                decision_states,
                delay,
                n_actions: n_actions.unwrap_or(2),
            },
            "delayed_penalty" => EnvSpec::DelayedPenalty {
                n_actions: n_actions.unwrap_or(3),
                penalty,
            },
            "two_arm" => EnvSpec::TwoArm,
            "chain3" => EnvSpec::Chain3,
            other => return Err(config_err(format!("unknown env `{other}`"))),
        };
        if cfg.algorithm == Algorithm::HcaValueClip && cfg.lambda_clip.is_none() {
            cfg.lambda_clip = Some(DEFAULT_CLIP_RATIO);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects invalid field combinations before any compute.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rollout_len", self.rollout_len),
            ("num_envs", self.num_envs),
            ("max_episode_steps", self.max_episode_steps),
            ("n_step", self.n_step),
            ("replicates", self.replicates),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("budget", self.budget),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(format!("`{name}` must be positive")));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config_err(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        for (name, lr) in [
            ("lr_policy", self.lr_policy),
            ("lr_value", self.lr_value),
            ("lr_credit", self.lr_credit),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(config_err(format!("`{name}` must be positive")));
            }
        }
        if self.lr_value > 1.0 {
            return Err(config_err("`lr_value` must not exceed 1"));
        }
        if !self.entropy_coef.is_finite() || !self.max_grad_norm.is_finite() {
            return Err(config_err("entropy_coef and max_grad_norm must be finite"));
        }
        match (self.algorithm, self.lambda_clip) {
            (Algorithm::HcaValueClip, Some(l)) if !(l >= 1.0) => {
                return Err(config_err(format!("lambda_clip {l} must be at least 1")))
            }
            (Algorithm::HcaValueClip, None) => return Err(config_err("hca_value_clip needs lambda_clip")),
            (a, Some(_)) if a != Algorithm::HcaValueClip => {
                return Err(config_err(format!(
                    "lambda_clip only applies to hca_value_clip, not {a}"
                )))
            }
            _ => {}
        }
        if self.algorithm.uses_credit() && self.credit_batches == 0 {
            return Err(config_err("credit algorithms need credit_batches ≥ 1"));
        }
        if self.n_step > self.rollout_len {
            return Err(config_err("n_step must not exceed rollout_len"));
        }
        self.env.build(self.gamma)?;
        Ok(())
    }

    /// Same experiment with another algorithm, adjusting `lambda_clip`.
    pub fn with_algorithm(&self, algorithm: Algorithm) -> Self {
        let mut out = self.clone();
        out.algorithm = algorithm;
        out.lambda_clip = match algorithm {
            Algorithm::HcaValueClip => self.lambda_clip.or(Some(DEFAULT_CLIP_RATIO)),
            _ => None,
        };
        out
    }

    /// Writes the config back in the text format.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("env = {}", self.env.name())];
        match &self.env {
            EnvSpec::FrozenLake {
                map,
                slippery,
                hole_penalty,
                goal_reward,
            } => {
                lines.push(format!("map = {map}"));
                lines.push(format!("slippery = {slippery}"));
                lines.push(format!("hole_penalty = {hole_penalty}"));
                lines.push(format!("goal_reward = {goal_reward}"));
            }
            EnvSpec::DelayedChain {
                decision_states,
                delay,
                n_actions,
            } => {
                lines.push(format!("decision_states = {decision_states}"));
                lines.push(format!("delay = {delay}"));
                lines.push(format!("n_actions = {n_actions}"));
            }
            EnvSpec::DelayedPenalty { n_actions, penalty } => {
                lines.push(format!("n_actions = {n_actions}"));
                lines.push(format!("penalty = {penalty}"));
            }
            EnvSpec::TwoArm | EnvSpec::Chain3 => {}
        }
        lines.push(format!("algorithm = {}", self.algorithm));
        lines.push(format!(
            "hca_rule = {}",
            match self.hca_rule {
                HcaRule::State => "state",
                HcaRule::Deep => "deep",
            }
        ));
        lines.push(format!("gamma = {}", self.gamma));
        lines.push(format!("rollout_len = {}", self.rollout_len));
        lines.push(format!("num_envs = {}", self.num_envs));
        lines.push(format!("max_episode_steps = {}", self.max_episode_steps));
        lines.push(format!("lr_policy = {}", self.lr_policy));
        lines.push(format!("lr_value = {}", self.lr_value));
        lines.push(format!("lr_credit = {}", self.lr_credit));
        lines.push(format!("entropy_coef = {}", self.entropy_coef));
        if let Some(l) = self.lambda_clip {
            lines.push(format!("lambda_clip = {l}"));
        }
        lines.push(format!("n_step = {}", self.n_step));
        lines.push(format!("credit_batches = {}", self.credit_batches));
        lines.push(format!("max_grad_norm = {}", self.max_grad_norm));
        lines.push(format!(
            "order = {}",
            if self.policy_first {
                "policy_first"
            } else {
                "credit_first"
            }
        ));
        lines.push(format!("budget = {}", self.budget));
        lines.push(format!("replicates = {}", self.replicates));
        lines.push(format!("base_seed = {}", self.base_seed));
        lines.push(format!("eval_every = {}", self.eval_every));
        lines.push(format!("eval_episodes = {}", self.eval_episodes));
        if let Some(out) = &self.out_dir {
            lines.push(format!("out = {}", out.display()));
        }
        lines.join("\n") + "\n"
    }
}
