use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    a2c_update, apply_update, deep_hca_update, entropy_update, hca_update, hca_value_update, n_step_a2c_update,
    reinforce_update, train_reward_model, train_value, CreditFunction, RewardModel, RolloutBatch, RolloutCollector,
};
use crate::diagnostics::{nll_gap, write_entropy_csv, write_nll_gap_csv, EntropyTrace, NllGapCurve};
use crate::error::{Error, Result};
use crate::hindsight::{read_credit_model, train_credit_model, write_credit_model, CreditModel};
use crate::mdp::{read_policy, sample_trajectory, write_policy, PolicyTable, TabularMdp, UpdateEstimate, ValueTable};

use super::{Algorithm, ExperimentConfig, HcaRule};

/// One evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean undiscounted return of the frozen policy under the evaluation
    /// reward.
    pub return_mean: f64,
    /// Mean policy entropy over the states visited during evaluation.
    pub entropy: f64,
    /// Credit-model NLL on the latest rollout before it was trained on it.
    pub credit_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub replicate: usize,
    pub rows: Vec<MetricsRow>,
    /// Credit NLL gap on the latest rollout at each evaluation point.
    pub nll_gap: Vec<(usize, NllGapCurve)>,
}

impl MetricsLog {
    pub fn final_return(&self) -> Option<f64> {
        self.rows.last().map(|r| r.return_mean)
    }

    pub fn steps(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.step).collect()
    }
}

/// Final state of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateRun {
    pub log: MetricsLog,
    pub policy: PolicyTable,
    pub value: ValueTable,
    pub credit: Option<CreditModel>,
}

/// Training and evaluation streams for a replicate seed. The evaluation
/// stream is disjoint from the training one.
pub fn replicate_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let train = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = ChaCha8Rng::seed_from_u64(seed);
    eval.set_stream(1);
    (train, eval)
}

/// Mean undiscounted return and mean entropy over visited states of
/// `episodes` episodes of the frozen `policy`.
pub fn evaluate<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    episodes: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut ret = 0.0;
    let mut ent = 0.0;
    let mut visits = 0usize;
    for _ in 0..episodes {
        let t = sample_trajectory(mdp, policy, rng, max_steps)?;
        ret += t.total_reward();
        for st in &t.steps {
            ent += policy.entropy(st.state);
            visits += 1;
        }
    }
    Ok((
        ret / episodes as f64,
        if visits > 0 { ent / visits as f64 } else { 0.0 },
    ))
}

struct Learner {
    policy: PolicyTable,
    value: ValueTable,
    reward: RewardModel,
    credit: Option<CreditModel>,
}

impl Learner {
    fn new(cfg: &ExperimentConfig, mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let credit = match cfg.algorithm {
            Algorithm::Hca => Some(CreditModel::without_prior(ns, na)),
            a if a.uses_credit() => Some(CreditModel::new(ns, na)),
            _ => None,
        };
        Learner {
            policy: PolicyTable::uniform(ns, na),
            value: ValueTable::zeros(ns),
            reward: RewardModel::new(ns, na),
            credit,
        }
    }

    /// Credit, value and reward-model training; returns the credit NLL of
    /// the batch before the first credit step.
    fn train_models(&mut self, cfg: &ExperimentConfig, batch: &RolloutBatch) -> Result<Option<f64>> {
        let mut nll = None;
        if let Some(model) = &mut self.credit {
            let samples = batch.credit_samples();
            for i in 0..cfg.credit_batches {
                let v = train_credit_model(model, &self.policy, &samples, cfg.lr_credit)?;
                if i == 0 {
                    nll = Some(v);
                }
            }
        }
        if cfg.algorithm.uses_value() {
            train_value(&mut self.value, batch, cfg.gamma, cfg.lr_value)?;
        }
        if matches!(cfg.algorithm, Algorithm::Hca | Algorithm::HcaPrior) && cfg.hca_rule == HcaRule::State {
            train_reward_model(&mut self.reward, batch, cfg.lr_value)?;
        }
        Ok(nll)
    }

    fn policy_update(&self, cfg: &ExperimentConfig, batch: &RolloutBatch) -> Result<UpdateEstimate> {
        let (pi, v, gamma) = (&self.policy, &self.value, cfg.gamma);
        let learned = |clip| CreditFunction::Learned {
            model: self.credit.as_ref().expect("credit algorithms own a credit model"),
            clip,
        };
        let mut u = match cfg.algorithm {
            Algorithm::Reinforce => reinforce_update(batch, pi, gamma, None)?,
            Algorithm::A2c => a2c_update(batch, pi, v, gamma, 0.0)?,
            Algorithm::NStepA2c => n_step_a2c_update(batch, pi, v, gamma, cfg.n_step)?,
            Algorithm::Hca | Algorithm::HcaPrior => match cfg.hca_rule {
                HcaRule::State => hca_update(batch, pi, &learned(None), &self.reward, v, gamma)?,
                HcaRule::Deep => deep_hca_update(batch, pi, &learned(None), gamma)?,
            },
            Algorithm::HcaValue => hca_value_update(batch, pi, v, &learned(None), gamma)?,
            Algorithm::HcaValueClip => hca_value_update(batch, pi, v, &learned(cfg.lambda_clip), gamma)?,
        };
        if cfg.entropy_coef != 0.0 {
            u += &entropy_update(batch, pi, cfg.entropy_coef)?;
        }
        Ok(u)
    }

    fn step(&mut self, cfg: &ExperimentConfig, batch: &RolloutBatch) -> Result<Option<f64>> {
        if cfg.policy_first {
            let u = self.policy_update(cfg, batch)?;
            let next = apply_update(&self.policy, &u, cfg.lr_policy, cfg.max_grad_norm)?;
            let nll = self.train_models(cfg, batch)?;
            self.policy = next;
            Ok(nll)
        } else {
            let nll = self.train_models(cfg, batch)?;
            let u = self.policy_update(cfg, batch)?;
            self.policy = apply_update(&self.policy, &u, cfg.lr_policy, cfg.max_grad_norm)?;
            Ok(nll)
        }
    }
}

/// Runs replicate `index` (seed `base_seed + index`).
pub fn run_replicate(cfg: &ExperimentConfig, index: usize) -> Result<ReplicateRun> {
    cfg.validate()?;
    let mdp = cfg.env.build(cfg.gamma)?;
    let eval_mdp = cfg.env.build_eval(cfg.gamma)?;
    let (mut rng, mut eval_rng) = replicate_rngs(cfg.base_seed.wrapping_add(index as u64));
    let mut learner = Learner::new(cfg, &mdp);
    let mut collector = RolloutCollector::new(cfg.num_envs, cfg.max_episode_steps)?;
    let mut log = MetricsLog {
        replicate: index,
        ..Default::default()
    };
    let mut steps = 0;
    let mut next_eval = 0;
    let mut last_nll = None;
    let mut last_batch: Option<RolloutBatch> = None;
    loop {
        let done = steps >= cfg.budget;
        if steps >= next_eval || done {
            let (ret, ent) = evaluate(
                &eval_mdp,
                &learner.policy,
                cfg.eval_episodes,
                cfg.max_episode_steps,
                &mut eval_rng,
            )?;
            log.rows.push(MetricsRow {
                step: steps,
                return_mean: ret,
                entropy: ent,
                credit_nll: last_nll,
            });
            if let (Some(model), Some(batch)) = (&learner.credit, &last_batch) {
                log.nll_gap
                    .push((steps, nll_gap(model, &learner.policy, batch, cfg.rollout_len)?));
            }
            while next_eval <= steps {
                next_eval += cfg.eval_every;
            }
        }
        if done {
            break;
        }
        let batch = collector.collect(&mdp, &learner.policy, cfg.rollout_len, &mut rng)?;
        steps += batch.timesteps();
        last_nll = learner.step(cfg, &batch)?;
        last_batch = Some(batch);
    }
    Ok(ReplicateRun {
        log,
        policy: learner.policy,
        value: learner.value,
        credit: learner.credit,
    })
}

/// Runs every replicate in parallel; results are in replicate order and do
/// not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateRun>> {
    cfg.validate()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|i| run_replicate(cfg, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    /// `curve` for every evaluation point, `final` for the last one.
    pub row: String,
    pub step: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean, min, max and standard error of `xs`. The error is 0 for one value.
pub fn describe(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return (min, min, max, 0.0);
    }
    let se = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    (mean, min, max, se)
}

/// Return statistics across replicates at each evaluation point, plus a
/// `final` row. All logs must share one evaluation grid.
pub fn summarize(algorithm: &str, logs: &[MetricsLog]) -> Result<Vec<SummaryRow>> {
    let first = logs
        .first()
        .ok_or_else(|| Error::Alignment("no logs to summarize".into()))?;
    let grid = first.steps();
    if grid.is_empty() {
        return Err(Error::Alignment("empty log".into()));
    }
    if let Some(bad) = logs.iter().find(|l| l.steps() != grid) {
        return Err(Error::Alignment(format!(
            "replicate {} differs from replicate {}",
            bad.replicate, first.replicate
        )));
    }
    let mut out = Vec::with_capacity(grid.len() + 1);
    for (i, &step) in grid.iter().enumerate() {
        let xs: Vec<f64> = logs.iter().map(|l| l.rows[i].return_mean).collect();
        let (mean, min, max, se) = describe(&xs);
        out.push(SummaryRow {
            algorithm: algorithm.to_string(),
            row: "curve".into(),
            step,
            mean,
            min,
            max,
            se,
            n: xs.len(),
        });
    }
    let mut last = out.last().expect("grid is non-empty").clone();
    last.row = "final".into();
    out.push(last);
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MetricsCsvRow {
    replicate: usize,
    step: usize,
    return_mean: f64,
    entropy: f64,
    credit_nll: Option<f64>,
}

pub fn write_metrics_csv<W: Write>(out: W, logs: &[MetricsLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for log in logs {
        for r in &log.rows {
            w.serialize(MetricsCsvRow {
                replicate: log.replicate,
                step: r.step,
                return_mean: r.return_mean,
                entropy: r.entropy,
                credit_nll: r.credit_nll,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads [`write_metrics_csv`] output back into per-replicate logs, in
/// order of first appearance. Gap curves are not stored and come back empty.
pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsLog>> {
    let mut logs: Vec<MetricsLog> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let r: MetricsCsvRow = row?;
        let pos = match logs.iter().position(|l| l.replicate == r.replicate) {
            Some(p) => p,
            None => {
                logs.push(MetricsLog {
                    replicate: r.replicate,
                    ..Default::default()
                });
                logs.len() - 1
            }
        };
        logs[pos].rows.push(MetricsRow {
            step: r.step,
            return_mean: r.return_mean,
            entropy: r.entropy,
            credit_nll: r.credit_nll,
        });
    }
    Ok(logs)
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean entropy across replicates per evaluation step.
pub fn mean_entropy_trace(logs: &[MetricsLog]) -> EntropyTrace {
    let mut trace = EntropyTrace::default();
    if let Some(first) = logs.first() {
        for (i, row) in first.rows.iter().enumerate() {
            let xs: Vec<f64> = logs.iter().filter_map(|l| l.rows.get(i)).map(|r| r.entropy).collect();
            trace.push(row.step, xs.iter().sum::<f64>() / xs.len() as f64);
        }
    }
    trace
}

/// Pools gap curves across replicates per step, weighting by pair counts.
pub fn pool_nll_gaps(logs: &[MetricsLog]) -> Vec<(usize, NllGapCurve)> {
    let Some(first) = logs.first() else { return Vec::new() };
    first
        .nll_gap
        .iter()
        .enumerate()
        .map(|(i, (step, c0))| {
            let dm = c0.delta_max();
            let mut sum = vec![0.0; dm];
            let mut count = vec![0usize; dm];
            for log in logs {
                if let Some((_, c)) = log.nll_gap.get(i) {
                    for d in 0..dm.min(c.delta_max()) {
                        if let Some(g) = c.gap[d] {
                            sum[d] += g * c.count[d] as f64;
                            count[d] += c.count[d];
                        }
                    }
                }
            }
            let gap = sum
                .iter()
                .zip(&count)
                .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
                .collect();
            (*step, NllGapCurve { gap, count })
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `config.txt`, `metrics.csv`, `summary.csv`, `entropy.csv`,
/// `nll_gap.csv` (credit algorithms), and per-replicate `policy_<i>.txt`
/// and `credit_<i>.txt` into `dir`. Returns the summary rows.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, runs: &[ReplicateRun]) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let logs: Vec<MetricsLog> = runs.iter().map(|r| r.log.clone()).collect();
    write_metrics_csv(create(&dir.join("metrics.csv"))?, &logs)?;
    let summary = summarize(cfg.algorithm.as_str(), &logs)?;
    write_summary_csv(create(&dir.join("summary.csv"))?, &summary)?;
    write_entropy_csv(create(&dir.join("entropy.csv"))?, &mean_entropy_trace(&logs))?;
    if cfg.algorithm.uses_credit() {
        write_nll_gap_csv(create(&dir.join("nll_gap.csv"))?, &pool_nll_gaps(&logs))?;
    }
    for run in runs {
        let i = run.log.replicate;
        let mut w = create(&dir.join(format!("policy_{i}.txt")))?;
        write_policy(&run.policy, &mut w)?;
        w.flush()?;
        if let Some(model) = &run.credit {
            let mut w = create(&dir.join(format!("credit_{i}.txt")))?;
            write_credit_model(model, &mut w)?;
            w.flush()?;
        }
    }
    Ok(summary)
}

/// Recomputes diagnostics for a run saved by [`write_run`]: the entropy
/// trace from its `metrics.csv`, and the NLL gap of each saved credit model
/// on fresh evaluation rollouts of its saved policy. Writes `entropy.csv`
/// and, when credit models exist, `nll_gap.csv` into `out`.
pub fn diagnose_run(run_dir: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_file(run_dir.join("config.txt"))?;
    let logs = read_metrics_csv(File::open(run_dir.join("metrics.csv"))?)?;
    if logs.is_empty() {
        return Err(Error::Alignment("metrics.csv has no rows".into()));
    }
    fs::create_dir_all(out)?;
    write_entropy_csv(create(&out.join("entropy.csv"))?, &mean_entropy_trace(&logs))?;
    let mdp = cfg.env.build(cfg.gamma)?;
    let mut gaps = Vec::new();
    for log in &logs {
        let i = log.replicate;
        let credit_path = run_dir.join(format!("credit_{i}.txt"));
        if !credit_path.exists() {
            continue;
        }
        let open = |p: std::path::PathBuf| File::open(p).map(std::io::BufReader::new);
        let policy = read_policy(open(run_dir.join(format!("policy_{i}.txt")))?)?;
        let model = read_credit_model(open(credit_path)?)?;
        policy.check_mdp(&mdp)?;
        let (_, mut rng) = replicate_rngs(cfg.base_seed.wrapping_add(i as u64));
        let batch = RolloutCollector::new(cfg.num_envs, cfg.max_episode_steps)?.collect(
            &mdp,
            &policy,
            cfg.rollout_len,
            &mut rng,
        )?;
        let step = log.rows.last().map_or(0, |r| r.step);
        gaps.push(MetricsLog {
            replicate: i,
            rows: Vec::new(),
            nll_gap: vec![(step, nll_gap(&model, &policy, &batch, cfg.rollout_len)?)],
        });
    }
    if !gaps.is_empty() {
        write_nll_gap_csv(create(&out.join("nll_gap.csv"))?, &pool_nll_gaps(&gaps))?;
    }
    Ok(())
}
