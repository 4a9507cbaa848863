use std::io::{BufRead, Write};

use crate::error::{config_err, Error, Result};
use crate::mdp::PolicyTable;

/// Tabular hindsight classifier `h(a | s, s') ∝ exp(g[s][s'][a] + log π(a | s))`.
///
/// With `use_prior` off the policy term is dropped and `h` is a plain
/// softmax of the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditModel {
    n_states: usize,
    n_actions: usize,
    residual: Vec<f64>,
    use_prior: bool,
}

/// One training example: action `action` was taken in `state`, and `future`
/// was observed later in the same rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CreditSample {
    pub state: usize,
    pub action: usize,
    pub future: usize,
}

impl CreditModel {
    /// Zero residual on top of the policy prior.
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        CreditModel {
            n_states,
            n_actions,
            residual: vec![0.0; n_states * n_states * n_actions],
            use_prior: true,
        }
    }

    /// Zero residual and no prior: starts uniform.
    pub fn without_prior(n_states: usize, n_actions: usize) -> Self {
        CreditModel {
            use_prior: false,
            ..Self::new(n_states, n_actions)
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn uses_prior(&self) -> bool {
        self.use_prior
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_row(&self, s: usize, future: usize) -> &[f64] {
        let i = (s * self.n_states + future) * self.n_actions;
        &self.residual[i..i + self.n_actions]
    }

    pub fn residual_row_mut(&mut self, s: usize, future: usize) -> &mut [f64] {
        let i = (s * self.n_states + future) * self.n_actions;
        &mut self.residual[i..i + self.n_actions]
    }

    pub fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if (policy.n_states(), policy.n_actions()) != (self.n_states, self.n_actions) {
            return Err(Error::DimensionMismatch {
                what: "credit model vs policy",
                expected: self.n_states * self.n_actions,
                got: policy.n_states() * policy.n_actions(),
            });
        }
        Ok(())
    }

    /// Writes `h(· | s, future)` into the first `n_actions` slots of `out`.
    pub fn prob_into(&self, policy: &PolicyTable, s: usize, future: usize, out: &mut [f64]) {
        let g = self.residual_row(s, future);
        if self.use_prior {
            for ((o, &gi), &l) in out.iter_mut().zip(g).zip(policy.row(s)) {
                *o = gi + l;
            }
        } else {
            out[..self.n_actions].copy_from_slice(g);
        }
        softmax_in_place(&mut out[..self.n_actions]);
    }

    pub fn prob(&self, policy: &PolicyTable, s: usize, future: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        self.prob_into(policy, s, future, &mut out);
        out
    }

    fn check_sample(&self, x: &CreditSample) -> Result<()> {
        for (v, len) in [
            (x.state, self.n_states),
            (x.future, self.n_states),
            (x.action, self.n_actions),
        ] {
            if v >= len {
                return Err(Error::IndexOutOfBounds { index: v, len });
            }
        }
        Ok(())
    }

    /// Mean negative log-likelihood of the sampled actions.
    pub fn mean_nll(&self, policy: &PolicyTable, batch: &[CreditSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(config_err("credit batch is empty"));
        }
        self.check_policy(policy)?;
        let mut h = vec![0.0; self.n_actions];
        let mut total = 0.0;
        for x in batch {
            self.check_sample(x)?;
            self.prob_into(policy, x.state, x.future, &mut h);
            total -= h[x.action].ln();
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of the batch-mean NLL with respect to the residual table. The
    /// policy logits are held fixed.
    pub fn nll_gradient(&self, policy: &PolicyTable, batch: &[CreditSample]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(config_err("credit batch is empty"));
        }
        self.check_policy(policy)?;
        let na = self.n_actions;
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.residual.len()];
        let mut h = vec![0.0; na];
        for x in batch {
            self.check_sample(x)?;
            self.prob_into(policy, x.state, x.future, &mut h);
            let i = (x.state * self.n_states + x.future) * na;
            for (a, g) in grad[i..i + na].iter_mut().enumerate() {
                let ind = if a == x.action { 1.0 } else { 0.0 };
                *g += (h[a] - ind) / n;
            }
        }
        Ok(grad)
    }
}

fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    x.iter_mut().for_each(|v| *v /= z);
}

/// Softmax of residual plus policy logits.
pub fn credit_prob(model: &CreditModel, policy: &PolicyTable, s_t: usize, s_k: usize) -> Vec<f64> {
    model.prob(policy, s_t, s_k)
}

/// One cross-entropy step on the residual; returns the pre-step mean NLL.
///
/// Each `(state, future)` row seen in the batch moves by
/// `lr · (empirical action frequency − h)`, i.e. the gradient of that row's
/// own mean NLL. Rows therefore learn at the same rate however often they
/// appear, and a row stops moving exactly when `h` equals its empirical
/// frequencies.
pub fn train_credit_model(
    model: &mut CreditModel,
    policy: &PolicyTable,
    batch: &[CreditSample],
    lr: f64,
) -> Result<f64> {
    if !(lr > 0.0) {
        return Err(config_err("credit learning rate must be positive"));
    }
    let nll = model.mean_nll(policy, batch)?;
    let (ns, na) = (model.n_states, model.n_actions);
    let mut counts = vec![0.0; ns * ns * na];
    for x in batch {
        counts[(x.state * ns + x.future) * na + x.action] += 1.0;
    }
    let mut h = vec![0.0; na];
    for (row, c) in counts.chunks(na).enumerate() {
        let n: f64 = c.iter().sum();
        if n == 0.0 {
            continue;
        }
        let (s, future) = (row / ns, row % ns);
        model.prob_into(policy, s, future, &mut h);
        for ((g, &ci), &hi) in model.residual_row_mut(s, future).iter_mut().zip(c).zip(&h) {
            *g += lr * (ci / n - hi);
        }
    }
    Ok(nll)
}

pub fn write_credit_model<W: Write>(model: &CreditModel, mut out: W) -> Result<()> {
    writeln!(out, "n_states {}", model.n_states)?;
    writeln!(out, "n_actions {}", model.n_actions)?;
    writeln!(out, "prior {}", model.use_prior)?;
    for s in 0..model.n_states {
        for y in 0..model.n_states {
            let row = model.residual_row(s, y);
            if row.iter().any(|&g| g != 0.0) {
                let vals: Vec<String> = row.iter().map(|g| format!("{g}")).collect();
                writeln!(out, "residual {s} {y} {}", vals.join(" "))?;
            }
        }
    }
    Ok(())
}

/// Reads the format of [`write_credit_model`]; omitted rows are zero.
pub fn read_credit_model<R: BufRead>(input: R) -> Result<CreditModel> {
    let err = |line: usize, msg: String| Error::Parse { line, msg };
    let mut ns = None;
    let mut na = None;
    let mut prior = None;
    let mut model: Option<CreditModel> = None;
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        let raw = raw?;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let num = |t: &str| t.parse::<usize>().map_err(|_| err(line, format!("bad integer '{t}'")));
        match toks[0] {
            "n_states" if toks.len() == 2 => ns = Some(num(toks[1])?),
            "n_actions" if toks.len() == 2 => na = Some(num(toks[1])?),
            "prior" if toks.len() == 2 => {
                prior = Some(
                    toks[1]
                        .parse::<bool>()
                        .map_err(|_| err(line, format!("bad flag '{}'", toks[1])))?,
                )
            }
            "residual" => {
                let (Some(ns), Some(na), Some(prior)) = (ns, na, prior) else {
                    return Err(err(line, "header must precede residual rows".into()));
                };
                let m = model.get_or_insert_with(|| {
                    let mut m = CreditModel::new(ns, na);
                    m.use_prior = prior;
                    m
                });
                if toks.len() != na + 3 {
                    return Err(err(line, format!("expected {} values", na)));
                }
                let (s, y) = (num(toks[1])?, num(toks[2])?);
                if s >= ns || y >= ns {
                    return Err(err(line, format!("row ({s}, {y}) out of range")));
                }
                for (g, t) in m.residual_row_mut(s, y).iter_mut().zip(&toks[3..]) {
                    *g = t.parse().map_err(|_| err(line, format!("bad float '{t}'")))?;
                }
            }
            other => return Err(err(line, format!("unexpected '{other}'"))),
        }
    }
    match (model, ns, na, prior) {
        (Some(m), ..) => Ok(m),
        (None, Some(ns), Some(na), Some(prior)) => {
            let mut m = CreditModel::new(ns, na);
            m.use_prior = prior;
            Ok(m)
        }
        _ => Err(err(0, "incomplete credit model header".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy() -> PolicyTable {
        PolicyTable::from_logits(3, 2, vec![0.3, -0.4, 1.2, 0.1, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_residual_reproduces_policy() {
        let pi = policy();
        let m = CreditModel::new(3, 2);
        for s in 0..3 {
            for y in 0..3 {
                for (h, p) in credit_prob(&m, &pi, s, y).iter().zip(pi.probs(s)) {
                    assert!((h - p).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn large_residual_is_nearly_a_point_mass() {
        let pi = PolicyTable::from_logits(1, 3, vec![4.0, 0.0, -4.0]).unwrap();
        let mut m = CreditModel::new(1, 3);
        m.residual_row_mut(0, 0)[2] = 50.0;
        assert!(m.prob(&pi, 0, 0)[2] > 1.0 - 1e-15);
    }

    #[test]
    fn zero_residual_nll_is_policy_nll() {
        let pi = policy();
        let m = CreditModel::new(3, 2);
        let batch = [
            CreditSample {
                state: 0,
                action: 1,
                future: 2,
            },
            CreditSample {
                state: 1,
                action: 0,
                future: 2,
            },
        ];
        let expect = -(pi.log_probs(0)[1] + pi.log_probs(1)[0]) / 2.0;
        assert!((m.mean_nll(&pi, &batch).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn training_on_separable_pairs_drives_nll_down() {
        let pi = PolicyTable::uniform(3, 2);
        let mut m = CreditModel::new(3, 2);
        let batch = vec![
            CreditSample {
                state: 0,
                action: 1,
                future: 2
            };
            8
        ];
        for _ in 0..200 {
            train_credit_model(&mut m, &pi, &batch, 0.5).unwrap();
        }
        assert!(m.mean_nll(&pi, &batch).unwrap() < 0.01);
        assert!(m.prob(&pi, 0, 2)[1] > 0.99);
    }

    #[test]
    fn empty_batch_and_bad_lr_are_errors() {
        let pi = policy();
        let mut m = CreditModel::new(3, 2);
        assert!(train_credit_model(&mut m, &pi, &[], 0.1).is_err());
        let b = [CreditSample {
            state: 0,
            action: 0,
            future: 0,
        }];
        assert!(train_credit_model(&mut m, &pi, &b, 0.0).is_err());
        assert!(train_credit_model(
            &mut m,
            &pi,
            &[CreditSample {
                state: 5,
                action: 0,
                future: 0
            }],
            0.1
        )
        .is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut m = CreditModel::without_prior(3, 2);
        m.residual_row_mut(1, 2).copy_from_slice(&[0.1, -7.25]);
        let mut buf = Vec::new();
        write_credit_model(&m, &mut buf).unwrap();
        assert_eq!(read_credit_model(buf.as_slice()).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gradient_vanishes_at_empirical_frequencies(counts in prop::collection::vec(1usize..6, 3)) {
            // One row with action counts `counts`; set h to the frequencies.
            let pi = PolicyTable::from_logits(2, 3, vec![0.5, -1.0, 0.2, 0.0, 0.0, 0.0]).unwrap();
            let n: usize = counts.iter().sum();
            let mut batch = Vec::new();
            for (a, &c) in counts.iter().enumerate() {
                batch.extend(std::iter::repeat(CreditSample { state: 0, action: a, future: 1 }).take(c));
            }
            let mut m = CreditModel::new(2, 3);
            for a in 0..3 {
                m.residual_row_mut(0, 1)[a] = (counts[a] as f64 / n as f64).ln() - pi.log_probs(0)[a];
            }
            let g = m.nll_gradient(&pi, &batch).unwrap();
            prop_assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-6);
            // and away from it the gradient is non-zero
            m.residual_row_mut(0, 1)[0] += 0.5;
            let g = m.nll_gradient(&pi, &batch).unwrap();
            prop_assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6);
        }

        #[test]
        fn rows_sum_to_one(g in prop::collection::vec(-20.0f64..20.0, 3)) {
            let pi = PolicyTable::from_logits(1, 3, vec![2.0, -3.0, 0.1]).unwrap();
            let mut m = CreditModel::new(1, 3);
            m.residual_row_mut(0, 0).copy_from_slice(&g);
            let h = m.prob(&pi, 0, 0);
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
