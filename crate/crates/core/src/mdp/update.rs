use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};

/// Gradient with respect to policy logits, `grad[s][a]`, plus the number of
/// timesteps that contributed per state.
///
/// Estimates from disjoint batches add: the estimate of a concatenated batch
/// is the sum of the per-batch estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateEstimate {
    n_states: usize,
    n_actions: usize,
    pub grad: Vec<f64>,
    pub weight: Vec<f64>,
}

impl UpdateEstimate {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        UpdateEstimate {
            n_states,
            n_actions,
            grad: vec![0.0; n_states * n_actions],
            weight: vec![0.0; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.grad[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.grad[s * self.n_actions + a]
    }

    /// Adds `scale · ∇_θ[s] Σ_a w_a log π(a|s)`, which is
    /// `scale · (w_b - π_b Σ_a w_a)` on logit `b`.
    #[inline]
    pub(crate) fn add_score(&mut self, s: usize, probs: &[f64], weights: &[f64], scale: f64) {
        let total: f64 = weights.iter().sum();
        let row = &mut self.grad[s * self.n_actions..(s + 1) * self.n_actions];
        for ((g, &w), &p) in row.iter_mut().zip(weights).zip(probs) {
            *g += scale * (w - p * total);
        }
    }

    /// Adds `scale · ∇_θ[s] log π(a|s)`.
    #[inline]
    pub(crate) fn add_log_prob(&mut self, s: usize, probs: &[f64], a: usize, scale: f64) {
        let row = &mut self.grad[s * self.n_actions..(s + 1) * self.n_actions];
        for (b, (g, &p)) in row.iter_mut().zip(probs).enumerate() {
            let ind = if b == a { 1.0 } else { 0.0 };
            *g += scale * (ind - p);
        }
    }

    #[inline]
    pub(crate) fn add_row(&mut self, s: usize, values: &[f64], scale: f64) {
        let row = &mut self.grad[s * self.n_actions..(s + 1) * self.n_actions];
        for (g, v) in row.iter_mut().zip(values) {
            *g += scale * v;
        }
    }

    pub(crate) fn count(&mut self, s: usize) {
        self.weight[s] += 1.0;
    }

    pub fn scale(&mut self, k: f64) {
        self.grad.iter_mut().for_each(|g| *g *= k);
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.scale(k);
        self
    }

    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn timesteps(&self) -> f64 {
        self.weight.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.grad.iter().all(|g| g.is_finite())
    }

    pub fn check_shape(&self, other: &UpdateEstimate) -> Result<()> {
        if self.n_states != other.n_states {
            return Err(Error::DimensionMismatch {
                what: "update states",
                expected: self.n_states,
                got: other.n_states,
            });
        }
        if self.n_actions != other.n_actions {
            return Err(Error::DimensionMismatch {
                what: "update actions",
                expected: self.n_actions,
                got: other.n_actions,
            });
        }
        Ok(())
    }

    /// Largest componentwise `|self - other|` over the gradient.
    pub fn max_abs_diff(&self, other: &UpdateEstimate) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .grad
            .iter()
            .zip(&other.grad)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

impl AddAssign<&UpdateEstimate> for UpdateEstimate {
    fn add_assign(&mut self, rhs: &UpdateEstimate) {
        assert_eq!(
            (self.n_states, self.n_actions),
            (rhs.n_states, rhs.n_actions),
            "adding updates of different shape"
        );
        for (a, b) in self.grad.iter_mut().zip(&rhs.grad) {
            *a += b;
        }
        for (a, b) in self.weight.iter_mut().zip(&rhs.weight) {
            *a += b;
        }
    }
}

impl Add<&UpdateEstimate> for UpdateEstimate {
    type Output = UpdateEstimate;
    fn add(mut self, rhs: &UpdateEstimate) -> UpdateEstimate {
        self += rhs;
        self
    }
}
