//! Rollout collection, credit functions, update rules and the learners for
//! their auxiliary models.

mod batch;
mod credit;
mod exact;
mod learners;
mod rules;

pub use batch::{RolloutBatch, RolloutCollector, Segment};
pub use credit::{CreditFunction, CreditQuery};
pub use exact::{enumerated_state_credit_gradient, enumerated_transition_credit_gradient};
pub use learners::{apply_update, train_reward_model, train_value, RewardModel};
pub use rules::{
    a2c_update, augmented_reward, deep_hca_update, entropy_update, hca_update, hca_value_update, n_step_a2c_update,
    reinforce_update,
};
