//! Hindsight action distributions `h(a | s_t, s_k)`: exact oracles computed by
//! forward dynamic programming, and a learned tabular model built on the
//! policy logits.

mod clip;
mod exact;
mod model;
mod transition;

pub use clip::{clip_credit, clip_credit_into, DEFAULT_CLIP_RATIO};
pub use exact::{exact_hindsight, ExactHindsight};
pub use model::{credit_prob, read_credit_model, train_credit_model, write_credit_model, CreditModel, CreditSample};
pub use transition::{exact_transition_hindsight, TransitionHindsight};
