//! Configured, seeded experiments: training loops, metric logs, summaries
//! and the canned comparisons and checks the CLI exposes.

mod config;
mod experiments;
mod run;
mod verify;

pub use config::{Algorithm, EnvSpec, ExperimentConfig, HcaRule};
pub use experiments::{
    collapse_run, delayed_chain_nll_gap, frozenlake_comparison, frozenlake_comparison_config, CheckResult,
    CollapseConfig, CollapseRun, ComparisonEntry, FrozenLakeComparison, NllGapConfig, COMPARED,
};
pub use run::{
    describe, diagnose_run, evaluate, mean_entropy_trace, pool_nll_gaps, read_metrics_csv, replicate_rngs,
    run_experiment, run_replicate, summarize, write_metrics_csv, write_run, write_summary_csv, MetricsLog, MetricsRow,
    ReplicateRun, SummaryRow,
};
pub use verify::{
    check_a2c_identity, check_collapse, check_credit_model, check_monte_carlo, check_n_step_identity,
    check_nll_gap_structure, check_state_credit_enumeration, check_telescoping_and_shaping,
    check_transition_credit_enumeration, monte_carlo_cases, verify_suite,
};
