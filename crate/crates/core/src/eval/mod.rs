mod metrics;
mod run;

pub use metrics::{
    build_transition_table, erip, ersp, expected_scores, match_scores, rip, rsp, TransitionTable, TransitionTables,
};
pub use run::{
    format_table, head_accuracy, run_eval, turn_seed, EvalConfig, EvalReport, TableFormat, TurnRecord, TurnScores,
};
