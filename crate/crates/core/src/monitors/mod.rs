//! Trace recording, unsafe-control-action detection and outcome
//! classification against a golden run.

mod classify;
mod trace;
mod uca;

pub use classify::{
    classify_outcome, compare_golden, format_labels, Classification, DeviationStats, OutcomeLabel,
    PhaseOutcome, PhaseStats, Thresholds,
};
pub use trace::{Trace, TraceEvent, TraceRow, TRACE_CSV_VERSION};
pub use uca::{evaluate_uca, UcaContext, UcaKind, UcaRecord};
