//! Cross-validated experiments: per-fold selection sweeps, best-model
//! choice, shortlist aggregation, and predictor screening.

mod config;
mod experiment;
mod screening;
mod shortlist;

pub use config::{parse_feature, AlignMode, ExperimentConfig, Method, ScreeningConfig, StandardizeScope, TargetSpec};
pub use experiment::{
    abacus_csv, abacus_from_reports, fold_reports_csv, prepare, quantile, run_discovery, run_experiment, run_fold,
    run_prepared, select_best, ships_plus_csv, shortlist_csv, summary_csv, target_context, DiscoveryRun,
    ExperimentResult, FoldEntry, FoldReport, GridPoint, Prepared, ShortlistResult, SummaryRow, TargetContext,
    FOLD_REPORT_HEADER,
};
pub use screening::{screen_predictors, CandidateScreen, ScreeningReport, SCREENING_HEADER, SCREENING_INTERVAL_HEADER};
pub use shortlist::{aggregate_shortlist, assemble_ships_plus, Shortlist, ShortlistMember};
