//! Training loop, model selection, leave-one-out and search drivers, and
//! result files.

mod config;
mod drivers;
mod eval;
mod results;
mod styles;
mod train;

pub use config::{ExperimentConfig, Method, TrainingPlan};
pub use drivers::{
    ablate_branch_points, ablation_configs, hyperparameter_search, leave_one_out_configs, run_leave_one_out,
    run_trials, select_best, SearchOutcome, SearchSpace, SelectionInput, Study, DEFAULT_SEARCH_TRIALS,
};
pub use eval::{accuracy_from_logits, evaluate, predict};
pub use results::{mean_std, write_outputs, write_table, Cell, MethodSummary, ResultRow, ResultTable, Summary};
pub use styles::{collect_style_dump, DUMP_AUGMENTERS};
pub use train::{
    select_checkpoint, train, train_with, DomainAccuracy, LossPoint, TrainOptions, TrainOutcome, TrialResult,
    ValidationRecord,
};
