//! Experiment orchestration: configuration, cached stages, search, reports.

mod config;
mod pipeline;
mod report;
mod results;
mod search;

pub use config::{
    AblationAxes, DataSpec, ExperimentConfig, Finetune, Pretrain, PretrainSettings, ProbeSettings,
    SearchSettings, SearchSpace, TaskSpec, TrialConfig,
};
pub use pipeline::{content_key, evaluate_test, generate, Lab, TaskData, TrialResult, TrialStatus, CODE_TAG};
pub use report::{mean_std, report, summarize, write_ablation_markdown, write_summary, ReportOutcome, SummaryRow};
pub use results::{read_results, write_results, write_scatter, ResultRow, RESULT_COLUMNS};
pub use search::{ablation_suite, draw_configs, run_search, run_trials, select_winner, AblationOutcome, SearchOutcome};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "ULAB_OUT";
