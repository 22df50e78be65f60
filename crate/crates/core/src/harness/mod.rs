//! Task files, demonstration sampling, evaluation loops, the permutation
//! study, ROUGE and report output.

mod config;
mod eval;
mod permutation;
mod report;
pub mod rouge;
mod sampling;
mod task;

pub use config::{Harness, HarnessConfig, PlanConfig};
pub use eval::{
    check_compatible, choose_option, generate_all, make_instance, plan_examples, prepare_inputs,
    run_eval, EvalSettings, Generation, PreparedInputs, DEFAULT_MAX_NEW_TOKENS,
};
pub use permutation::{enumerate_orderings, permutation_study, Orderings, MAX_ALL_ORDERINGS_K};
pub use report::{
    emit_report, Aggregate, EvalReport, ExampleRecord, OrderingRecord, Outcome, PermutationStats,
    ReportFormat, CSV_HEADER,
};
pub use rouge::{rouge_l, rouge_n, RougeScore};
pub use sampling::{example_stream_seed, sample_shots, ShotSetting};
pub use task::{load_task, parse_task, Example, Target, Task, TaskKind};
