//! Scenario scripts: parsing, execution, reports and golden transcripts.

mod golden;
mod report;
mod run;
pub mod script;

pub use golden::{compare_text, compare_transcript, normalize, Comparison, GoldenError};
pub use report::Report;
pub use run::{
    run_many, run_scenario, run_script, run_script_with_os, RunOptions, RunOutcome, StepFailure, Transcript,
};
pub use script::{ParseError, Script, Step};
