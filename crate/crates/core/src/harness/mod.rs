//! Experiment plumbing: run configuration, robustness probe, contribution
//! maps, modality comparison and the gradient-check suite.

mod compare;
mod config;
mod contrib;
mod gradsuite;
mod probe;

pub use compare::{compare_csv, compare_modalities, run_variant, CompareRow, COMPARE_HEADER};
pub use config::{parse_config, parse_config_with, CameraPose, RunConfig};
pub use contrib::{contrib_csv, contrib_report, ContribRow, CONTRIB_HEADER};
pub use gradsuite::{grad_check_suite, SuiteLine, LOSS_THRESHOLD, OP_THRESHOLD};
pub use probe::{
    check_agent_matches, load_agent, pixel_correspondence, probe_robustness, Correspondence, RobustnessReport, RobustnessRow,
    CORRESPONDENCE_HEADER, ROBUSTNESS_HEADER,
};

#[cfg(test)]
mod tests;
