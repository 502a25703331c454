//! Schedules, integration of the decoding path `x(t)`, and threshold search.

mod integrate;
mod schedule;
mod threshold;

use thiserror::Error;

use crate::evolution::EvolutionError;

pub use integrate::{
    freeze_exhausted_types, integrate_path, OutputGrid, PathOutcome, PathResult, StepControl,
};
pub use schedule::{natural_gamma, Schedule, ScheduleKind, DEFAULT_TAU_POS};
pub use threshold::{
    compare_schedules, find_threshold, ScheduleComparison, ThresholdOptions, ThresholdResult,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error(
        "natural schedule is indeterminate: total degree-one fraction {total:e} is not positive"
    )]
    Indeterminate { total: f64 },
    #[error("schedule `{0}` is unreasonable; enable it explicitly")]
    Unreasonable(String),
    #[error("step size underflow at t = {t} (h = {h:e}, x = {x:?})")]
    StepUnderflow { t: f64, h: f64, x: Vec<f64> },
    #[error("invalid step control: {0}")]
    BadControl(String),
    #[error("invalid channel direction: {0}")]
    BadDirection(String),
    #[error(
        "decoding success is not monotone in eps over the coarse sweep ({changes} sign changes)"
    )]
    NonMonotone {
        changes: usize,
        sweep: Vec<(f64, bool)>,
    },
}
