use rayon::prelude::*;
use serde::Serialize;

use super::integrate::{integrate_path, OutputGrid, StepControl};
use super::schedule::Schedule;
use super::PathError;
use crate::evolution::{ErasureVector, Evolution};

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOptions {
    /// Final bracket width.
    pub tol: f64,
    /// Per-channel scaling of the scalar `eps`; all ones when `None`.
    pub direction: Option<Vec<f64>>,
    /// Points in the coarse monotonicity sweep over `[0, 1]`.
    pub sweep_points: usize,
    pub control: StepControl,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            direction: None,
            sweep_points: 32,
            control: StepControl::default().with_grid(OutputGrid::EndpointsOnly),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub eps_star: f64,
    /// Largest known success and smallest known failure.
    pub bracket: (f64, f64),
    pub schedule_used: Schedule,
    pub sweep: Vec<(f64, bool)>,
}

fn direction(evo: &Evolution, opts: &ThresholdOptions) -> Result<Vec<f64>, PathError> {
    let nr = evo.spec().nr();
    let dir = opts.direction.clone().unwrap_or_else(|| vec![1.0; nr]);
    if dir.len() != nr {
        return Err(PathError::BadDirection(format!(
            "expected {nr} entries, got {}",
            dir.len()
        )));
    }
    if dir.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(PathError::BadDirection("entries must lie in [0, 1]".into()));
    }
    Ok(dir)
}

fn decodes(
    evo: &Evolution,
    schedule: &Schedule,
    dir: &[f64],
    eps: f64,
    control: &StepControl,
) -> Result<bool, PathError> {
    let e = ErasureVector::along(dir, eps)?;
    Ok(integrate_path(evo, &e, schedule, control)?.completed())
}

/// Largest scalar `eps` for which the mean path under `schedule` completes.
pub fn find_threshold(
    evo: &Evolution,
    schedule: &Schedule,
    opts: &ThresholdOptions,
) -> Result<ThresholdResult, PathError> {
    let dir = direction(evo, opts)?;
    if !(opts.tol > 0.0) {
        return Err(PathError::BadControl(
            "threshold tolerance must be positive".into(),
        ));
    }
    if opts.sweep_points < 2 {
        return Err(PathError::BadControl(
            "the sweep needs at least two points".into(),
        ));
    }
    let n = opts.sweep_points;
    let sweep = (0..n)
        .into_par_iter()
        .map(|k| {
            let eps = k as f64 / (n - 1) as f64;
            decodes(evo, schedule, &dir, eps, &opts.control).map(|ok| (eps, ok))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let changes = sweep.windows(2).filter(|w| w[0].1 != w[1].1).count();
    let done = |eps_star: f64, bracket, sweep| {
        Ok(ThresholdResult {
            eps_star,
            bracket,
            schedule_used: schedule.clone(),
            sweep,
        })
    };
    match changes {
        0 if sweep[0].1 => return done(1.0, (1.0, 1.0), sweep),
        0 => return done(0.0, (0.0, 0.0), sweep),
        1 if sweep[0].1 => {}
        _ => return Err(PathError::NonMonotone { changes, sweep }),
    }
    let k = sweep.iter().position(|(_, ok)| !ok).unwrap();
    let (mut lo, mut hi) = (sweep[k - 1].0, sweep[k].0);
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        if decodes(evo, schedule, &dir, mid, &opts.control)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    done(0.5 * (lo + hi), (lo, hi), sweep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleComparison {
    pub results: Vec<ThresholdResult>,
    /// Largest difference between thresholds of reasonable schedules.
    pub spread: f64,
    /// The spread is within twice the bisection tolerance.
    pub agree: bool,
}

/// Thresholds of several schedules on one ensemble, computed in parallel.
pub fn compare_schedules(
    evo: &Evolution,
    schedules: &[Schedule],
    opts: &ThresholdOptions,
) -> Result<ScheduleComparison, PathError> {
    let results = schedules
        .par_iter()
        .map(|s| find_threshold(evo, s, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let reasonable: Vec<f64> = results
        .iter()
        .filter(|r| r.schedule_used.is_reasonable())
        .map(|r| r.eps_star)
        .collect();
    let spread = if reasonable.is_empty() {
        0.0
    } else {
        reasonable.iter().copied().fold(f64::MIN, f64::max)
            - reasonable.iter().copied().fold(f64::MAX, f64::min)
    };
    Ok(ScheduleComparison {
        results,
        spread,
        agree: spread <= 2.0 * opts.tol,
    })
}
