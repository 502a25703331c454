use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::schedule::{Schedule, ScheduleKind};
use super::PathError;
use crate::evolution::{ErasureVector, Evolution, EvolutionPoint};

/// Sliding supplies are held at `-SLIDE_DEPTH * nu(eps, x)`, just below zero
/// so that RK stage points stay on the dry side of the availability cut.
const SLIDE_DEPTH: f64 = 1e-6;

/// Where trajectory snapshots are recorded. The start and end of the path
/// are always recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutputGrid {
    /// `n` equal intervals of `[0, t_f]`.
    Resolution(usize),
    /// Every multiple of the given step up to `t_f`.
    Uniform(f64),
    /// The given times (values outside `(0, t_f]` are ignored).
    Times(Vec<f64>),
    EndpointsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    /// Local error tolerance per step on `x` (step-doubling estimate).
    pub tol: f64,
    /// Largest step as a fraction of `t_f`.
    pub max_step_frac: f64,
    /// Smallest step as a fraction of `t_f` before giving up.
    pub min_step_frac: f64,
    /// The path completes once `nu(eps, x) <= exit_tol * nu(eps, 1)`.
    pub exit_tol: f64,
    /// Stall as soon as any live edge type runs out of degree-one checks.
    pub strict_per_type: bool,
    pub allow_unreasonable: bool,
    pub grid: OutputGrid,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_step_frac: 1e-3,
            min_step_frac: 1e-15,
            exit_tol: 1e-6,
            strict_per_type: false,
            allow_unreasonable: false,
            grid: OutputGrid::Resolution(512),
            max_steps: 10_000_000,
        }
    }
}

impl StepControl {
    pub fn with_grid(mut self, grid: OutputGrid) -> Self {
        self.grid = grid;
        self
    }

    fn validate(&self) -> Result<(), PathError> {
        let bad = |m: &str| Err(PathError::BadControl(m.into()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.max_step_frac > 0.0 && self.max_step_frac <= 1.0) {
            return bad("max_step_frac must be in (0, 1]");
        }
        if !(self.min_step_frac > 0.0 && self.min_step_frac < self.max_step_frac) {
            return bad("min_step_frac must be in (0, max_step_frac)");
        }
        if !(self.exit_tol > 0.0 && self.exit_tol < 1.0) {
            return bad("exit_tol must be in (0, 1)");
        }
        match &self.grid {
            OutputGrid::Resolution(0) => bad("resolution must be at least 1"),
            OutputGrid::Uniform(dt) if !(*dt > 0.0) => bad("output step must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PathOutcome {
    Completed { t_end: f64 },
    Stalled { t_stall: f64, x_stall: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub trajectory: Vec<EvolutionPoint>,
    pub outcome: PathOutcome,
    /// Expected completion time `nu(eps, 1) / dv_avg`.
    pub t_f: f64,
    /// `nu(eps, 1)`.
    pub nu0: f64,
    pub steps: usize,
}

impl PathResult {
    pub fn completed(&self) -> bool {
        matches!(self.outcome, PathOutcome::Completed { .. })
    }

    pub fn t_end(&self) -> f64 {
        match &self.outcome {
            PathOutcome::Completed { t_end } => *t_end,
            PathOutcome::Stalled { t_stall, .. } => *t_stall,
        }
    }

    pub fn last(&self) -> &EvolutionPoint {
        self.trajectory.last().expect("trajectory is never empty")
    }
}

/// Marks edge types whose remaining edge fraction is at most `tau`.
pub fn freeze_exhausted_types(e: &[f64], tau: f64) -> Vec<bool> {
    e.iter().map(|&v| v <= tau).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fail {
    /// No degree-one supply the schedule may use.
    Stall,
    /// Point outside the unit box.
    Invalid,
}

#[derive(Debug, Clone)]
struct Eval {
    dxdt: Vec<f64>,
    gamma: Vec<f64>,
    supply: Vec<f64>,
    frozen: Vec<bool>,
}

struct Field<'a> {
    evo: &'a Evolution,
    eps: &'a [f64],
    schedule: &'a Schedule,
    ranking: Vec<usize>,
    /// Degree-one supply threshold, scaled by `nu(eps, 1)`.
    tau: f64,
    tau_edge: f64,
    /// Rate pulling sliding supplies back to their pinned level.
    relax: f64,
}

impl Field<'_> {
    fn eval(&self, x: &[f64]) -> Result<Eval, Fail> {
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Fail::Invalid);
        }
        let ne = x.len();
        let spec = self.evo.spec();
        let lambda = spec.lambda_unchecked(self.eps, x);
        let e = self.evo.edges(&lambda, x);
        let supply = self.evo.supply(self.eps, x);
        let frozen = freeze_exhausted_types(&e, self.tau_edge);
        let avail: Vec<bool> = (0..ne)
            .map(|i| !frozen[i] && supply[i] > self.tau)
            .collect();
        let gamma = match &self.schedule.kind {
            ScheduleKind::FixedPmf(p) => {
                if (0..ne).any(|i| p[i] > 0.0 && !avail[i]) {
                    return Err(Fail::Stall);
                }
                p.clone()
            }
            ScheduleKind::Natural => {
                if !avail.iter().any(|&a| a) {
                    return Err(Fail::Stall);
                }
                let w: Vec<f64> = (0..ne)
                    .map(|i| if frozen[i] { 0.0 } else { supply[i].max(0.0) })
                    .collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|v| v / total).collect()
            }
            _ => self.sliding_gamma(x, &e, &supply, &frozen, avail)?,
        };
        let dxdt = (0..ne)
            .map(|i| {
                if gamma[i] > 0.0 {
                    -x[i] * gamma[i] / e[i]
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Eval {
            dxdt,
            gamma,
            supply,
            frozen,
        })
    }

    /// Schedule pmf when some preferred types are out of degree-one checks.
    /// Such a type is peeled at exactly the rate that keeps its supply
    /// pinned near zero; the rest of the mass follows the schedule over the
    /// available types.
    fn sliding_gamma(
        &self,
        x: &[f64],
        e: &[f64],
        supply: &[f64],
        frozen: &[bool],
        mut base: Vec<bool>,
    ) -> Result<Vec<f64>, Fail> {
        let ne = x.len();
        let priority = matches!(self.schedule.kind, ScheduleKind::FixedPriority(_));
        let prefers = |i: usize| match &self.schedule.kind {
            ScheduleKind::CustomWeights(w) => w[i] > 0.0,
            _ => true,
        };
        let pin = -SLIDE_DEPTH * self.evo.spec().nu_total_unchecked(self.eps, x);
        let mut excluded = vec![false; ne];
        let mut b: Option<Vec<Vec<f64>>> = None;
        for _ in 0..4 * ne + 4 {
            let pi = self
                .schedule
                .pmf_over(&base, supply, e)
                .ok_or(Fail::Stall)?;
            let candidate = |i: usize| !frozen[i] && !base[i] && !excluded[i] && prefers(i);
            let z: Vec<usize> = if priority {
                self.ranking
                    .iter()
                    .copied()
                    .take_while(|&i| !base[i])
                    .filter(|&i| candidate(i))
                    .collect()
            } else {
                (0..ne).filter(|&i| candidate(i)).collect()
            };
            if z.is_empty() {
                return Ok(pi);
            }
            // b[i][k]: rate at which peeling type k drains the type-i supply
            let b = b.get_or_insert_with(|| {
                let jac = self.evo.supply_jacobian_unchecked(self.eps, x);
                jac.iter()
                    .map(|row| {
                        (0..ne)
                            .map(|k| if frozen[k] { 0.0 } else { row[k] * x[k] / e[k] })
                            .collect()
                    })
                    .collect()
            });
            let b_pi: Vec<f64> = b
                .iter()
                .map(|row| row.iter().zip(&pi).map(|(a, p)| a * p).sum())
                .collect();
            // growth rate each pinned supply should have
            let target: Vec<f64> = z.iter().map(|&j| self.relax * (pin - supply[j])).collect();
            let mut changed = false;
            for (r, &j) in z.iter().enumerate() {
                if -b_pi[j] <= target[r] {
                    // the base schedule alone keeps it dry
                    excluded[j] = true;
                    changed = true;
                } else if -b[j][j] >= target[r] {
                    // it fills up even when peeled exclusively
                    base[j] = true;
                    changed = true;
                }
            }
            if changed {
                continue;
            }
            let n = z.len();
            let m = DMatrix::from_fn(n, n, |r, c| b[z[r]][z[c]] - b_pi[z[r]]);
            let rhs = DVector::from_fn(n, |r, _| -target[r] - b_pi[z[r]]);
            let Some(g) = m.lu().solve(&rhs) else {
                excluded[*z.last().unwrap()] = true;
                continue;
            };
            if g.iter().any(|v| *v < 0.0) {
                for (r, v) in g.iter().enumerate() {
                    if *v < 0.0 {
                        excluded[z[r]] = true;
                    }
                }
                continue;
            }
            let total: f64 = g.iter().sum();
            if priority {
                if total > 1.0 {
                    base[*z.last().unwrap()] = true;
                    continue;
                }
            } else {
                // share type j would get if it were available, given the
                // other pinned types; gamma is continuous across this cap
                let cap = |r: usize| -> f64 {
                    let mut with = base.clone();
                    with[z[r]] = true;
                    let share = self
                        .schedule
                        .pmf_over(&with, supply, e)
                        .map_or(0.0, |p| p[z[r]]);
                    (1.0 - (total - g[r])) * share
                };
                let over: Vec<usize> = (0..n).filter(|&r| g[r] > cap(r)).collect();
                if !over.is_empty() {
                    for r in over {
                        base[z[r]] = true;
                    }
                    continue;
                }
            }
            let mut gamma: Vec<f64> = pi.iter().map(|p| p * (1.0 - total)).collect();
            for (r, &i) in z.iter().enumerate() {
                gamma[i] += g[r];
            }
            return Ok(gamma);
        }
        Err(Fail::Stall)
    }

    fn rk4(&self, x: &[f64], f0: &Eval, h: f64) -> Result<Vec<f64>, Fail> {
        let shift = |k: &[f64], s: f64| -> Vec<f64> {
            x.iter().zip(k).map(|(a, b)| (a + s * b).min(1.0)).collect()
        };
        let k1 = &f0.dxdt;
        let k2 = self.eval(&shift(k1, 0.5 * h))?.dxdt;
        let k3 = self.eval(&shift(&k2, 0.5 * h))?.dxdt;
        let k4 = self.eval(&shift(&k3, h))?.dxdt;
        Ok((0..x.len())
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    /// One step-doubled RK4 step: the two-half-step result, its field, and
    /// the error estimate.
    fn attempt(&self, x: &[f64], f0: &Eval, h: f64) -> Result<(Vec<f64>, Eval, f64), Fail> {
        let full = self.rk4(x, f0, h)?;
        let mid = self.rk4(x, f0, 0.5 * h)?;
        let f_mid = self.eval(&mid)?;
        let end = self.rk4(&mid, &f_mid, 0.5 * h)?;
        let f_end = self.eval(&end)?;
        let err = full
            .iter()
            .zip(&end)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / 15.0;
        Ok((end, f_end, err))
    }

    /// Largest fraction of the step `h` that can be taken before the supply
    /// runs out, to within `1e-6`.
    fn localize(&self, x: &[f64], f0: &Eval, h: f64) -> (f64, Vec<f64>, Eval) {
        let ok = |theta: f64| -> Option<(Vec<f64>, Eval)> {
            let y = self.rk4(x, f0, theta * h).ok()?;
            let f = self.eval(&y).ok()?;
            Some((y, f))
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = (x.to_vec(), f0.clone());
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            match ok(mid) {
                Some(state) => {
                    lo = mid;
                    best = state;
                }
                None => hi = mid,
            }
        }
        (lo * h, best.0, best.1)
    }

    fn strict_violation(&self, f: &Eval) -> bool {
        (0..f.supply.len()).any(|i| !f.frozen[i] && f.supply[i] <= self.tau)
    }
}

fn grid_times(grid: &OutputGrid, t_f: f64) -> Vec<f64> {
    let mut times: Vec<f64> = match grid {
        OutputGrid::Resolution(n) => (1..=*n).map(|k| t_f * k as f64 / *n as f64).collect(),
        OutputGrid::Uniform(dt) => (1..)
            .map(|k| k as f64 * dt)
            .take_while(|t| *t <= t_f)
            .collect(),
        OutputGrid::Times(v) => v
            .iter()
            .copied()
            .filter(|t| *t > 0.0 && *t <= t_f)
            .collect(),
        OutputGrid::EndpointsOnly => Vec::new(),
    };
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Integrates `dx_i/dt = -x_i gamma_i / e_i` from `x = 1` under `schedule`
/// until the residual graph is empty or the degree-one supply runs out.
pub fn integrate_path(
    evo: &Evolution,
    eps: &ErasureVector,
    schedule: &Schedule,
    control: &StepControl,
) -> Result<PathResult, PathError> {
    let ne = evo.spec().ne();
    schedule.validate(ne)?;
    if !schedule.is_reasonable() && !control.allow_unreasonable {
        return Err(PathError::Unreasonable(schedule.to_string()));
    }
    control.validate()?;
    let ones = vec![1.0; ne];
    let nu0 = evo.nu_total(eps, &ones)?;
    let t_f = nu0 / evo.dv_avg();
    let point = |t: f64, x: &[f64], gamma: Vec<f64>| evo.point(t, eps, x, gamma);
    if nu0 <= 0.0 {
        return Ok(PathResult {
            trajectory: vec![point(0.0, &ones, vec![0.0; ne])?],
            outcome: PathOutcome::Completed { t_end: 0.0 },
            t_f: 0.0,
            nu0,
            steps: 0,
        });
    }
    let h_max = control.max_step_frac * t_f;
    let h_min = control.min_step_frac * t_f;
    let field = Field {
        evo,
        eps: eps.as_slice(),
        schedule,
        ranking: schedule.ranking(ne),
        tau: schedule.tau_pos * nu0,
        tau_edge: schedule.tau_pos,
        relax: 0.5 / h_max,
    };
    let grid = grid_times(&control.grid, t_f);
    let stalled = |t: f64, x: Vec<f64>| PathOutcome::Stalled {
        t_stall: t,
        x_stall: x,
    };

    let mut x = ones;
    let mut t = 0.0;
    let mut f0 = match field.eval(&x) {
        Ok(f) => f,
        Err(_) => {
            return Ok(PathResult {
                trajectory: vec![point(0.0, &x, vec![0.0; ne])?],
                outcome: stalled(0.0, x),
                t_f,
                nu0,
                steps: 0,
            })
        }
    };
    let mut trajectory = vec![point(0.0, &x, f0.gamma.clone())?];
    let mut h = h_max;
    let mut next = 0;
    let mut steps = 0;
    let finish = |mut trajectory: Vec<EvolutionPoint>,
                  t: f64,
                  x: &[f64],
                  gamma: Vec<f64>,
                  outcome: PathOutcome,
                  steps: usize|
     -> Result<PathResult, PathError> {
        if trajectory.last().is_some_and(|p| p.t < t) {
            trajectory.push(point(t, x, gamma)?);
        }
        Ok(PathResult {
            trajectory,
            outcome,
            t_f,
            nu0,
            steps,
        })
    };

    loop {
        let nu = evo.spec().nu_total_unchecked(eps.as_slice(), &x);
        if nu <= control.exit_tol * nu0 {
            let gamma = f0.gamma.clone();
            return finish(
                trajectory,
                t,
                &x,
                gamma,
                PathOutcome::Completed { t_end: t },
                steps,
            );
        }
        if steps >= control.max_steps {
            return Err(PathError::StepUnderflow { t, h, x });
        }
        while next < grid.len() && grid[next] <= t {
            next += 1;
        }
        let (h_try, target) = match grid.get(next) {
            Some(&g) if t + h >= g => (g - t, Some(g)),
            _ => (h, None),
        };
        match field.attempt(&x, &f0, h_try) {
            // An edge type running out is a one-off switch in the field;
            // once the step is this small, step across it.
            Ok((x_new, f_new, err))
                if err <= control.tol || (h_try <= h_max * 1e-9 && f_new.frozen != f0.frozen) =>
            {
                steps += 1;
                t = target.unwrap_or(t + h_try);
                x = x_new;
                f0 = f_new;
                if control.strict_per_type && field.strict_violation(&f0) {
                    let outcome = stalled(t, x.clone());
                    let gamma = f0.gamma.clone();
                    return finish(trajectory, t, &x, gamma, outcome, steps);
                }
                if target.is_some() {
                    trajectory.push(point(t, &x, f0.gamma.clone())?);
                }
                if h_try >= h {
                    let grow = if err > 0.0 {
                        (0.9 * (control.tol / err).powf(0.2)).clamp(1.0, 2.0)
                    } else {
                        2.0
                    };
                    h = (h * grow).min(h_max);
                }
            }
            Ok(_) | Err(Fail::Invalid) => {
                h = 0.5 * h_try;
                if h < h_min {
                    return Err(PathError::StepUnderflow { t, h, x });
                }
            }
            Err(Fail::Stall) if h_try > h_max / 64.0 => h = 0.5 * h_try,
            Err(Fail::Stall) => {
                let (dt, x_stall, f_stall) = field.localize(&x, &f0, h_try);
                let t_stall = t + dt;
                // supply and residual graph ran out together
                let nu = evo.spec().nu_total_unchecked(eps.as_slice(), &x_stall);
                let outcome = if nu <= control.exit_tol * nu0 {
                    PathOutcome::Completed { t_end: t_stall }
                } else {
                    stalled(t_stall, x_stall.clone())
                };
                return finish(trajectory, t_stall, &x_stall, f_stall.gamma, outcome, steps);
            }
        }
    }
}
